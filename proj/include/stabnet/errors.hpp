#pragma once

#include <stdexcept>
#include <string>

namespace stabnet {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// parameter/config problems, file I/O, file content, and numeric blowups
// are distinct failure classes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace stabnet
