#include "stabnet/layers.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stabnet/errors.hpp"
#include "stabnet/kernels.hpp"

namespace stabnet {

void LayerSpec::validate(int index) const {
    const std::string at = "layer " + std::to_string(index);
    switch (kind) {
        case LayerKind::conv:
            if (out_channels < 1 || kernel < 1 || stride < 1 || pad < 0) {
                throw ConfigError(at + " (conv): bad parameters");
            }
            break;
        case LayerKind::fc:
            if (units < 1) throw ConfigError(at + " (fc): units must be >= 1");
            break;
        case LayerKind::dropout:
            if (dropout_p >= 1.0) {
                throw ConfigError(at + " (dropout): p must be < 1, got " +
                                  std::to_string(dropout_p));
            }
            break;
        case LayerKind::randpool:
            if (pool_window < 2) {
                throw ConfigError(at + " (randpool): window must be >= 2");
            }
            if (pool_stride < 1) {
                throw ConfigError(at + " (randpool): stride must be >= 1");
            }
            break;
        case LayerKind::relu:
        case LayerKind::softmax:
            break;
    }
}

std::string LayerSpec::header_line() const {
    std::ostringstream os;
    switch (kind) {
        case LayerKind::conv:
            os << "conv " << out_channels << " " << kernel << " " << stride << " " << pad;
            break;
        case LayerKind::fc:
            os << "fc " << units;
            break;
        case LayerKind::relu:
            os << "relu";
            break;
        case LayerKind::dropout:
            os << "dropout " << dropout_p;
            break;
        case LayerKind::randpool:
            os << "randpool " << pool_window << " " << pool_stride;
            break;
        case LayerKind::softmax:
            os << "softmax";
            break;
    }
    return os.str();
}

LayerSpec LayerSpec::from_header_line(const std::string& line) {
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    LayerSpec s;
    if (kind == "conv") {
        s.kind = LayerKind::conv;
        is >> s.out_channels >> s.kernel >> s.stride >> s.pad;
    } else if (kind == "fc") {
        s.kind = LayerKind::fc;
        is >> s.units;
    } else if (kind == "relu") {
        s.kind = LayerKind::relu;
    } else if (kind == "dropout") {
        s.kind = LayerKind::dropout;
        is >> s.dropout_p;
    } else if (kind == "randpool") {
        s.kind = LayerKind::randpool;
        is >> s.pool_window >> s.pool_stride;
    } else if (kind == "softmax") {
        s.kind = LayerKind::softmax;
    } else {
        throw ParseError("unknown layer kind in checkpoint header: " + line);
    }
    if (is.fail()) throw ParseError("malformed layer header line: " + line);
    return s;
}

namespace {

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("architecture: bad integer '" + s + "' in " + what);
    }
}

LayerSpec parse_token(const std::string& token) {
    LayerSpec s;
    const std::size_t colon = token.find(':');
    const std::string head = token.substr(0, colon);
    const std::string args = colon == std::string::npos ? "" : token.substr(colon + 1);

    if (head == "relu") {
        s.kind = LayerKind::relu;
    } else if (head == "softmax") {
        s.kind = LayerKind::softmax;
    } else if (head == "dropout") {
        s.kind = LayerKind::dropout;
        if (!args.empty()) {
            try {
                s.dropout_p = std::stod(args);
            } catch (const std::exception&) {
                throw ConfigError("architecture: bad dropout probability '" + args + "'");
            }
        }
    } else if (head == "fc") {
        s.kind = LayerKind::fc;
        s.units = parse_int(args, "fc");
    } else if (head == "randpool") {
        s.kind = LayerKind::randpool;
        const std::size_t slash = args.find('/');
        if (slash == std::string::npos) {
            throw ConfigError("architecture: randpool needs <window>/<stride>, got '" + token +
                              "'");
        }
        s.pool_window = parse_int(args.substr(0, slash), "randpool window");
        s.pool_stride = parse_int(args.substr(slash + 1), "randpool stride");
    } else if (head == "conv") {
        s.kind = LayerKind::conv;
        // <out>x<k>[s<stride>][p<pad>]
        const std::size_t x = args.find('x');
        if (x == std::string::npos) {
            throw ConfigError("architecture: conv needs <out>x<kernel>, got '" + token + "'");
        }
        s.out_channels = parse_int(args.substr(0, x), "conv channels");
        const std::string rest = args.substr(x + 1);
        std::size_t i = 0;
        while (i < rest.size() && std::isdigit(static_cast<unsigned char>(rest[i]))) ++i;
        s.kernel = parse_int(rest.substr(0, i), "conv kernel");
        while (i < rest.size()) {
            const char tag = rest[i++];
            std::size_t j = i;
            while (j < rest.size() && std::isdigit(static_cast<unsigned char>(rest[j]))) ++j;
            const int v = parse_int(rest.substr(i, j - i), "conv suffix");
            if (tag == 's') {
                s.stride = v;
            } else if (tag == 'p') {
                s.pad = v;
            } else {
                throw ConfigError("architecture: unrecognized conv suffix in '" + token + "'");
            }
            i = j;
        }
    } else {
        throw ConfigError("architecture: unknown layer '" + token + "'");
    }
    return s;
}

}  // namespace

std::vector<LayerSpec> parse_architecture(const std::string& text) {
    std::vector<LayerSpec> specs;
    std::string token;
    std::istringstream is(text);
    while (std::getline(is, token, ',')) {
        // trim
        const auto b = token.find_first_not_of(" \t");
        const auto e = token.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        specs.push_back(parse_token(token.substr(b, e - b + 1)));
    }
    if (specs.empty()) throw ConfigError("architecture: empty layer list");
    return specs;
}

std::string architecture_string(const std::vector<LayerSpec>& specs) {
    std::ostringstream os;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i) os << ",";
        const LayerSpec& s = specs[i];
        switch (s.kind) {
            case LayerKind::conv:
                os << "conv:" << s.out_channels << "x" << s.kernel;
                if (s.stride != 1) os << "s" << s.stride;
                if (s.pad != 0) os << "p" << s.pad;
                break;
            case LayerKind::fc:
                os << "fc:" << s.units;
                break;
            case LayerKind::relu:
                os << "relu";
                break;
            case LayerKind::dropout:
                os << "dropout:" << s.dropout_p;
                break;
            case LayerKind::randpool:
                os << "randpool:" << s.pool_window << "/" << s.pool_stride;
                break;
            case LayerKind::softmax:
                os << "softmax";
                break;
        }
    }
    return os.str();
}

// ---------------------------------------------------------------------------

Network::Network(std::vector<LayerSpec> specs, std::vector<int> input_shape,
                 std::uint64_t master_seed, double dropout_ramp_first, double dropout_ramp_last)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape)) {
    if (specs_.empty() || specs_.back().kind != LayerKind::softmax) {
        throw ConfigError("network must end in a softmax layer");
    }

    // Dropout ratios ramp from the first dropout layer to the last; explicit
    // per-layer values in the spec override the ramp. A single dropout layer
    // takes the ramp's last value.
    std::vector<std::size_t> ramped;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (specs_[i].kind == LayerKind::dropout && specs_[i].dropout_p < 0.0) ramped.push_back(i);
    }
    for (std::size_t r = 0; r < ramped.size(); ++r) {
        const double t =
            ramped.size() == 1 ? 1.0 : static_cast<double>(r) / (ramped.size() - 1);
        specs_[ramped[r]].dropout_p =
            dropout_ramp_first + t * (dropout_ramp_last - dropout_ramp_first);
    }

    for (std::size_t i = 0; i < specs_.size(); ++i) specs_[i].validate(static_cast<int>(i));

    infer_shapes();
    init_weights(master_seed);
    reseed_streams(master_seed);
}

void Network::infer_shapes() {
    std::vector<int> cur = input_shape_;
    out_shapes_.clear();
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        const std::string at = "layer " + std::to_string(i);
        switch (s.kind) {
            case LayerKind::conv: {
                if (cur.size() != 3) {
                    throw ConfigError(at + " (conv): needs [C,H,W] input, got " +
                                      Tensor::shape_string(cur));
                }
                const auto d = kernels::conv2d_dims(1, cur[0], cur[1], cur[2], s.out_channels,
                                                    s.kernel, s.kernel, s.stride, s.pad);
                cur = {s.out_channels, d.oh, d.ow};
                break;
            }
            case LayerKind::randpool: {
                if (cur.size() != 3) {
                    throw ConfigError(at + " (randpool): needs [C,H,W] input, got " +
                                      Tensor::shape_string(cur));
                }
                if (s.pool_window > cur[1] || s.pool_window > cur[2]) {
                    throw ConfigError(at + " (randpool): window exceeds input " +
                                      Tensor::shape_string(cur));
                }
                cur = {cur[0], (cur[1] - s.pool_window) / s.pool_stride + 1,
                       (cur[2] - s.pool_window) / s.pool_stride + 1};
                break;
            }
            case LayerKind::fc: {
                int flat = 1;
                for (const int d : cur) flat *= d;
                cur = {s.units};
                (void)flat;
                break;
            }
            case LayerKind::relu:
            case LayerKind::dropout:
                break;
            case LayerKind::softmax: {
                if (cur.size() != 1 || cur[0] < 2) {
                    throw ConfigError(at + " (softmax): needs a flat [C>=2] input, got " +
                                      Tensor::shape_string(cur));
                }
                break;
            }
        }
        out_shapes_.push_back(cur);
    }
    classes_ = cur[0];
}

void Network::init_weights(std::uint64_t master_seed) {
    RngStream init = derive_stream(master_seed, "init");
    params_.clear();
    param_offset_.assign(specs_.size(), -1);

    std::vector<int> cur = input_shape_;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        if (s.kind == LayerKind::conv) {
            const int cin = cur[0];
            const int fan_in = cin * s.kernel * s.kernel;
            const float bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(fan_in)));
            Tensor w({s.out_channels, cin, s.kernel, s.kernel});
            for (std::size_t j = 0; j < w.numel(); ++j) {
                w[j] = static_cast<float>(init.uniform(-bound, bound));
            }
            param_offset_[i] = static_cast<int>(params_.size());
            params_.push_back(std::move(w));
            params_.push_back(Tensor::zeros({s.out_channels}));
        } else if (s.kind == LayerKind::fc) {
            int flat = 1;
            for (const int d : cur) flat *= d;
            const float bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(flat)));
            Tensor w({flat, s.units});
            for (std::size_t j = 0; j < w.numel(); ++j) {
                w[j] = static_cast<float>(init.uniform(-bound, bound));
            }
            param_offset_[i] = static_cast<int>(params_.size());
            params_.push_back(std::move(w));
            params_.push_back(Tensor::zeros({s.units}));
        }
        cur = out_shapes_[i];
    }
}

void Network::reseed_streams(std::uint64_t master_seed) {
    streams_.assign(specs_.size(), RngStream());
    int dropout_ordinal = 0;
    int pool_ordinal = 0;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (specs_[i].kind == LayerKind::dropout) {
            streams_[i] = derive_stream(master_seed, "dropout",
                                        static_cast<std::uint64_t>(dropout_ordinal++));
        } else if (specs_[i].kind == LayerKind::randpool) {
            streams_[i] =
                derive_stream(master_seed, "pool", static_cast<std::uint64_t>(pool_ordinal++));
        }
    }
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.numel();
    return n;
}

ad::Var Network::forward(ad::Tape& tape, ad::Var x, StochasticMode mode) {
    const bool stochastic = mode == StochasticMode::stochastic;
    ad::Var cur = x;
    std::vector<ad::Var> param_vars(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        param_vars[i] = tape.leaf(params_[i], /*requires_grad=*/true);
    }

    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        const Tensor& v = tape.value(cur);
        switch (s.kind) {
            case LayerKind::conv: {
                if (v.dims() != 4) {
                    throw ConfigError("layer " + std::to_string(i) +
                                      " (conv): needs a 4-d batch, got " + v.shape_str());
                }
                const int off = param_offset_[i];
                cur = ad::conv2d(tape, cur, param_vars[static_cast<std::size_t>(off)], s.stride,
                                 s.pad);
                cur = ad::bias_channels(tape, cur, param_vars[static_cast<std::size_t>(off) + 1]);
                break;
            }
            case LayerKind::fc: {
                if (v.dims() != 2) {
                    int flat = 1;
                    for (int d = 1; d < v.dims(); ++d) flat *= v.dim(d);
                    cur = ad::reshape(tape, cur, {v.dim(0), flat});
                }
                const int off = param_offset_[i];
                cur = ad::matmul(tape, cur, param_vars[static_cast<std::size_t>(off)]);
                cur = ad::bias_rows(tape, cur, param_vars[static_cast<std::size_t>(off) + 1]);
                break;
            }
            case LayerKind::relu:
                cur = ad::relu(tape, cur);
                break;
            case LayerKind::dropout:
                cur = ad::dropout(tape, cur, specs_[i].dropout_p, stochastic, streams_[i]);
                break;
            case LayerKind::randpool:
                cur = ad::randpool(tape, cur, s.pool_window, s.pool_stride, stochastic,
                                   streams_[i]);
                break;
            case LayerKind::softmax:
                cur = ad::softmax(tape, cur);
                break;
        }
    }
    return cur;
}

Tensor Network::predict(const Tensor& x, StochasticMode mode) {
    ad::Tape tape;
    ad::Var in = tape.leaf(x, /*requires_grad=*/false);
    const ad::Var out = forward(tape, in, mode);
    return tape.value(out);
}

Tensor Network::stack_batch(const std::vector<const Tensor*>& samples) const {
    if (samples.empty()) throw ParameterError("stack_batch: empty batch");
    const std::size_t per = samples[0]->numel();
    std::vector<int> shape;
    if (input_shape_.size() == 3) {
        shape = {static_cast<int>(samples.size()), input_shape_[0], input_shape_[1],
                 input_shape_[2]};
    } else {
        int flat = 1;
        for (const int d : input_shape_) flat *= d;
        shape = {static_cast<int>(samples.size()), flat};
    }
    Tensor out(shape);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->numel() != per) {
            throw DimensionError("stack_batch: samples disagree on shape");
        }
        std::copy(samples[i]->vec().begin(), samples[i]->vec().end(),
                  out.vec().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint format: magic line, input shape, layer header lines, then
// little-endian f32 weight blocks per layer in declaration order.

namespace {

constexpr const char* kMagic = "SSLCKPT1";

void write_f32_le(std::ostream& os, float v) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                 static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    os.write(b, 4);
}

float read_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw ParseError("truncated weights");
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                               (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace

void Network::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os << kMagic << "\n";
    os << "input";
    for (const int d : input_shape_) os << " " << d;
    os << "\n";
    os << "layers " << specs_.size() << "\n";
    for (const LayerSpec& s : specs_) os << s.header_line() << "\n";
    os << "weights " << param_count() << "\n";
    for (const Tensor& p : params_) {
        for (std::size_t i = 0; i < p.numel(); ++i) write_f32_le(os, p[i]);
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

Network Network::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("truncated header");
    if (line != kMagic) throw ParseError("wrong magic in checkpoint: expected " +
                                         std::string(kMagic));
    if (!std::getline(is, line)) throw ParseError("truncated header");
    std::istringstream in_line(line);
    std::string tag;
    in_line >> tag;
    if (tag != "input") throw ParseError("checkpoint header missing input shape");
    std::vector<int> input_shape;
    int d;
    while (in_line >> d) input_shape.push_back(d);
    if (input_shape.empty()) throw ParseError("checkpoint header missing input shape");

    if (!std::getline(is, line)) throw ParseError("truncated header");
    std::istringstream layers_line(line);
    std::size_t layer_count = 0;
    layers_line >> tag >> layer_count;
    if (tag != "layers" || layers_line.fail()) {
        throw ParseError("checkpoint header missing layer count");
    }
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i < layer_count; ++i) {
        if (!std::getline(is, line)) throw ParseError("truncated header");
        specs.push_back(LayerSpec::from_header_line(line));
    }

    if (!std::getline(is, line)) throw ParseError("truncated header");
    std::istringstream wline(line);
    std::size_t weight_count = 0;
    wline >> tag >> weight_count;
    if (tag != "weights" || wline.fail()) throw ParseError("checkpoint header missing weights count");

    Network net(std::move(specs), std::move(input_shape), /*master_seed=*/0);
    if (net.param_count() != weight_count) throw ParseError("truncated weights");
    for (Tensor& p : net.params_) {
        for (std::size_t i = 0; i < p.numel(); ++i) p[i] = read_f32_le(is);
    }
    return net;
}

}  // namespace stabnet
