#include "stabnet/tensor.hpp"

// Tensor is header-only today; this TU anchors the target and keeps a home
// for out-of-line helpers if the type grows.
