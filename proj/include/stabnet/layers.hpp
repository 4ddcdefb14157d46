#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stabnet/autodiff.hpp"
#include "stabnet/rng.hpp"
#include "stabnet/tensor.hpp"

namespace stabnet {

enum class LayerKind { conv, fc, relu, dropout, randpool, softmax };

/// In stochastic mode dropout and randpool draw fresh randomness per pass;
/// in deterministic mode every layer is a pure function of input and weights.
enum class StochasticMode { deterministic, stochastic };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;

    int out_channels = 0;  // conv
    int kernel = 0;
    int stride = 1;
    int pad = 0;

    int units = 0;  // fc

    double dropout_p = -1.0;  // dropout; < 0 means "take from the ramp"

    int pool_window = 0;  // randpool
    int pool_stride = 0;

    void validate(int index) const;
    std::string header_line() const;                 // checkpoint header form
    static LayerSpec from_header_line(const std::string& line);
};

/// Parses the compact comma-separated architecture grammar:
///   conv:<out>x<k>[s<stride>][p<pad>] | fc:<units> | relu |
///   dropout[:<p>] | randpool:<window>/<stride> | softmax
std::vector<LayerSpec> parse_architecture(const std::string& text);

std::string architecture_string(const std::vector<LayerSpec>& specs);

/// Feed-forward network over a LayerSpec chain ending in softmax.
///
/// Stochastic layers own independent named rng streams (keyed by kind and
/// ordinal within that kind) so toggling one component never shifts the
/// draws of another. One instance is confined to one training thread.
class Network {
public:
    Network(std::vector<LayerSpec> specs, std::vector<int> input_shape, std::uint64_t master_seed,
            double dropout_ramp_first = 0.1, double dropout_ramp_last = 0.5);

    const std::vector<LayerSpec>& specs() const { return specs_; }
    const std::vector<int>& input_shape() const { return input_shape_; }
    int num_classes() const { return classes_; }

    /// Weight tensors in layer order (conv: kernel then bias; fc: matrix
    /// then bias). Mutated in place by the optimizer.
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    std::size_t param_count() const;

    /// x: [B, ...input shape] collapsed to 2-d or 4-d. Returns [B,C]
    /// probability rows.
    ad::Var forward(ad::Tape& tape, ad::Var x, StochasticMode mode);

    /// Convenience forward without gradient bookkeeping.
    Tensor predict(const Tensor& x, StochasticMode mode);

    void reseed_streams(std::uint64_t master_seed);
    std::vector<RngStream> snapshot_streams() const { return streams_; }
    void restore_streams(std::vector<RngStream> s) { streams_ = std::move(s); }

    void save_checkpoint(const std::string& path) const;
    static Network load_checkpoint(const std::string& path);

    /// Stacks B samples of input_shape into one batched tensor.
    Tensor stack_batch(const std::vector<const Tensor*>& samples) const;

private:
    void infer_shapes();
    void init_weights(std::uint64_t master_seed);

    std::vector<LayerSpec> specs_;
    std::vector<int> input_shape_;             // per-sample shape
    std::vector<std::vector<int>> out_shapes_; // per-layer per-sample output shape
    std::vector<Tensor> params_;
    std::vector<int> param_offset_;            // first param index per layer, -1 if none
    std::vector<RngStream> streams_;           // per layer; meaningful for stochastic kinds
    int classes_ = 0;
};

}  // namespace stabnet
