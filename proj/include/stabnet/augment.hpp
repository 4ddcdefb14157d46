#pragma once

#include <optional>
#include <vector>

#include "stabnet/rng.hpp"
#include "stabnet/tensor.hpp"

namespace stabnet {

/// The per-replica random input transform. A disabled spec is the exact
/// identity so runs without augmentation route all stochasticity to the
/// network's dropout/pooling layers.
struct TransformSpec {
    bool enabled = false;
    double max_rotation_deg = 0.0;
    bool hflip = false;
    std::optional<std::pair<int, int>> crop_to;  // (h, w), must fit the input

    static TransformSpec identity() { return TransformSpec{}; }
};

/// Applies in order: rotation by an angle drawn uniformly from
/// [-max_rotation_deg, +max_rotation_deg] (bilinear, zero fill), horizontal
/// flip with probability 0.5 if hflip, then crop at a uniformly random
/// anchor. Disabled specs return the input bit-identically.
Tensor apply_transform(const Tensor& x, const TransformSpec& spec, RngStream& rng);

/// n independent draws of apply_transform on the same sample. With a
/// disabled spec this is n bit-identical copies.
std::vector<Tensor> replicate_with_transforms(const Tensor& x, int n, const TransformSpec& spec,
                                              RngStream& rng);

}  // namespace stabnet
