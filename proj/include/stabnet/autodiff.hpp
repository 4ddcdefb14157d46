#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "stabnet/rng.hpp"
#include "stabnet/tensor.hpp"

namespace stabnet::ad {

/// Handle to a node on a Tape.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape. Rebuilt for every batch: ops append nodes, backward()
/// walks them in reverse creation order (parents always precede children).
/// Values are immutable once their producing op has written them.
class Tape {
public:
    Var leaf(Tensor value, bool requires_grad = false);

    const Tensor& value(Var v) const { return node(v).value; }
    double scalar(Var v) const;

    bool needs_grad(Var v) const { return node(v).needs_grad; }

    /// Gradient of the last backward() target w.r.t. v. Zero tensor if the
    /// node did not participate.
    const Tensor& grad(Var v);

    void backward(Var output);

    std::size_t size() const { return nodes_.size(); }

    // --- op-author surface ---
    Var push(Tensor value, bool needs_grad);
    void set_backward(Var v, std::function<void(Tape&)> fn);
    Tensor& grad_buffer(Var v);  // allocates zeros on first use
    bool grad_allocated(Var v) const { return node(v).grad.numel() > 0; }
    void accumulate(Var v, const Tensor& g, float scale = 1.0f);

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until first accumulation
        bool needs_grad = false;
        std::function<void(Tape&)> backward;
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    std::deque<Node> nodes_;
};

// Differentiable operation set. Every op defines its backward; gradients
// accumulate into participating parents.

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, float s);
Var relu(Tape& t, Var a);

Var matmul(Tape& t, Var a, Var b);

Var conv2d(Tape& t, Var x, Var kernel, int stride, int pad);

/// x: [B,F] plus bias [F] broadcast over rows.
Var bias_rows(Tape& t, Var x, Var bias);
/// x: [B,C,H,W] plus bias [C] broadcast over batch and space.
Var bias_channels(Tape& t, Var x, Var bias);

Var reshape(Tape& t, Var x, std::vector<int> shape);

/// Row-wise softmax with max-subtraction, [B,C] -> [B,C].
Var softmax(Tape& t, Var logits);

// Reductions accumulate in 64-bit.
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
Var sq_l2_norm(Tape& t, Var a);

/// Inverted dropout: units zeroed with probability p, survivors scaled by
/// 1/(1-p). Identity when stochastic=false. Mask drawn from rng and retained
/// for backward.
Var dropout(Tape& t, Var x, double p, bool stochastic, RngStream& rng);

/// Max pooling whose window anchors are jittered by a per-window offset in
/// {0..stride-1} (clamped to the boundary) when stochastic; zero jitter
/// otherwise. Jitter is shared across channels of one sample. Backward
/// routes to each window's argmax, first index on ties.
Var randpool(Tape& t, Var x, int window, int stride, bool stochastic, RngStream& rng);

/// Finite-difference gradient verification. value() must be deterministic
/// (freeze any rng it uses); both callbacks see the same perturbed inputs.
/// Returns max over coordinates of |analytic-numeric| / max(1e-8, |numeric|).
double grad_check(const std::function<double(const Tensor&)>& value,
                  const std::function<Tensor(const Tensor&)>& gradient, const Tensor& x,
                  double eps);

}  // namespace stabnet::ad
