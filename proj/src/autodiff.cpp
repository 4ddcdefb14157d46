#include "stabnet/autodiff.hpp"

#include <cmath>
#include <utility>

#include "stabnet/errors.hpp"
#include "stabnet/kernels.hpp"

namespace stabnet::ad {

namespace {

void axpy(Tensor& y, const Tensor& x, float alpha) {
    float* yd = y.data();
    const float* xd = x.data();
    const std::size_t n = y.numel();
    for (std::size_t i = 0; i < n; ++i) yd[i] += alpha * xd[i];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

}  // namespace

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size()) {
        throw ParameterError("invalid tape handle");
    }
    return nodes_[static_cast<std::size_t>(v.idx)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size()) {
        throw ParameterError("invalid tape handle");
    }
    return nodes_[static_cast<std::size_t>(v.idx)];
}

Var Tape::leaf(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad); }

Var Tape::push(Tensor value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_backward(Var v, std::function<void(Tape&)> fn) {
    node(v).backward = std::move(fn);
}

double Tape::scalar(Var v) const {
    const Tensor& t = node(v).value;
    if (t.numel() != 1) {
        throw DimensionError("expected scalar tensor, got shape " + t.shape_str());
    }
    return static_cast<double>(t[0]);
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.needs_grad) throw ParameterError("gradient requested for a node that does not need it");
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v); }

void Tape::accumulate(Var v, const Tensor& g, float s) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    Tensor& buf = grad_buffer(v);
    require_same_shape(buf, g, "accumulate");
    if (s == 1.0f) {
        axpy(buf, g, 1.0f);
    } else {
        axpy(buf, g, s);
    }
}

void Tape::backward(Var output) {
    Node& out = node(output);
    if (out.value.numel() != 1) {
        throw ParameterError("backward requires a scalar output, got shape " +
                             out.value.shape_str());
    }
    if (!out.needs_grad) return;
    grad_buffer(output)[0] = 1.0f;  // d out / d out
    for (int i = output.idx; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        // Nodes with no accumulated gradient are off the path to the output.
        if (!n.needs_grad || n.grad.numel() == 0 || !n.backward) continue;
        n.backward(*this);
    }
}

// ---------------------------------------------------------------------------
// elementwise suite

Var add(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "add");
    Tensor out = t.value(a);
    axpy(out, t.value(b), 1.0f);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, a, b](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            tp.accumulate(a, g);
            tp.accumulate(b, g);
        });
    }
    return self;
}

Var sub(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "sub");
    Tensor out = t.value(a);
    axpy(out, t.value(b), -1.0f);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, a, b](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            tp.accumulate(a, g);
            tp.accumulate(b, g, -1.0f);
        });
    }
    return self;
}

Var mul(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "mul");
    Tensor out = t.value(a);
    {
        const float* bd = t.value(b).data();
        float* od = out.data();
        for (std::size_t i = 0; i < out.numel(); ++i) od[i] *= bd[i];
    }
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, a, b](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            if (tp.needs_grad(a)) {
                Tensor da = g;
                const float* bd = tp.value(b).data();
                for (std::size_t i = 0; i < da.numel(); ++i) da[i] *= bd[i];
                tp.accumulate(a, da);
            }
            if (tp.needs_grad(b)) {
                Tensor db = g;
                const float* ad = tp.value(a).data();
                for (std::size_t i = 0; i < db.numel(); ++i) db[i] *= ad[i];
                tp.accumulate(b, db);
            }
        });
    }
    return self;
}

Var scale(Tape& t, Var a, float s) {
    Tensor out = t.value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    const bool ng = t.needs_grad(a);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, a, s](Tape& tp) {
            tp.accumulate(a, tp.grad_buffer(self), s);
        });
    }
    return self;
}

Var relu(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        if (out[i] < 0.0f) out[i] = 0.0f;
    }
    const bool ng = t.needs_grad(a);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, a](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& x = tp.value(a);
            Tensor da = g;
            for (std::size_t i = 0; i < da.numel(); ++i) {
                if (x[i] <= 0.0f) da[i] = 0.0f;
            }
            tp.accumulate(a, da);
        });
    }
    return self;
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.dims() != 2 || bv.dims() != 2 || av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: inner dimensions mismatch " + av.shape_str() + " x " +
                             bv.shape_str());
    }
    const int m = av.dim(0), k = av.dim(1), p = bv.dim(1);
    Tensor out({m, p});
    kernels::matmul_nn(av.data(), bv.data(), out.data(), m, k, p);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, a, b, m, k, p](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            if (tp.needs_grad(a)) {
                // da += g * b^T
                kernels::matmul_nt(g.data(), tp.value(b).data(), tp.grad_buffer(a).data(), m, p, k,
                                   /*accumulate=*/true);
            }
            if (tp.needs_grad(b)) {
                // db += a^T * g
                kernels::matmul_tn(tp.value(a).data(), g.data(), tp.grad_buffer(b).data(), m, k, p,
                                   /*accumulate=*/true);
            }
        });
    }
    return self;
}

Var conv2d(Tape& t, Var x, Var kernel, int stride, int pad) {
    const Tensor& xv = t.value(x);
    const Tensor& kv = t.value(kernel);
    if (xv.dims() != 4 || kv.dims() != 4) {
        throw DimensionError("conv2d: expected 4-d input and kernel, got " + xv.shape_str() +
                             " and " + kv.shape_str());
    }
    if (xv.dim(1) != kv.dim(1)) {
        throw DimensionError("conv2d: channel mismatch, input " + xv.shape_str() + " kernel " +
                             kv.shape_str());
    }
    const auto d = kernels::conv2d_dims(xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0),
                                        kv.dim(2), kv.dim(3), stride, pad);
    Tensor out({d.batch, d.cout, d.oh, d.ow});

    const bool ng = t.needs_grad(x) || t.needs_grad(kernel);
    // im2col buffer retained only when the kernel gradient will be needed
    auto cols = std::make_shared<std::vector<float>>();
    float* cols_ptr = nullptr;
    if (t.needs_grad(kernel)) {
        cols->assign(static_cast<std::size_t>(d.batch) * d.patch() * d.positions(), 0.0f);
        cols_ptr = cols->data();
    }
    kernels::conv2d_forward(xv.data(), kv.data(), out.data(), d, cols_ptr);

    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, x, kernel, d, cols](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            if (tp.needs_grad(kernel)) {
                kernels::conv2d_backward_kernel(cols->data(), g.data(),
                                                tp.grad_buffer(kernel).data(), d);
            }
            if (tp.needs_grad(x)) {
                kernels::conv2d_backward_input(tp.value(kernel).data(), g.data(),
                                               tp.grad_buffer(x).data(), d);
            }
        });
    }
    return self;
}

Var bias_rows(Tape& t, Var x, Var bias) {
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(bias);
    if (xv.dims() != 2 || bv.dims() != 1 || bv.dim(0) != xv.dim(1)) {
        throw DimensionError("bias_rows: shape mismatch " + xv.shape_str() + " + " +
                             bv.shape_str());
    }
    const int rows = xv.dim(0), cols = xv.dim(1);
    Tensor out = xv;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out.at(i, j) += bv[static_cast<std::size_t>(j)];
    }
    const bool ng = t.needs_grad(x) || t.needs_grad(bias);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, x, bias, rows, cols](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            tp.accumulate(x, g);
            if (tp.needs_grad(bias)) {
                Tensor& db = tp.grad_buffer(bias);
                for (int j = 0; j < cols; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < rows; ++i) acc += g.at(i, j);
                    db[static_cast<std::size_t>(j)] += static_cast<float>(acc);
                }
            }
        });
    }
    return self;
}

Var bias_channels(Tape& t, Var x, Var bias) {
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(bias);
    if (xv.dims() != 4 || bv.dims() != 1 || bv.dim(0) != xv.dim(1)) {
        throw DimensionError("bias_channels: shape mismatch " + xv.shape_str() + " + " +
                             bv.shape_str());
    }
    const int b = xv.dim(0), c = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out = xv;
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            float* p = out.data() + (static_cast<std::size_t>(bi) * c + ci) * plane;
            const float bc = bv[static_cast<std::size_t>(ci)];
            for (std::size_t i = 0; i < plane; ++i) p[i] += bc;
        }
    }
    const bool ng = t.needs_grad(x) || t.needs_grad(bias);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, x, bias, b, c, plane](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            tp.accumulate(x, g);
            if (tp.needs_grad(bias)) {
                Tensor& db = tp.grad_buffer(bias);
                for (int ci = 0; ci < c; ++ci) {
                    double acc = 0.0;
                    for (int bi = 0; bi < b; ++bi) {
                        const float* p = g.data() + (static_cast<std::size_t>(bi) * c + ci) * plane;
                        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                    }
                    db[static_cast<std::size_t>(ci)] += static_cast<float>(acc);
                }
            }
        });
    }
    return self;
}

Var reshape(Tape& t, Var x, std::vector<int> shape) {
    const Tensor& xv = t.value(x);
    if (Tensor::numel_of(shape) != xv.numel()) {
        throw DimensionError("reshape: cannot view " + xv.shape_str() + " as " +
                             Tensor::shape_string(shape));
    }
    Tensor out(shape, xv.vec());
    const bool ng = t.needs_grad(x);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, x](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            Tensor back(tp.value(x).shape(), g.vec());
            tp.accumulate(x, back);
        });
    }
    return self;
}

Var softmax(Tape& t, Var logits) {
    const Tensor& xv = t.value(logits);
    if (xv.dims() != 2 || xv.dim(1) < 2) {
        throw DimensionError("softmax: expected [B,C] with C >= 2, got " + xv.shape_str());
    }
    const int b = xv.dim(0), c = xv.dim(1);
    Tensor out({b, c});
    for (int i = 0; i < b; ++i) {
        float mx = xv.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, xv.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(xv.at(i, j) - mx));
        for (int j = 0; j < c; ++j) {
            out.at(i, j) =
                static_cast<float>(std::exp(static_cast<double>(xv.at(i, j) - mx)) / denom);
        }
    }
    const bool ng = t.needs_grad(logits);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, logits, b, c](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& y = tp.value(self);
            Tensor dx({b, c});
            for (int i = 0; i < b; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) {
                    dot += static_cast<double>(g.at(i, j)) * static_cast<double>(y.at(i, j));
                }
                for (int j = 0; j < c; ++j) {
                    dx.at(i, j) = static_cast<float>(
                        static_cast<double>(y.at(i, j)) *
                        (static_cast<double>(g.at(i, j)) - dot));
                }
            }
            tp.accumulate(logits, dx);
        });
    }
    return self;
}

// ---------------------------------------------------------------------------
// reductions (64-bit accumulation)

namespace {

Var reduction(Tape& t, Var a, double value, float per_element_grad_scale) {
    const bool ng = t.needs_grad(a);
    Var self = t.push(Tensor::scalar(static_cast<float>(value)), ng);
    if (ng) {
        t.set_backward(self, [self, a, per_element_grad_scale](Tape& tp) {
            const float g = tp.grad_buffer(self)[0] * per_element_grad_scale;
            Tensor da = Tensor::full(tp.value(a).shape(), g);
            tp.accumulate(a, da);
        });
    }
    return self;
}

}  // namespace

Var sum(Tape& t, Var a) {
    const Tensor& av = t.value(a);
    double acc = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
    return reduction(t, a, acc, 1.0f);
}

Var mean(Tape& t, Var a) {
    const Tensor& av = t.value(a);
    double acc = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
    const double n = static_cast<double>(av.numel());
    return reduction(t, a, acc / n, static_cast<float>(1.0 / n));
}

Var sq_l2_norm(Tape& t, Var a) {
    const Tensor& av = t.value(a);
    double acc = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) {
        acc += static_cast<double>(av[i]) * static_cast<double>(av[i]);
    }
    const bool ng = t.needs_grad(a);
    Var self = t.push(Tensor::scalar(static_cast<float>(acc)), ng);
    if (ng) {
        t.set_backward(self, [self, a](Tape& tp) {
            const float g = tp.grad_buffer(self)[0];
            const Tensor& x = tp.value(a);
            Tensor da = x;
            for (std::size_t i = 0; i < da.numel(); ++i) da[i] *= 2.0f * g;
            tp.accumulate(a, da);
        });
    }
    return self;
}

// ---------------------------------------------------------------------------
// stochastic layers

Var dropout(Tape& t, Var x, double p, bool stochastic, RngStream& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ParameterError("dropout: probability must be in [0,1), got " + std::to_string(p));
    }
    const Tensor& xv = t.value(x);
    const bool ng = t.needs_grad(x);
    if (!stochastic) {
        Var self = t.push(xv, ng);
        if (ng) {
            t.set_backward(self, [self, x](Tape& tp) { tp.accumulate(x, tp.grad_buffer(self)); });
        }
        return self;
    }
    const float keep_scale = static_cast<float>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<float>>(xv.numel());
    Tensor out = xv;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        const float m = rng.bernoulli(p) ? 0.0f : keep_scale;
        (*mask)[i] = m;
        out[i] *= m;
    }
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, x, mask](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            Tensor da = g;
            for (std::size_t i = 0; i < da.numel(); ++i) da[i] *= (*mask)[i];
            tp.accumulate(x, da);
        });
    }
    return self;
}

Var randpool(Tape& t, Var x, int window, int stride, bool stochastic, RngStream& rng) {
    const Tensor& xv = t.value(x);
    if (xv.dims() != 4) {
        throw DimensionError("randpool: expected [B,C,H,W], got " + xv.shape_str());
    }
    const int b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (window > h || window > w) {
        throw DimensionError("randpool: window " + std::to_string(window) +
                             " exceeds input extent " + std::to_string(h) + "x" +
                             std::to_string(w));
    }
    if (stride < 1) throw ParameterError("randpool: stride must be >= 1");
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;

    Tensor out({b, c, oh, ow});
    // flat input index of each window's max, for gradient routing
    auto argmax = std::make_shared<std::vector<std::size_t>>(
        static_cast<std::size_t>(b) * c * oh * ow);

    for (int bi = 0; bi < b; ++bi) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                int ay = oy * stride;
                int ax = ox * stride;
                if (stochastic) {
                    // anchor jitter shared by all channels of this sample
                    const int dy = static_cast<int>(rng.uniform_int(0, stride - 1));
                    const int dx = static_cast<int>(rng.uniform_int(0, stride - 1));
                    ay = std::min(ay + dy, h - window);
                    ax = std::min(ax + dx, w - window);
                }
                for (int ci = 0; ci < c; ++ci) {
                    const std::size_t base =
                        (static_cast<std::size_t>(bi) * c + ci) * h * w;
                    float best = xv[base + static_cast<std::size_t>(ay) * w + ax];
                    std::size_t best_idx = base + static_cast<std::size_t>(ay) * w + ax;
                    for (int wy = 0; wy < window; ++wy) {
                        for (int wx = 0; wx < window; ++wx) {
                            const std::size_t idx =
                                base + static_cast<std::size_t>(ay + wy) * w + (ax + wx);
                            if (xv[idx] > best) {  // strict: first index wins ties
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.at(bi, ci, oy, ox) = best;
                    (*argmax)[((static_cast<std::size_t>(bi) * c + ci) * oh + oy) * ow + ox] =
                        best_idx;
                }
            }
        }
    }

    const bool ng = t.needs_grad(x);
    Var self = t.push(std::move(out), ng);
    if (ng) {
        t.set_backward(self, [self, x, argmax](Tape& tp) {
            const Tensor& g = tp.grad_buffer(self);
            Tensor& dx = tp.grad_buffer(x);
            for (std::size_t i = 0; i < g.numel(); ++i) dx[(*argmax)[i]] += g[i];
        });
    }
    return self;
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<double(const Tensor&)>& value,
                  const std::function<Tensor(const Tensor&)>& gradient, const Tensor& x,
                  double eps) {
    if (eps <= 0.0) throw ParameterError("grad_check: eps must be positive");
    const Tensor analytic = gradient(x);
    if (!analytic.same_shape(x)) {
        throw DimensionError("grad_check: gradient shape " + analytic.shape_str() +
                             " does not match input " + x.shape_str());
    }
    double max_rel = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float orig = x[i];
        const float hi = static_cast<float>(static_cast<double>(orig) + eps);
        const float lo = static_cast<float>(static_cast<double>(orig) - eps);
        probe[i] = hi;
        const double f_hi = value(probe);
        probe[i] = lo;
        const double f_lo = value(probe);
        probe[i] = orig;
        // divide by the realized float step, not 2*eps, to cancel storage
        // quantization of the probe point
        const double denom = static_cast<double>(hi) - static_cast<double>(lo);
        const double numeric = (f_hi - f_lo) / denom;
        const double a = static_cast<double>(analytic[i]);
        if (!std::isfinite(f_hi) || !std::isfinite(f_lo) || !std::isfinite(a)) {
            throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
        }
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace stabnet::ad
