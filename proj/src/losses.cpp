#include "stabnet/losses.hpp"

#include <cmath>
#include <string>

#include "stabnet/errors.hpp"

namespace stabnet {

namespace {

constexpr double kLogClamp = 1e-12;

}  // namespace

void LossWeights::validate() const {
    if (!(std::isfinite(lambda1) && lambda1 >= 0.0 && std::isfinite(lambda2) && lambda2 >= 0.0)) {
        throw ParameterError("loss weights must be finite and >= 0, got lambda1=" +
                             std::to_string(lambda1) + " lambda2=" + std::to_string(lambda2));
    }
}

PredictionStack PredictionStack::from_rows(const std::vector<Tensor>& rows) {
    PredictionStack s;
    s.n = static_cast<int>(rows.size());
    if (s.n == 0) throw ParameterError("prediction stack needs at least one pass");
    s.C = static_cast<int>(rows[0].numel());
    s.probs.reserve(static_cast<std::size_t>(s.n) * s.C);
    for (const Tensor& r : rows) {
        if (static_cast<int>(r.numel()) != s.C) {
            throw DimensionError("prediction stack rows disagree on class count");
        }
        s.probs.insert(s.probs.end(), r.vec().begin(), r.vec().end());
    }
    return s;
}

void PredictionStack::validate() const {
    if (n < 2) throw ParameterError("prediction stack needs n >= 2 passes, got " + std::to_string(n));
    if (C < 2) throw ParameterError("prediction stack needs C >= 2 classes, got " + std::to_string(C));
    for (int j = 0; j < n; ++j) {
        double sum = 0.0;
        for (int k = 0; k < C; ++k) {
            const float v = at(j, k);
            if (!std::isfinite(v)) throw NumericError("non-finite prediction value");
            if (v < 0.0f || v > 1.0f) {
                throw ParameterError("prediction entry outside [0,1]: " + std::to_string(v));
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-4) {
            throw ParameterError("prediction row " + std::to_string(j) +
                                 " does not sum to 1 (sum=" + std::to_string(sum) + ")");
        }
    }
}

double ts_loss(const PredictionStack& stack, bool normalize_pairs) {
    if (stack.n < 2) {
        throw ParameterError("ts_loss needs n >= 2 passes, got " + std::to_string(stack.n));
    }
    double total = 0.0;
    for (int j = 0; j < stack.n - 1; ++j) {
        for (int k = j + 1; k < stack.n; ++k) {
            double d2 = 0.0;
            for (int c = 0; c < stack.C; ++c) {
                const double d = static_cast<double>(stack.at(j, c)) - stack.at(k, c);
                d2 += d * d;
            }
            total += d2;
        }
    }
    if (normalize_pairs) total /= static_cast<double>(stack.n) * (stack.n - 1) / 2.0;
    return total;
}

void ts_loss_backward(const PredictionStack& stack, double upstream, float* grad,
                      bool normalize_pairs) {
    if (stack.n < 2) {
        throw ParameterError("ts_loss needs n >= 2 passes, got " + std::to_string(stack.n));
    }
    double scale = upstream;
    if (normalize_pairs) scale /= static_cast<double>(stack.n) * (stack.n - 1) / 2.0;
    // column sums give d/df^j = 2 (n f^j - sum_k f^k)
    std::vector<double> colsum(static_cast<std::size_t>(stack.C), 0.0);
    for (int j = 0; j < stack.n; ++j) {
        for (int c = 0; c < stack.C; ++c) colsum[static_cast<std::size_t>(c)] += stack.at(j, c);
    }
    for (int j = 0; j < stack.n; ++j) {
        for (int c = 0; c < stack.C; ++c) {
            const double g =
                2.0 * (stack.n * static_cast<double>(stack.at(j, c)) - colsum[static_cast<std::size_t>(c)]);
            grad[static_cast<std::size_t>(j) * stack.C + c] += static_cast<float>(scale * g);
        }
    }
}

double me_loss(const PredictionStack& stack) {
    double total = 0.0;
    for (int j = 0; j < stack.n; ++j) {
        double pass = 0.0;
        for (int k = 0; k < stack.C; ++k) {
            double prod = 1.0;
            for (int l = 0; l < stack.C; ++l) {
                if (l != k) prod *= 1.0 - static_cast<double>(stack.at(j, l));
            }
            pass += static_cast<double>(stack.at(j, k)) * prod;
        }
        total += -pass;
    }
    return total;
}

void me_loss_backward(const PredictionStack& stack, double upstream, float* grad) {
    // d/df_m [-sum_k f_k prod_{l!=k}(1-f_l)] =
    //   -prod_{l!=m}(1-f_l) + sum_{k!=m} f_k prod_{l!=k,m}(1-f_l)
    // Products expanded directly; exact at the one-hot vertices.
    for (int j = 0; j < stack.n; ++j) {
        for (int m = 0; m < stack.C; ++m) {
            double prod_m = 1.0;
            for (int l = 0; l < stack.C; ++l) {
                if (l != m) prod_m *= 1.0 - static_cast<double>(stack.at(j, l));
            }
            double cross = 0.0;
            for (int k = 0; k < stack.C; ++k) {
                if (k == m) continue;
                double prod = 1.0;
                for (int l = 0; l < stack.C; ++l) {
                    if (l != k && l != m) prod *= 1.0 - static_cast<double>(stack.at(j, l));
                }
                cross += static_cast<double>(stack.at(j, k)) * prod;
            }
            grad[static_cast<std::size_t>(j) * stack.C + m] +=
                static_cast<float>(upstream * (-prod_m + cross));
        }
    }
}

double combined_unsup_loss(const PredictionStack& stack, const LossWeights& w,
                           bool normalize_pairs) {
    w.validate();
    return w.lambda1 * me_loss(stack) + w.lambda2 * ts_loss(stack, normalize_pairs);
}

void combined_unsup_loss_backward(const PredictionStack& stack, const LossWeights& w,
                                  double upstream, float* grad, bool normalize_pairs) {
    w.validate();
    if (w.lambda1 != 0.0) me_loss_backward(stack, upstream * w.lambda1, grad);
    if (w.lambda2 != 0.0) ts_loss_backward(stack, upstream * w.lambda2, grad, normalize_pairs);
}

double cross_entropy(const float* pred, int C, int label) {
    if (label < 0 || label >= C) {
        throw ParameterError("cross_entropy: label " + std::to_string(label) +
                             " out of range for C=" + std::to_string(C));
    }
    return -std::log(std::max(static_cast<double>(pred[label]), kLogClamp));
}

void cross_entropy_backward(const float* pred, int C, int label, double upstream, float* grad) {
    if (label < 0 || label >= C) {
        throw ParameterError("cross_entropy: label " + std::to_string(label) +
                             " out of range for C=" + std::to_string(C));
    }
    const double p = static_cast<double>(pred[label]);
    if (p > kLogClamp) {
        grad[label] += static_cast<float>(upstream * (-1.0 / p));
    }
    // below the clamp the implemented value is constant, so the gradient is 0
}

namespace {

struct BatchTerms {
    double sup = 0.0;
    double ts_mean = 0.0;
    double me_mean = 0.0;
    int labeled_rows = 0;
};

PredictionStack group_stack(const Tensor& preds, int group, int n, int C) {
    PredictionStack s;
    s.n = n;
    s.C = C;
    const float* base = preds.data() + static_cast<std::size_t>(group) * n * C;
    s.probs.assign(base, base + static_cast<std::size_t>(n) * C);
    return s;
}

void check_layout(const Tensor& preds, const GroupLayout& layout) {
    if (preds.dims() != 2) {
        throw DimensionError("batch objective expects [B,C] predictions, got " + preds.shape_str());
    }
    if (layout.n < 1 || layout.groups() < 1) {
        throw ParameterError("batch objective needs at least one group with n >= 1");
    }
    if (preds.dim(0) != layout.rows()) {
        throw ParameterError("batch-construction error: " + std::to_string(preds.dim(0)) +
                             " prediction rows cannot be grouped as " +
                             std::to_string(layout.groups()) + " groups of " +
                             std::to_string(layout.n));
    }
    const int C = preds.dim(1);
    for (int g = 0; g < layout.groups(); ++g) {
        if (layout.labels[static_cast<std::size_t>(g)] >= C) {
            throw ParameterError("group label " +
                                 std::to_string(layout.labels[static_cast<std::size_t>(g)]) +
                                 " out of range for C=" + std::to_string(C));
        }
    }
    // rows must be probability vectors (post-softmax)
    for (int r = 0; r < preds.dim(0); ++r) {
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            const float v = preds.at(r, c);
            if (!std::isfinite(v)) throw NumericError("non-finite prediction in loss forward");
            if (v < 0.0f || v > 1.0f) {
                throw ParameterError("prediction row " + std::to_string(r) +
                                     " is not a probability vector");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-3) {
            throw ParameterError("prediction row " + std::to_string(r) +
                                 " does not sum to 1 (sum=" + std::to_string(sum) + ")");
        }
    }
}

BatchTerms forward_terms(const Tensor& preds, const GroupLayout& layout, bool with_unsup,
                         bool normalize_pairs) {
    const int C = preds.dim(1);
    BatchTerms t;
    double sup_sum = 0.0;
    double ts_sum = 0.0;
    double me_sum = 0.0;
    for (int g = 0; g < layout.groups(); ++g) {
        const int label = layout.labels[static_cast<std::size_t>(g)];
        if (label >= 0) {
            for (int j = 0; j < layout.n; ++j) {
                const int row = g * layout.n + j;
                sup_sum += cross_entropy(preds.data() + static_cast<std::size_t>(row) * C, C, label);
                ++t.labeled_rows;
            }
        }
        if (with_unsup && layout.n >= 2) {
            const PredictionStack s = group_stack(preds, g, layout.n, C);
            ts_sum += ts_loss(s, normalize_pairs);
            me_sum += me_loss(s);
        }
    }
    t.sup = t.labeled_rows > 0 ? sup_sum / t.labeled_rows : 0.0;
    t.ts_mean = ts_sum / layout.groups();
    t.me_mean = me_sum / layout.groups();
    return t;
}

ad::Var objective_node(ad::Tape& tape, ad::Var preds, const GroupLayout& layout,
                       const LossWeights& w, bool with_unsup, bool normalize_pairs,
                       ObjectiveParts* parts) {
    w.validate();
    const Tensor& pv = tape.value(preds);
    check_layout(pv, layout);
    const int C = pv.dim(1);

    const BatchTerms terms = forward_terms(pv, layout, with_unsup, normalize_pairs);
    const bool use_me = with_unsup && w.lambda1 != 0.0;
    const bool use_ts = with_unsup && w.lambda2 != 0.0;
    const double objective = (use_me || use_ts)
                                 ? terms.sup + w.lambda1 * terms.me_mean + w.lambda2 * terms.ts_mean
                                 : terms.sup;
    if (!std::isfinite(objective)) {
        throw NumericError("non-finite batch objective");
    }
    if (parts) {
        parts->objective = objective;
        parts->sup = terms.sup;
        parts->ts_mean = terms.ts_mean;
        parts->me_mean = terms.me_mean;
    }

    const bool ng = tape.needs_grad(preds);
    ad::Var self = tape.push(Tensor::scalar(static_cast<float>(objective)), ng);
    if (ng) {
        const int labeled_rows = terms.labeled_rows;
        const int n = layout.n;
        const std::vector<int> labels = layout.labels;
        const LossWeights weights = w;
        tape.set_backward(self, [self, preds, labels, n, C, labeled_rows, weights, use_me, use_ts,
                                 normalize_pairs](ad::Tape& tp) {
            const double up = static_cast<double>(tp.grad_buffer(self)[0]);
            const Tensor& pv = tp.value(preds);
            Tensor& dp = tp.grad_buffer(preds);
            const int groups = static_cast<int>(labels.size());
            for (int g = 0; g < groups; ++g) {
                const int label = labels[static_cast<std::size_t>(g)];
                if (label >= 0 && labeled_rows > 0) {
                    const double ce_scale = up / labeled_rows;
                    for (int j = 0; j < n; ++j) {
                        const std::size_t row = static_cast<std::size_t>(g) * n + j;
                        cross_entropy_backward(pv.data() + row * C, C, label, ce_scale,
                                               dp.data() + row * C);
                    }
                }
                if ((use_me || use_ts) && n >= 2) {
                    const PredictionStack s = group_stack(pv, g, n, C);
                    float* gbase = dp.data() + static_cast<std::size_t>(g) * n * C;
                    if (use_me) me_loss_backward(s, up * weights.lambda1 / groups, gbase);
                    if (use_ts) {
                        ts_loss_backward(s, up * weights.lambda2 / groups, gbase, normalize_pairs);
                    }
                }
            }
        });
    }
    return self;
}

}  // namespace

ad::Var batch_objective(ad::Tape& tape, ad::Var preds, const GroupLayout& layout,
                        const LossWeights& w, bool normalize_pairs, ObjectiveParts* parts) {
    return objective_node(tape, preds, layout, w, /*with_unsup=*/true, normalize_pairs, parts);
}

ad::Var supervised_objective(ad::Tape& tape, ad::Var preds, const GroupLayout& layout,
                             ObjectiveParts* parts) {
    LossWeights zero;
    zero.lambda1 = 0.0;
    zero.lambda2 = 0.0;
    return objective_node(tape, preds, layout, zero, /*with_unsup=*/false, false, parts);
}

}  // namespace stabnet
