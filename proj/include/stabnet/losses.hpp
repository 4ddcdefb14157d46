#pragma once

#include <vector>

#include "stabnet/autodiff.hpp"
#include "stabnet/tensor.hpp"

namespace stabnet {

/// Weights of the combined unsupervised objective:
/// lambda1 scales the mutual-exclusivity term, lambda2 the
/// transformation/stability term. Defaults are the values the experiments
/// fix them to.
struct LossWeights {
    double lambda1 = 0.1;
    double lambda2 = 1.0;

    void validate() const;
};

/// The n prediction vectors f^1..f^n produced by the stochastic passes of a
/// single sample's replica group. Row-major n x C.
struct PredictionStack {
    int n = 0;
    int C = 0;
    std::vector<float> probs;

    float at(int pass, int cls) const { return probs[static_cast<std::size_t>(pass) * C + cls]; }

    static PredictionStack from_rows(const std::vector<Tensor>& rows);

    /// Rows must be probability vectors: entries in [0,1], each row summing
    /// to 1 within float tolerance.
    void validate() const;
};

/// Transformation/stability loss: sum over all unordered pass pairs of the
/// squared L2 distance between their prediction vectors. Raw pair sum by
/// default; normalize_pairs divides by n(n-1)/2 so the weight becomes
/// independent of n.
double ts_loss(const PredictionStack& stack, bool normalize_pairs = false);

/// d ts / d f^j = 2 * sum_{k != j} (f^j - f^k), scaled by upstream and
/// accumulated into grad (n*C floats).
void ts_loss_backward(const PredictionStack& stack, double upstream, float* grad,
                      bool normalize_pairs = false);

/// Mutual-exclusivity loss: for each pass, -sum_k f_k * prod_{l != k} (1 - f_l).
/// Minimized exactly at one-hot vertices (value -1 per pass); pushes each
/// prediction vector away from degenerate flat solutions.
double me_loss(const PredictionStack& stack);

void me_loss_backward(const PredictionStack& stack, double upstream, float* grad);

double combined_unsup_loss(const PredictionStack& stack, const LossWeights& w,
                           bool normalize_pairs = false);

void combined_unsup_loss_backward(const PredictionStack& stack, const LossWeights& w,
                                  double upstream, float* grad, bool normalize_pairs = false);

/// -ln(pred[label]), with the log argument clamped below at 1e-12.
double cross_entropy(const float* pred, int C, int label);

void cross_entropy_backward(const float* pred, int C, int label, double upstream, float* grad);

/// How the rows of a batch prediction matrix are grouped into replica
/// groups: group g owns rows [g*n, (g+1)*n), labels[g] is the class index
/// or -1 for unlabeled groups.
struct GroupLayout {
    int n = 0;
    std::vector<int> labels;

    int groups() const { return static_cast<int>(labels.size()); }
    int rows() const { return groups() * n; }
};

struct ObjectiveParts {
    double objective = 0.0;
    double sup = 0.0;
    double ts_mean = 0.0;  // per-group mean of the raw ts term
    double me_mean = 0.0;  // per-group mean of the raw me term
};

/// Mini-batch training objective:
///   mean cross-entropy over all labeled replicas
///   + (1/G) * sum over all groups of (lambda1 * me + lambda2 * ts).
/// The unsupervised terms apply to labeled groups too. When a lambda is
/// zero, that term is skipped entirely in the backward pass (its metric
/// value is still reported via parts). Throws NumericError if the objective
/// is not finite.
ad::Var batch_objective(ad::Tape& tape, ad::Var preds, const GroupLayout& layout,
                        const LossWeights& w, bool normalize_pairs = false,
                        ObjectiveParts* parts = nullptr);

/// Mean cross-entropy over every row of preds; labels must cover all groups.
/// This is exactly the supervised part of batch_objective, exposed so a
/// supervised-only loop can be built without the unsupervised machinery.
ad::Var supervised_objective(ad::Tape& tape, ad::Var preds, const GroupLayout& layout,
                             ObjectiveParts* parts = nullptr);

}  // namespace stabnet
