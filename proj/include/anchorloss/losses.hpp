#pragma once

#include <optional>
#include <string>

#include "anchorloss/numerics.hpp"

namespace anchorloss {

// How the anchor probability q* is obtained from a prediction vector.
enum class AnchorMode {
    StaticValue,           // fixed q* for both terms
    DynamicTarget,         // q_neg = q_target - margin (background modulation)
    DynamicMaxBackground,  // q_pos = max background score (target modulation)
    DynamicBoth,           // both of the above
    FocalEquivalent,       // q* = 1 - p, reduces the loss to focal loss
};

std::string to_string(AnchorMode mode);

struct AnchorLossConfig {
    double gamma_target = 0.0;
    double gamma_background = 0.5;  // classification sweep optimum
    double margin = 0.05;           // delta; applies to dynamic target anchors only
    AnchorMode anchor_mode = AnchorMode::DynamicTarget;
    double static_anchor = 0.5;     // read only in StaticValue mode
    double floor = kProbabilityFloor;
};

/// Anchor values feeding the modulators. An absent side leaves that term as
/// plain cross entropy (modulator == 1). Anchors are values only: no
/// gradient flows through them even when they were read from the prediction.
struct AnchorProbabilities {
    std::optional<double> positive;  // scales the target-class term
    std::optional<double> negative;  // scales the background-class terms
};

struct LossResult {
    double value = 0.0;      // sum of per_class
    Vector per_class;        // class-wise (or pixel-wise) contributions
    AnchorProbabilities anchors_used;
};

/// Per-element binary cross entropy with a soft label p in [0,1];
/// q is clamped into [floor, 1-floor] before the logs.
double bce_term(double p, double q, double floor = kProbabilityFloor);

/// d bce_term / dq at clamped q.
double bce_term_gradient(double p, double q, double floor = kProbabilityFloor);

/// Sigmoid-binary cross entropy, summed over classes. Labels must be 0/1.
LossResult bce(const Vector& labels, const Vector& probs,
               double floor = kProbabilityFloor);
Vector bce_gradient(const Vector& labels, const Vector& probs,
                    double floor = kProbabilityFloor);

/// -log softmax(logits)[target]; labels must be one-hot.
LossResult softmax_ce(const Vector& onehot, const Vector& logits);

/// Focal loss: -[p (1-q)^g log q + (1-p) q^g log(1-q)] per class.
LossResult focal_loss(const Vector& labels, const Vector& probs, double gamma,
                      double floor = kProbabilityFloor);
Vector focal_loss_gradient(const Vector& labels, const Vector& probs, double gamma,
                           double floor = kProbabilityFloor);

/// Resolve the anchor probabilities for one sample. Dynamic modes require a
/// single-label vector; DynamicMaxBackground needs at least one background
/// class. Max ties resolve to the lowest index.
AnchorProbabilities anchor_probabilities(const Vector& labels, const Vector& probs,
                                         const AnchorLossConfig& cfg);

/// Anchor loss, generalized two-gamma form. Per class k:
///   -(1 - q_k + q_pos)^gt p_k log q_k  -  (1 + q_k - q_neg)^gb (1-p_k) log(1-q_k)
LossResult anchor_loss(const Vector& labels, const Vector& probs,
                       const AnchorLossConfig& cfg);
LossResult anchor_loss_with_anchors(const Vector& labels, const Vector& probs,
                                    const AnchorProbabilities& anchors,
                                    const AnchorLossConfig& cfg);

/// Closed-form dL/dq_k with the anchors treated as constants (detached),
/// matching the finite-difference oracle with anchors frozen.
Vector anchor_loss_gradient(const Vector& labels, const Vector& probs,
                            const AnchorLossConfig& cfg);
Vector anchor_loss_gradient_with_anchors(const Vector& labels, const Vector& probs,
                                         const AnchorProbabilities& anchors,
                                         const AnchorLossConfig& cfg);

/// Arithmetic mean of per-sample loss values. Throws on an empty batch.
double batch_reduce(const std::vector<LossResult>& losses);

}  // namespace anchorloss
