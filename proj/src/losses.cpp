#include "anchorloss/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace anchorloss {

namespace {

void check_pair(const Vector& labels, const Vector& probs, const char* where) {
    if (labels.size() != probs.size()) {
        throw std::invalid_argument(std::string(where) + ": length mismatch (" +
                                    std::to_string(labels.size()) + " labels vs " +
                                    std::to_string(probs.size()) + " probabilities)");
    }
    if (labels.empty()) {
        throw std::invalid_argument(std::string(where) + ": empty input");
    }
}

void check_binary_labels(const Vector& labels, const char* where) {
    for (double p : labels) {
        if (p != 0.0 && p != 1.0) {
            throw std::invalid_argument(std::string(where) + ": labels must be 0 or 1");
        }
    }
}

std::size_t single_label_index(const Vector& labels, const char* where) {
    std::size_t target = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1.0) {
            if (target != labels.size()) {
                throw std::invalid_argument(std::string(where) +
                                            ": single-label vector required");
            }
            target = i;
        }
    }
    if (target == labels.size()) {
        throw std::invalid_argument(std::string(where) +
                                    ": single-label vector required");
    }
    return target;
}

}  // namespace

std::string to_string(AnchorMode mode) {
    switch (mode) {
        case AnchorMode::StaticValue: return "static";
        case AnchorMode::DynamicTarget: return "dynamic_target";
        case AnchorMode::DynamicMaxBackground: return "dynamic_max_background";
        case AnchorMode::DynamicBoth: return "dynamic_both";
        case AnchorMode::FocalEquivalent: return "focal_equivalent";
    }
    return "unknown";
}

double bce_term(double p, double q, double floor) {
    const double qc = clamp_probability(q, floor);
    return -(p * std::log(qc) + (1.0 - p) * std::log(1.0 - qc));
}

double bce_term_gradient(double p, double q, double floor) {
    const double qc = clamp_probability(q, floor);
    return -p / qc + (1.0 - p) / (1.0 - qc);
}

LossResult bce(const Vector& labels, const Vector& probs, double floor) {
    check_pair(labels, probs, "bce");
    check_binary_labels(labels, "bce");
    LossResult result;
    result.per_class.resize(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        result.per_class[k] = bce_term(labels[k], probs[k], floor);
        result.value += result.per_class[k];
    }
    return result;
}

Vector bce_gradient(const Vector& labels, const Vector& probs, double floor) {
    check_pair(labels, probs, "bce");
    check_binary_labels(labels, "bce");
    Vector grad(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        grad[k] = bce_term_gradient(labels[k], probs[k], floor);
    }
    return grad;
}

LossResult softmax_ce(const Vector& onehot, const Vector& logits) {
    check_pair(onehot, logits, "softmax_ce");
    check_binary_labels(onehot, "softmax_ce");
    const std::size_t target = single_label_index(onehot, "softmax_ce");

    double max_logit = logits[0];
    for (double z : logits) max_logit = std::max(max_logit, z);
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - max_logit);

    LossResult result;
    result.per_class.assign(onehot.size(), 0.0);
    result.value = max_logit + std::log(sum) - logits[target];
    result.per_class[target] = result.value;
    return result;
}

LossResult focal_loss(const Vector& labels, const Vector& probs, double gamma,
                      double floor) {
    check_pair(labels, probs, "focal_loss");
    check_binary_labels(labels, "focal_loss");
    LossResult result;
    result.per_class.resize(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const double qc = clamp_probability(probs[k], floor);
        const double term = labels[k] == 1.0
                                ? -std::pow(1.0 - qc, gamma) * std::log(qc)
                                : -std::pow(qc, gamma) * std::log(1.0 - qc);
        result.per_class[k] = term;
        result.value += term;
    }
    return result;
}

Vector focal_loss_gradient(const Vector& labels, const Vector& probs, double gamma,
                           double floor) {
    check_pair(labels, probs, "focal_loss");
    check_binary_labels(labels, "focal_loss");
    Vector grad(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const double qc = clamp_probability(probs[k], floor);
        if (gamma == 0.0) {
            grad[k] = bce_term_gradient(labels[k], probs[k], floor);
        } else if (labels[k] == 1.0) {
            grad[k] = gamma * std::pow(1.0 - qc, gamma - 1.0) * std::log(qc) -
                      std::pow(1.0 - qc, gamma) / qc;
        } else {
            grad[k] = -gamma * std::pow(qc, gamma - 1.0) * std::log(1.0 - qc) +
                      std::pow(qc, gamma) / (1.0 - qc);
        }
    }
    return grad;
}

AnchorProbabilities anchor_probabilities(const Vector& labels, const Vector& probs,
                                         const AnchorLossConfig& cfg) {
    check_pair(labels, probs, "anchor_probabilities");
    check_binary_labels(labels, "anchor_probabilities");

    AnchorProbabilities anchors;
    switch (cfg.anchor_mode) {
        case AnchorMode::StaticValue:
            anchors.positive = cfg.static_anchor;
            anchors.negative = cfg.static_anchor;
            return anchors;
        case AnchorMode::FocalEquivalent:
            // q* = 1 - p: 0 for the target term, 1 for background terms.
            anchors.positive = 0.0;
            anchors.negative = 1.0;
            return anchors;
        case AnchorMode::DynamicTarget:
        case AnchorMode::DynamicMaxBackground:
        case AnchorMode::DynamicBoth:
            break;
    }

    const std::size_t target = single_label_index(labels, "anchor_probabilities");
    if (cfg.anchor_mode == AnchorMode::DynamicTarget ||
        cfg.anchor_mode == AnchorMode::DynamicBoth) {
        anchors.negative = probs[target] - cfg.margin;
    }
    if (cfg.anchor_mode == AnchorMode::DynamicMaxBackground ||
        cfg.anchor_mode == AnchorMode::DynamicBoth) {
        double best = -std::numeric_limits<double>::infinity();
        bool found = false;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == 0.0 && probs[i] > best) {  // strict: lowest index wins ties
                best = probs[i];
                found = true;
            }
        }
        if (!found) {
            throw std::invalid_argument("anchor_probabilities: no background class");
        }
        anchors.positive = best;
    }
    return anchors;
}

LossResult anchor_loss_with_anchors(const Vector& labels, const Vector& probs,
                                    const AnchorProbabilities& anchors,
                                    const AnchorLossConfig& cfg) {
    check_pair(labels, probs, "anchor_loss");
    check_binary_labels(labels, "anchor_loss");
    LossResult result;
    result.per_class.resize(labels.size());
    result.anchors_used = anchors;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const double qc = clamp_probability(probs[k], cfg.floor);
        double term;
        if (labels[k] == 1.0) {
            term = -std::log(qc);
            if (anchors.positive) {
                const double base = std::max(0.0, 1.0 - qc + *anchors.positive);
                term *= std::pow(base, cfg.gamma_target);
            }
        } else {
            term = -std::log(1.0 - qc);
            if (anchors.negative) {
                const double base = std::max(0.0, 1.0 + qc - *anchors.negative);
                term *= std::pow(base, cfg.gamma_background);
            }
        }
        result.per_class[k] = term;
        result.value += term;
    }
    return result;
}

LossResult anchor_loss(const Vector& labels, const Vector& probs,
                       const AnchorLossConfig& cfg) {
    return anchor_loss_with_anchors(labels, probs,
                                    anchor_probabilities(labels, probs, cfg), cfg);
}

Vector anchor_loss_gradient_with_anchors(const Vector& labels, const Vector& probs,
                                         const AnchorProbabilities& anchors,
                                         const AnchorLossConfig& cfg) {
    check_pair(labels, probs, "anchor_loss_gradient");
    check_binary_labels(labels, "anchor_loss_gradient");
    Vector grad(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const double qc = clamp_probability(probs[k], cfg.floor);
        if (labels[k] == 1.0) {
            if (anchors.positive && cfg.gamma_target != 0.0) {
                const double g = cfg.gamma_target;
                const double base = std::max(0.0, 1.0 - qc + *anchors.positive);
                // d/dq [-(1-q+q_pos)^g log q], base falls with q
                grad[k] = g * std::pow(base, g - 1.0) * std::log(qc) -
                          std::pow(base, g) / qc;
            } else {
                grad[k] = -1.0 / qc;
            }
        } else {
            if (anchors.negative && cfg.gamma_background != 0.0) {
                const double g = cfg.gamma_background;
                const double base = std::max(0.0, 1.0 + qc - *anchors.negative);
                // -(1+q-q_neg)^(g-1) [ g log(1-q) - (1+q-q_neg)/(1-q) ]
                grad[k] = -std::pow(base, g - 1.0) *
                          (g * std::log(1.0 - qc) - base / (1.0 - qc));
            } else {
                grad[k] = 1.0 / (1.0 - qc);
            }
        }
    }
    return grad;
}

Vector anchor_loss_gradient(const Vector& labels, const Vector& probs,
                            const AnchorLossConfig& cfg) {
    return anchor_loss_gradient_with_anchors(
        labels, probs, anchor_probabilities(labels, probs, cfg), cfg);
}

double batch_reduce(const std::vector<LossResult>& losses) {
    if (losses.empty()) {
        throw std::invalid_argument("batch_reduce: empty batch");
    }
    double sum = 0.0;
    for (const LossResult& loss : losses) {
        sum += loss.value;
    }
    return sum / static_cast<double>(losses.size());
}

}  // namespace anchorloss
