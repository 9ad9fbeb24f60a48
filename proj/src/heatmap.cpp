#include "anchorloss/heatmap.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "anchorloss/errors.hpp"

namespace anchorloss {

namespace {

void check_dims(const Heatmap& a, const Heatmap& b, const char* where) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument(std::string(where) + ": dimension mismatch");
    }
    if (a.size() == 0) {
        throw std::invalid_argument(std::string(where) + ": empty heatmap");
    }
}

}  // namespace

EncodedTarget encode_gaussian(const KeypointAnnotation& keypoint,
                              std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) {
        throw std::invalid_argument("encode_gaussian: empty grid");
    }
    if (keypoint.sigma <= 0.0) {
        throw std::invalid_argument("encode_gaussian: sigma must be positive");
    }
    EncodedTarget out;
    out.heatmap = Heatmap(height, width, HeatmapRole::Target);
    const bool in_bounds = keypoint.x >= 0.0 && keypoint.x < static_cast<double>(width) &&
                           keypoint.y >= 0.0 && keypoint.y < static_cast<double>(height);
    if (!keypoint.visible || !in_bounds) {
        out.truncated = true;
        return out;
    }
    const double radius = kGaussianTruncationSigmas * keypoint.sigma;
    const double radius_sq = radius * radius;
    const double denom = 2.0 * keypoint.sigma * keypoint.sigma;
    for (std::size_t r = 0; r < height; ++r) {
        const double dy = static_cast<double>(r) - keypoint.y;
        for (std::size_t c = 0; c < width; ++c) {
            const double dx = static_cast<double>(c) - keypoint.x;
            const double dist_sq = dx * dx + dy * dy;
            if (dist_sq <= radius_sq) {
                out.heatmap.at(r, c) = std::exp(-dist_sq / denom);
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> background_mask(const Heatmap& target) {
    if (target.role != HeatmapRole::Target) {
        throw std::invalid_argument("background_mask: heatmap role must be target");
    }
    std::vector<std::uint8_t> mask(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        mask[i] = target.values[i] == 0.0 ? 1 : 0;
    }
    return mask;
}

std::optional<double> select_anchor(const Heatmap& target, const Heatmap& prediction,
                                    double threshold) {
    check_dims(target, prediction, "select_anchor");
    std::optional<double> anchor;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target.values[i] > threshold) {
            if (!anchor || prediction.values[i] > *anchor) {
                anchor = prediction.values[i];
            }
        }
    }
    return anchor;
}

LossResult pose_anchor_loss(const Heatmap& target, const Heatmap& prediction,
                            const PoseLossConfig& cfg) {
    return pose_anchor_loss_with_anchor(
        target, prediction, select_anchor(target, prediction, cfg.anchor_threshold),
        cfg);
}

LossResult pose_anchor_loss_with_anchor(const Heatmap& target, const Heatmap& prediction,
                                        std::optional<double> anchor,
                                        const PoseLossConfig& cfg) {
    check_dims(target, prediction, "pose_anchor_loss");
    LossResult result;
    result.per_class.resize(target.size());
    result.anchors_used.negative = anchor;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double p = target.values[i];
        double term = bce_term(p, prediction.values[i], cfg.floor);
        if (anchor && p == 0.0) {
            const double qc = clamp_probability(prediction.values[i], cfg.floor);
            const double base = std::max(0.0, 1.0 + qc - *anchor);
            term *= std::pow(base, cfg.gamma);
        }
        result.per_class[i] = term;
        result.value += term;
    }
    return result;
}

Vector pose_anchor_loss_gradient(const Heatmap& target, const Heatmap& prediction,
                                 const PoseLossConfig& cfg) {
    return pose_anchor_loss_gradient_with_anchor(
        target, prediction, select_anchor(target, prediction, cfg.anchor_threshold),
        cfg);
}

Vector pose_anchor_loss_gradient_with_anchor(const Heatmap& target,
                                             const Heatmap& prediction,
                                             std::optional<double> anchor,
                                             const PoseLossConfig& cfg) {
    check_dims(target, prediction, "pose_anchor_loss_gradient");
    Vector grad(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double p = target.values[i];
        const double qc = clamp_probability(prediction.values[i], cfg.floor);
        if (anchor && p == 0.0 && cfg.gamma != 0.0) {
            const double base = std::max(0.0, 1.0 + qc - *anchor);
            grad[i] = -std::pow(base, cfg.gamma - 1.0) *
                      (cfg.gamma * std::log(1.0 - qc) - base / (1.0 - qc));
        } else {
            grad[i] = bce_term_gradient(p, prediction.values[i], cfg.floor);
        }
    }
    return grad;
}

PixelLocation argmax_location(const Heatmap& prediction) {
    if (prediction.size() == 0) {
        throw std::invalid_argument("argmax_location: empty heatmap");
    }
    PixelLocation best{0, 0};
    double best_value = prediction.values[0];
    for (std::size_t r = 0; r < prediction.height; ++r) {
        for (std::size_t c = 0; c < prediction.width; ++c) {
            if (prediction.at(r, c) > best_value) {
                best_value = prediction.at(r, c);
                best = {c, r};
            }
        }
    }
    return best;
}

double pck(const std::vector<PredictedPoint>& predictions,
           const std::vector<KeypointAnnotation>& truths, double scale, double alpha) {
    if (predictions.size() != truths.size()) {
        throw std::invalid_argument("pck: point list length mismatch");
    }
    if (scale <= 0.0) {
        throw std::invalid_argument("pck: scale must be positive");
    }
    std::size_t visible = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (!truths[i].visible) continue;
        ++visible;
        const double dx = predictions[i].x - truths[i].x;
        const double dy = predictions[i].y - truths[i].y;
        if (std::sqrt(dx * dx + dy * dy) <= alpha * scale) {
            ++correct;
        }
    }
    if (visible == 0) return 0.0;
    return static_cast<double>(correct) / static_cast<double>(visible);
}

PeakStats peak_analysis(const Heatmap& prediction, double min_peak,
                        const KeypointAnnotation& truth, double radius) {
    if (min_peak <= 0.0 || min_peak >= 1.0) {
        throw std::invalid_argument("peak_analysis: min_peak must be in (0,1)");
    }
    if (prediction.size() == 0) {
        throw std::invalid_argument("peak_analysis: empty heatmap");
    }
    const auto h = static_cast<std::ptrdiff_t>(prediction.height);
    const auto w = static_cast<std::ptrdiff_t>(prediction.width);

    PeakStats stats;
    bool have_best = false;
    PixelLocation best{0, 0};
    double best_value = 0.0;
    for (std::ptrdiff_t r = 0; r < h; ++r) {
        for (std::ptrdiff_t c = 0; c < w; ++c) {
            const double v = prediction.at(r, c);
            if (v < min_peak) continue;
            bool is_peak = true;
            for (std::ptrdiff_t dr = -1; dr <= 1 && is_peak; ++dr) {
                for (std::ptrdiff_t dc = -1; dc <= 1 && is_peak; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const std::ptrdiff_t nr = r + dr;
                    const std::ptrdiff_t nc = c + dc;
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    if (prediction.at(nr, nc) >= v) is_peak = false;
                }
            }
            if (!is_peak) continue;
            ++stats.peak_count;
            if (!have_best || v > best_value) {
                have_best = true;
                best_value = v;
                best = {static_cast<std::size_t>(c), static_cast<std::size_t>(r)};
            }
        }
    }
    stats.is_double = stats.peak_count >= 2;
    if (have_best) {
        const double dx = static_cast<double>(best.x) - truth.x;
        const double dy = static_cast<double>(best.y) - truth.y;
        stats.nearest_peak_correct = std::sqrt(dx * dx + dy * dy) <= radius;
    }
    return stats;
}

std::string heatmap_to_csv(const Heatmap& heatmap) {
    std::ostringstream out;
    out << heatmap.height << "," << heatmap.width << "\n";
    char buf[32];
    for (std::size_t r = 0; r < heatmap.height; ++r) {
        for (std::size_t c = 0; c < heatmap.width; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", heatmap.at(r, c));
            out << buf << (c + 1 < heatmap.width ? "," : "");
        }
        out << "\n";
    }
    return out.str();
}

Heatmap heatmap_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("heatmap csv: missing header");
    }
    std::size_t height = 0, width = 0;
    char comma = 0;
    std::istringstream header(line);
    if (!(header >> height >> comma >> width) || comma != ',') {
        throw ParseError("heatmap csv: bad header '" + line + "'");
    }
    Heatmap heatmap(height, width);
    for (std::size_t r = 0; r < height; ++r) {
        if (!std::getline(in, line)) {
            throw ParseError("heatmap csv: missing row " + std::to_string(r));
        }
        std::istringstream row(line);
        std::string cell;
        for (std::size_t c = 0; c < width; ++c) {
            if (!std::getline(row, cell, ',')) {
                throw ParseError("heatmap csv: short row " + std::to_string(r));
            }
            heatmap.at(r, c) = std::stod(cell);
        }
    }
    return heatmap;
}

void write_heatmap_csv(const Heatmap& heatmap, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << heatmap_to_csv(heatmap);
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

Heatmap read_heatmap_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return heatmap_from_csv(buffer.str());
}

}  // namespace anchorloss
