#pragma once

#include <cstdint>
#include <string>

#include "anchorloss/losses.hpp"

namespace anchorloss {

enum class HeatmapRole { Target, Prediction };

/// H x W grid of values in [0, 1], row-major.
struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;
    HeatmapRole role = HeatmapRole::Prediction;

    Heatmap() = default;
    Heatmap(std::size_t h, std::size_t w, HeatmapRole r = HeatmapRole::Prediction,
            double fill = 0.0)
        : height(h), width(w), values(h * w, fill), role(r) {}

    double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
    double& at(std::size_t row, std::size_t col) { return values[row * width + col]; }
    std::size_t size() const { return values.size(); }
};

struct KeypointAnnotation {
    double x = 0.0;  // sub-pixel column coordinate
    double y = 0.0;  // sub-pixel row coordinate
    bool visible = true;
    double sigma = 1.0;  // gaussian std in pixels
};

struct PoseLossConfig {
    double gamma = 2.0;  // pose sweep optimum
    double anchor_threshold = 0.5;
    double floor = kProbabilityFloor;
};

// Target gaussians are cut to exact zeros beyond this many sigmas so the
// background mask has support.
inline constexpr double kGaussianTruncationSigmas = 3.0;

struct EncodedTarget {
    Heatmap heatmap;
    bool truncated = false;  // center invisible or off the grid; heatmap is all zeros
};

/// Gaussian target heatmap: exp(-((x-cx)^2 + (y-cy)^2) / 2 sigma^2) within
/// 3 sigma of the center, exactly 0 outside.
EncodedTarget encode_gaussian(const KeypointAnnotation& keypoint,
                              std::size_t height, std::size_t width);

/// 1 where the target value is exactly 0 (true negative pixels), else 0.
std::vector<std::uint8_t> background_mask(const Heatmap& target);

/// Spatial anchor: max predicted value over pixels whose target value exceeds
/// the threshold. Empty candidate set (occluded/truncated keypoint) yields
/// nullopt; the caller falls back to plain BCE.
std::optional<double> select_anchor(const Heatmap& target, const Heatmap& prediction,
                                    double threshold = 0.5);

/// Per pixel: BCE(p, q) scaled by (1 + q - q*)^gamma where the background
/// mask is set, unscaled elsewhere; summed over pixels. q* is detached.
LossResult pose_anchor_loss(const Heatmap& target, const Heatmap& prediction,
                            const PoseLossConfig& cfg);

/// Same loss with the anchor supplied by the caller (nullopt = BCE fallback).
LossResult pose_anchor_loss_with_anchor(const Heatmap& target, const Heatmap& prediction,
                                        std::optional<double> anchor,
                                        const PoseLossConfig& cfg);

/// dL/dq per pixel with q* frozen.
Vector pose_anchor_loss_gradient(const Heatmap& target, const Heatmap& prediction,
                                 const PoseLossConfig& cfg);
Vector pose_anchor_loss_gradient_with_anchor(const Heatmap& target,
                                             const Heatmap& prediction,
                                             std::optional<double> anchor,
                                             const PoseLossConfig& cfg);

struct PixelLocation {
    std::size_t x = 0;
    std::size_t y = 0;
};

/// Location of the maximum value; ties resolve to the row-major first pixel.
PixelLocation argmax_location(const Heatmap& prediction);

struct PredictedPoint {
    double x = 0.0;
    double y = 0.0;
};

/// Fraction of visible keypoints whose prediction lies within alpha * scale
/// of the truth (closed interval). Invisible keypoints are excluded from both
/// numerator and denominator; an all-invisible list scores 0.
double pck(const std::vector<PredictedPoint>& predictions,
           const std::vector<KeypointAnnotation>& truths, double scale, double alpha);

struct PeakStats {
    std::size_t peak_count = 0;
    bool is_double = false;
    bool nearest_peak_correct = false;
};

/// Peaks are strict 8-neighborhood local maxima with value >= min_peak.
/// nearest_peak_correct: the highest peak lies within radius of the truth.
PeakStats peak_analysis(const Heatmap& prediction, double min_peak,
                        const KeypointAnnotation& truth, double radius);

// Flat CSV round-trip: first line "H,W", then one line per row.
std::string heatmap_to_csv(const Heatmap& heatmap);
Heatmap heatmap_from_csv(const std::string& text);
void write_heatmap_csv(const Heatmap& heatmap, const std::string& path);
Heatmap read_heatmap_csv(const std::string& path);

}  // namespace anchorloss
