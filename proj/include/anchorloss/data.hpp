#pragma once

#include <string>
#include <utility>

#include <json.hpp>

#include "anchorloss/heatmap.hpp"

namespace anchorloss {

struct ClassificationDataset {
    std::size_t num_classes = 0;
    std::size_t feature_dim = 0;
    std::vector<Vector> features;
    std::vector<std::size_t> labels;
    std::string tag = "all";

    std::size_t size() const { return features.size(); }
};

Vector one_hot(std::size_t label, std::size_t num_classes);

/// Grayscale image, values in [0, 1], row-major.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0.0) {}
    double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
    double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
};

struct PoseDataset {
    std::vector<Image> images;
    std::vector<std::vector<KeypointAnnotation>> annotations;  // N x K
    double keypoint_scale = 0.0;  // person-scale analog for PCK (= blob pair distance)
    double sigma = 1.0;
    std::string tag = "all";

    std::size_t size() const { return images.size(); }
    std::size_t num_keypoints() const {
        return annotations.empty() ? 0 : annotations.front().size();
    }
};

/// Gaussian clusters arranged in near-identical pairs: paired clusters sit at
/// distance (1 - confusion_overlap) * separation, unpaired >= 3 * separation.
/// 2 * pairs classes, 2-D features, deterministic per seed.
ClassificationDataset gen_confusable_blobs(std::uint64_t seed, std::size_t n_per_class,
                                           std::size_t pairs, double separation,
                                           double confusion_overlap);

/// Images with two identical gaussian bumps at random offsets; keypoint 0 is
/// the left bump and keypoint 1 the right. pair_distance must be >= 4 sigma.
PoseDataset gen_symmetric_keypoints(std::uint64_t seed, std::size_t n,
                                    std::size_t height, std::size_t width,
                                    double pair_distance, double sigma);

/// Horizontal flip with keypoint index swap (the left/right identity moves).
void hflip(Image& image, std::vector<KeypointAnnotation>& keypoints);

// CIFAR-10 binary: 3073-byte records, 1 label byte + 3x32x32 channel-major
// pixels. Pixels scale to [0,1] by /255; record order preserved.
ClassificationDataset parse_cifar10_binary(const std::string& path);
void write_cifar10_binary(const ClassificationDataset& dataset, const std::string& path);

struct IdxArray {
    std::vector<std::size_t> dims;
    std::vector<std::uint8_t> data;
};

// IDX: 0x0000 magic, type byte 0x08 (unsigned byte), big-endian dim sizes.
IdxArray parse_idx(const std::string& path);
void write_idx(const IdxArray& array, const std::string& path);

/// Seeded shuffle into disjoint, exhaustive (train, val) parts.
std::pair<ClassificationDataset, ClassificationDataset> split(
    const ClassificationDataset& dataset, double val_fraction, std::uint64_t seed);
std::pair<PoseDataset, PoseDataset> split(const PoseDataset& dataset,
                                          double val_fraction, std::uint64_t seed);

// Self-describing binary containers with a JSON sidecar (<path>.json) of
// generation parameters.
void save_dataset(const ClassificationDataset& dataset, const std::string& path,
                  const nlohmann::json& generation_params);
ClassificationDataset load_classification_dataset(const std::string& path);
void save_dataset(const PoseDataset& dataset, const std::string& path,
                  const nlohmann::json& generation_params);
PoseDataset load_pose_dataset(const std::string& path);

}  // namespace anchorloss
