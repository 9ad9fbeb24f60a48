#include "anchorloss/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "anchorloss/errors.hpp"

namespace anchorloss {

namespace {

constexpr std::size_t kCifarRecordBytes = 3073;
constexpr std::size_t kCifarPixelBytes = 3072;

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& bytes, std::string name)
        : bytes_(bytes), name_(std::move(name)) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

    void expect_end() const {
        if (pos_ != bytes_.size()) {
            throw ParseError(name_ + ": trailing bytes after payload");
        }
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw ParseError(name_ + ": truncated at offset " + std::to_string(pos_));
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

std::vector<std::size_t> val_indices(std::size_t n, double val_fraction,
                                     std::uint64_t seed) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
        throw std::invalid_argument("split: val_fraction must be in (0,1)");
    }
    const auto n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(n)));
    if (n_val == 0 || n_val >= n) {
        throw std::invalid_argument("split: degenerate sizes (n=" + std::to_string(n) +
                                    ", n_val=" + std::to_string(n_val) + ")");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(n_val);
    return order;
}

}  // namespace

Vector one_hot(std::size_t label, std::size_t num_classes) {
    if (label >= num_classes) {
        throw std::invalid_argument("one_hot: label out of range");
    }
    Vector v(num_classes, 0.0);
    v[label] = 1.0;
    return v;
}

ClassificationDataset gen_confusable_blobs(std::uint64_t seed, std::size_t n_per_class,
                                           std::size_t pairs, double separation,
                                           double confusion_overlap) {
    if (n_per_class == 0 || pairs == 0) {
        throw std::invalid_argument("gen_confusable_blobs: empty dataset requested");
    }
    if (separation <= 0.0) {
        throw std::invalid_argument("gen_confusable_blobs: separation must be positive");
    }
    if (confusion_overlap < 0.0 || confusion_overlap >= 1.0) {
        throw std::invalid_argument("gen_confusable_blobs: confusion_overlap must be in [0,1)");
    }

    const double pair_gap = (1.0 - confusion_overlap) * separation;
    const double cluster_std = 0.05 * separation;

    ClassificationDataset ds;
    ds.num_classes = 2 * pairs;
    ds.feature_dim = 2;
    ds.tag = "all";

    Rng rng(seed);
    for (std::size_t pair = 0; pair < pairs; ++pair) {
        // Pair centers 4*separation apart, so unpaired clusters stay >= 3*separation.
        const double cx = 4.0 * separation *
                          (static_cast<double>(pair) - 0.5 * static_cast<double>(pairs - 1));
        for (std::size_t side = 0; side < 2; ++side) {
            const double centroid_x = cx + (side == 0 ? -0.5 : 0.5) * pair_gap;
            const std::size_t label = 2 * pair + side;
            for (std::size_t i = 0; i < n_per_class; ++i) {
                ds.features.push_back({centroid_x + rng.normal(0.0, cluster_std),
                                       rng.normal(0.0, cluster_std)});
                ds.labels.push_back(label);
            }
        }
    }
    return ds;
}

PoseDataset gen_symmetric_keypoints(std::uint64_t seed, std::size_t n,
                                    std::size_t height, std::size_t width,
                                    double pair_distance, double sigma) {
    if (n == 0 || height == 0 || width == 0) {
        throw std::invalid_argument("gen_symmetric_keypoints: empty dataset requested");
    }
    if (sigma <= 0.0) {
        throw std::invalid_argument("gen_symmetric_keypoints: sigma must be positive");
    }
    if (pair_distance < 4.0 * sigma) {
        throw std::invalid_argument(
            "gen_symmetric_keypoints: pair_distance must be >= 4 sigma");
    }

    const double margin = kGaussianTruncationSigmas * sigma;
    const double x_lo = margin + 0.5 * pair_distance;
    const double x_hi = static_cast<double>(width - 1) - margin - 0.5 * pair_distance;
    const double y_lo = margin;
    const double y_hi = static_cast<double>(height - 1) - margin;

    PoseDataset ds;
    ds.keypoint_scale = pair_distance;
    ds.sigma = sigma;

    Rng rng(seed);
    const double radius_sq = margin * margin;
    const double denom = 2.0 * sigma * sigma;
    for (std::size_t i = 0; i < n; ++i) {
        double cx = 0.0, cy = 0.0;
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            if (x_lo > x_hi || y_lo > y_hi) continue;  // blobs cannot fit this grid
            cx = rng.uniform(x_lo, x_hi);
            cy = rng.uniform(y_lo, y_hi);
            placed = cx - 0.5 * pair_distance - margin >= 0.0 &&
                     cx + 0.5 * pair_distance + margin <= static_cast<double>(width - 1) &&
                     cy - margin >= 0.0 && cy + margin <= static_cast<double>(height - 1);
        }
        if (!placed) {
            throw std::runtime_error(
                "gen_symmetric_keypoints: blob geometry clips the grid (100 retries)");
        }

        std::vector<KeypointAnnotation> keypoints{
            {cx - 0.5 * pair_distance, cy, true, sigma},
            {cx + 0.5 * pair_distance, cy, true, sigma},
        };
        Image image(height, width);
        for (std::size_t r = 0; r < height; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                double v = 0.0;
                for (const auto& kp : keypoints) {
                    const double dx = static_cast<double>(c) - kp.x;
                    const double dy = static_cast<double>(r) - kp.y;
                    const double d2 = dx * dx + dy * dy;
                    if (d2 <= radius_sq) {
                        v = std::max(v, std::exp(-d2 / denom));
                    }
                }
                image.at(r, c) = v;
            }
        }
        ds.images.push_back(std::move(image));
        ds.annotations.push_back(std::move(keypoints));
    }
    return ds;
}

void hflip(Image& image, std::vector<KeypointAnnotation>& keypoints) {
    for (std::size_t r = 0; r < image.height; ++r) {
        for (std::size_t c = 0; c < image.width / 2; ++c) {
            std::swap(image.at(r, c), image.at(r, image.width - 1 - c));
        }
    }
    const double w1 = static_cast<double>(image.width - 1);
    for (auto& kp : keypoints) {
        kp.x = w1 - kp.x;
    }
    // Left/right identities swap in pairs.
    for (std::size_t k = 0; k + 1 < keypoints.size(); k += 2) {
        std::swap(keypoints[k], keypoints[k + 1]);
    }
}

ClassificationDataset parse_cifar10_binary(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
        throw ParseError("cifar10: truncated file: " + std::to_string(bytes.size()) +
                         " bytes is not a positive multiple of 3073 (partial record at offset " +
                         std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes) + ")");
    }
    ClassificationDataset ds;
    ds.num_classes = 10;
    ds.feature_dim = kCifarPixelBytes;
    ds.tag = "cifar10";
    const std::size_t records = bytes.size() / kCifarRecordBytes;
    ds.features.reserve(records);
    ds.labels.reserve(records);
    for (std::size_t r = 0; r < records; ++r) {
        const std::size_t offset = r * kCifarRecordBytes;
        const std::uint8_t label = bytes[offset];
        if (label > 9) {
            throw ParseError("cifar10: invalid label byte " + std::to_string(label) +
                             " at offset " + std::to_string(offset));
        }
        Vector pixels(kCifarPixelBytes);
        for (std::size_t i = 0; i < kCifarPixelBytes; ++i) {
            pixels[i] = static_cast<double>(bytes[offset + 1 + i]) / 255.0;
        }
        ds.features.push_back(std::move(pixels));
        ds.labels.push_back(label);
    }
    return ds;
}

void write_cifar10_binary(const ClassificationDataset& dataset, const std::string& path) {
    if (dataset.feature_dim != kCifarPixelBytes) {
        throw std::invalid_argument("write_cifar10_binary: feature_dim must be 3072");
    }
    std::vector<std::uint8_t> bytes;
    bytes.reserve(dataset.size() * kCifarRecordBytes);
    for (std::size_t r = 0; r < dataset.size(); ++r) {
        if (dataset.labels[r] > 9) {
            throw std::invalid_argument("write_cifar10_binary: label out of range");
        }
        bytes.push_back(static_cast<std::uint8_t>(dataset.labels[r]));
        for (double v : dataset.features[r]) {
            bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
        }
    }
    write_file_bytes(path, bytes);
}

IdxArray parse_idx(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 4) {
        throw ParseError("idx: file shorter than magic number");
    }
    if (bytes[0] != 0 || bytes[1] != 0) {
        throw ParseError("idx: bad magic high bytes");
    }
    if (bytes[2] != 0x08) {
        throw ParseError("idx: unsupported type byte " + std::to_string(bytes[2]) +
                         " (only 0x08 unsigned byte)");
    }
    const std::size_t ndims = bytes[3];
    if (ndims == 0) {
        throw ParseError("idx: zero dimensions");
    }
    if (bytes.size() < 4 + 4 * ndims) {
        throw ParseError("idx: truncated dimension table");
    }
    IdxArray array;
    std::size_t expected = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        std::size_t dim = 0;
        for (int b = 0; b < 4; ++b) {
            dim = (dim << 8) | bytes[4 + 4 * d + static_cast<std::size_t>(b)];
        }
        array.dims.push_back(dim);
        expected *= dim;
    }
    const std::size_t actual = bytes.size() - 4 - 4 * ndims;
    if (actual != expected) {
        throw ParseError("idx: expected " + std::to_string(expected) +
                         " data bytes, got " + std::to_string(actual));
    }
    array.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(4 + 4 * ndims),
                      bytes.end());
    return array;
}

void write_idx(const IdxArray& array, const std::string& path) {
    if (array.dims.empty() || array.dims.size() > 255) {
        throw std::invalid_argument("write_idx: dimension count out of range");
    }
    std::size_t expected = 1;
    for (std::size_t d : array.dims) expected *= d;
    if (expected != array.data.size()) {
        throw std::invalid_argument("write_idx: data length does not match dims");
    }
    std::vector<std::uint8_t> bytes{0, 0, 0x08, static_cast<std::uint8_t>(array.dims.size())};
    for (std::size_t dim : array.dims) {
        for (int b = 3; b >= 0; --b) {
            bytes.push_back(static_cast<std::uint8_t>((dim >> (8 * b)) & 0xFF));
        }
    }
    bytes.insert(bytes.end(), array.data.begin(), array.data.end());
    write_file_bytes(path, bytes);
}

std::pair<ClassificationDataset, ClassificationDataset> split(
    const ClassificationDataset& dataset, double val_fraction, std::uint64_t seed) {
    const auto chosen = val_indices(dataset.size(), val_fraction, seed);
    std::vector<bool> is_val(dataset.size(), false);
    for (std::size_t i : chosen) is_val[i] = true;

    ClassificationDataset train, val;
    train.num_classes = val.num_classes = dataset.num_classes;
    train.feature_dim = val.feature_dim = dataset.feature_dim;
    train.tag = "train";
    val.tag = "val";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto& part = is_val[i] ? val : train;
        part.features.push_back(dataset.features[i]);
        part.labels.push_back(dataset.labels[i]);
    }
    return {std::move(train), std::move(val)};
}

std::pair<PoseDataset, PoseDataset> split(const PoseDataset& dataset,
                                          double val_fraction, std::uint64_t seed) {
    const auto chosen = val_indices(dataset.size(), val_fraction, seed);
    std::vector<bool> is_val(dataset.size(), false);
    for (std::size_t i : chosen) is_val[i] = true;

    PoseDataset train, val;
    train.keypoint_scale = val.keypoint_scale = dataset.keypoint_scale;
    train.sigma = val.sigma = dataset.sigma;
    train.tag = "train";
    val.tag = "val";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto& part = is_val[i] ? val : train;
        part.images.push_back(dataset.images[i]);
        part.annotations.push_back(dataset.annotations[i]);
    }
    return {std::move(train), std::move(val)};
}

namespace {

void write_sidecar(const std::string& path, const nlohmann::json& params) {
    std::ofstream out(path + ".json");
    if (!out) {
        throw IoError("cannot open for writing: " + path + ".json");
    }
    out << params.dump(2) << "\n";
}

}  // namespace

void save_dataset(const ClassificationDataset& dataset, const std::string& path,
                  const nlohmann::json& generation_params) {
    std::vector<std::uint8_t> bytes{'A', 'L', 'C', '1'};
    put_u64(bytes, dataset.size());
    put_u64(bytes, dataset.num_classes);
    put_u64(bytes, dataset.feature_dim);
    put_u64(bytes, dataset.tag.size());
    bytes.insert(bytes.end(), dataset.tag.begin(), dataset.tag.end());
    for (std::size_t label : dataset.labels) put_u64(bytes, label);
    for (const Vector& row : dataset.features) {
        for (double v : row) put_f64(bytes, v);
    }
    write_file_bytes(path, bytes);
    write_sidecar(path, generation_params);
}

ClassificationDataset load_classification_dataset(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader reader(bytes, "dataset '" + path + "'");
    if (reader.str(4) != "ALC1") {
        throw ParseError("dataset '" + path + "': bad magic (want ALC1)");
    }
    ClassificationDataset ds;
    const std::uint64_t n = reader.u64();
    ds.num_classes = reader.u64();
    ds.feature_dim = reader.u64();
    ds.tag = reader.str(reader.u64());
    ds.labels.resize(n);
    for (auto& label : ds.labels) label = reader.u64();
    ds.features.resize(n);
    for (auto& row : ds.features) {
        row.resize(ds.feature_dim);
        for (double& v : row) v = reader.f64();
    }
    reader.expect_end();
    return ds;
}

void save_dataset(const PoseDataset& dataset, const std::string& path,
                  const nlohmann::json& generation_params) {
    std::vector<std::uint8_t> bytes{'A', 'L', 'P', '1'};
    const std::size_t h = dataset.images.empty() ? 0 : dataset.images.front().height;
    const std::size_t w = dataset.images.empty() ? 0 : dataset.images.front().width;
    put_u64(bytes, dataset.size());
    put_u64(bytes, dataset.num_keypoints());
    put_u64(bytes, h);
    put_u64(bytes, w);
    put_f64(bytes, dataset.keypoint_scale);
    put_f64(bytes, dataset.sigma);
    put_u64(bytes, dataset.tag.size());
    bytes.insert(bytes.end(), dataset.tag.begin(), dataset.tag.end());
    for (const Image& image : dataset.images) {
        for (double v : image.pixels) put_f64(bytes, v);
    }
    for (const auto& keypoints : dataset.annotations) {
        for (const auto& kp : keypoints) {
            put_f64(bytes, kp.x);
            put_f64(bytes, kp.y);
            bytes.push_back(kp.visible ? 1 : 0);
            put_f64(bytes, kp.sigma);
        }
    }
    write_file_bytes(path, bytes);
    write_sidecar(path, generation_params);
}

PoseDataset load_pose_dataset(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader reader(bytes, "dataset '" + path + "'");
    if (reader.str(4) != "ALP1") {
        throw ParseError("dataset '" + path + "': bad magic (want ALP1)");
    }
    PoseDataset ds;
    const std::uint64_t n = reader.u64();
    const std::uint64_t k = reader.u64();
    const std::uint64_t h = reader.u64();
    const std::uint64_t w = reader.u64();
    ds.keypoint_scale = reader.f64();
    ds.sigma = reader.f64();
    ds.tag = reader.str(reader.u64());
    ds.images.resize(n);
    for (auto& image : ds.images) {
        image = Image(h, w);
        for (double& v : image.pixels) v = reader.f64();
    }
    ds.annotations.resize(n);
    for (auto& keypoints : ds.annotations) {
        keypoints.resize(k);
        for (auto& kp : keypoints) {
            kp.x = reader.f64();
            kp.y = reader.f64();
            kp.visible = reader.u8() != 0;
            kp.sigma = reader.f64();
        }
    }
    reader.expect_end();
    return ds;
}

}  // namespace anchorloss
