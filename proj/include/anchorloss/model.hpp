#pragma once

#include <optional>
#include <string>

#include "anchorloss/data.hpp"
#include "anchorloss/heatmap.hpp"
#include "anchorloss/losses.hpp"

namespace anchorloss {

enum class Activation { Relu, Identity };
enum class HeadActivation { Sigmoid, Softmax };

enum class LossKind { CE, BCE, FL, AL, ALPose, MSE };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

/// Fully connected stack with hand-written backprop. Hidden layers are ReLU,
/// the last layer feeds the head activation directly.
class DenseModel {
public:
    struct Layer {
        std::size_t inputs = 0;
        std::size_t outputs = 0;
        Vector weights;  // outputs x inputs, row-major
        Vector bias;
        Activation activation = Activation::Identity;
    };

    struct Forward {
        std::vector<Vector> layer_inputs;     // input to each layer
        std::vector<Vector> preactivations;   // z per layer
        Vector logits;
        Vector probabilities;
    };

    /// dims = {input, hidden..., classes}; weights uniform in +-1/sqrt(fan_in),
    /// biases zero.
    static DenseModel create(const std::vector<std::size_t>& dims, HeadActivation head,
                             Rng& rng);

    Forward forward(const Vector& input) const;

    /// Flat parameter gradients from dL/dq at the head output. The softmax
    /// head applies the full Jacobian-vector product, the sigmoid head the
    /// elementwise q(1-q) chain.
    Vector backward(const Forward& cache, const Vector& dloss_dprob) const;

    Vector parameters() const;
    void set_parameters(const Vector& params);
    std::size_t parameter_count() const;

    HeadActivation head() const { return head_; }
    std::size_t input_dim() const { return layers_.front().inputs; }
    std::size_t output_dim() const { return layers_.back().outputs; }
    const std::vector<Layer>& layers() const { return layers_; }

private:
    std::vector<Layer> layers_;
    HeadActivation head_ = HeadActivation::Sigmoid;
};

/// Small convolutional encoder-decoder emitting one sigmoid heatmap per
/// keypoint: conv3x3 -> relu -> maxpool2 -> conv3x3 -> relu -> nearest
/// upsample x2 -> conv3x3 -> sigmoid. Input height/width must be even.
class ConvHeatmapModel {
public:
    struct Conv {
        std::size_t in_channels = 0;
        std::size_t out_channels = 0;
        Vector weights;  // out x in x 3 x 3
        Vector bias;
    };

    struct Forward {
        std::vector<Heatmap> heatmaps;  // K predictions, sigmoid-activated
        // caches, channel-major flat grids
        Vector input;
        Vector z1, a1;          // full resolution, channels_
        Vector pooled;          // half resolution
        std::vector<std::size_t> pool_argmax;
        Vector z2, a2;          // half resolution
        Vector upsampled;       // full resolution
        Vector z3;              // full resolution, num_keypoints
    };

    static ConvHeatmapModel create(std::size_t height, std::size_t width,
                                   std::size_t channels, std::size_t num_keypoints,
                                   Rng& rng);

    Forward forward(const Image& image) const;

    /// Flat parameter gradients from dL/dq per keypoint heatmap (row-major,
    /// same layout as Forward::heatmaps).
    Vector backward(const Forward& cache, const std::vector<Vector>& dloss_dq) const;

    Vector parameters() const;
    void set_parameters(const Vector& params);
    std::size_t parameter_count() const;

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t num_keypoints() const { return num_keypoints_; }

private:
    std::size_t height_ = 0, width_ = 0;
    std::size_t channels_ = 0, num_keypoints_ = 0;
    Conv conv1_, conv2_, conv3_;
};

struct TrainConfig {
    LossKind loss_kind = LossKind::AL;
    AnchorLossConfig anchor;   // AL classification settings
    PoseLossConfig pose;       // ALPose settings
    double focal_gamma = 2.0;  // FL setting

    std::vector<std::pair<std::size_t, double>> lr_schedule{{0, 0.1}};  // (epoch, lr)
    std::size_t warmup_epochs = 0;
    std::optional<double> ohem_ratio;  // rho in (0,1]
    std::size_t batch_size = 16;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    double momentum = 0.9;
    bool augment_hflip = false;  // pose only
    double pck_alpha = 0.5;
};

/// One trace row. val_primary is top-1 accuracy for classification and
/// PCK for pose; val_secondary is top-5 accuracy (1.0 when K <= 5) and the
/// double-peak rate from peak_analysis for pose.
struct EpochMetrics {
    std::size_t epoch = 0;
    LossKind active_loss = LossKind::CE;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_primary = 0.0;
    double val_secondary = 0.0;
};

struct TrainRun {
    TrainConfig config;
    std::vector<EpochMetrics> trace;
    std::uint64_t parameter_checksum = 0;
    std::size_t anchor_fallbacks = 0;  // pose batches that fell back to plain BCE
};

/// CE while epoch < warmup_epochs, the configured kind afterwards. The
/// trainer maps CE to the head-appropriate cross entropy (softmax CE or BCE).
LossKind loss_for_epoch(std::size_t epoch, const TrainConfig& cfg);

/// Indices of the ceil(rho * N) largest losses, ties to the lower index,
/// returned in ascending index order.
std::vector<std::size_t> ohem_filter(const Vector& per_sample_losses, double rho);

/// v <- momentum * v - lr * g;  p <- p + v.
void sgd_step(Vector& params, const Vector& grads, double lr, double momentum,
              Vector& velocity);

/// Sum of squared per-pixel differences.
LossResult mse_heatmap_loss(const Heatmap& target, const Heatmap& prediction);
Vector mse_heatmap_loss_gradient(const Heatmap& target, const Heatmap& prediction);

struct ClassificationLossEval {
    LossResult loss;
    Vector dloss_dprob;
};

/// Loss value and dL/dq for one classification sample under the given kind.
/// CE on a sigmoid head evaluates as BCE (warmup on a BCE-family model).
ClassificationLossEval eval_classification_loss(LossKind kind, const TrainConfig& cfg,
                                                const Vector& onehot, const Vector& probs,
                                                const Vector& logits, HeadActivation head);

struct PoseLossEval {
    double value = 0.0;
    std::vector<Vector> dloss_dq;  // per keypoint, empty for skipped heatmaps
    std::size_t fallbacks = 0;     // heatmaps without a spatial anchor
};

/// Per-sample pose loss summed over visible keypoints. CE/BCE evaluate the
/// gamma = 0 pose loss; MSE the squared pixel error.
PoseLossEval eval_pose_loss(LossKind kind, const TrainConfig& cfg,
                            const std::vector<EncodedTarget>& targets,
                            const std::vector<Heatmap>& predictions);

std::uint64_t parameter_checksum(const Vector& params);

/// Momentum-SGD training loop, deterministic per seed. Throws
/// DivergenceError on a non-finite loss. val may be empty (metrics 0).
TrainRun train_classifier(DenseModel& model, const ClassificationDataset& train,
                          const ClassificationDataset& val, const TrainConfig& cfg);

TrainRun train_pose(ConvHeatmapModel& model, const PoseDataset& train,
                    const PoseDataset& val, const TrainConfig& cfg);

}  // namespace anchorloss
