#include "anchorloss/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "anchorloss/errors.hpp"

namespace anchorloss {

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::CE: return "CE";
        case LossKind::BCE: return "BCE";
        case LossKind::FL: return "FL";
        case LossKind::AL: return "AL";
        case LossKind::ALPose: return "AL_pose";
        case LossKind::MSE: return "MSE";
    }
    return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "CE") return LossKind::CE;
    if (name == "BCE") return LossKind::BCE;
    if (name == "FL") return LossKind::FL;
    if (name == "AL") return LossKind::AL;
    if (name == "AL_pose") return LossKind::ALPose;
    if (name == "MSE") return LossKind::MSE;
    throw std::invalid_argument("unknown loss kind '" + name + "'");
}

// ---------------------------------------------------------------- DenseModel

DenseModel DenseModel::create(const std::vector<std::size_t>& dims, HeadActivation head,
                              Rng& rng) {
    if (dims.size() < 2) {
        throw std::invalid_argument("DenseModel: need at least input and output dims");
    }
    DenseModel model;
    model.head_ = head;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer layer;
        layer.inputs = dims[i];
        layer.outputs = dims[i + 1];
        layer.activation = i + 2 < dims.size() ? Activation::Relu : Activation::Identity;
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.inputs));
        layer.weights.resize(layer.outputs * layer.inputs);
        for (double& w : layer.weights) w = rng.uniform(-bound, bound);
        layer.bias.assign(layer.outputs, 0.0);
        model.layers_.push_back(std::move(layer));
    }
    return model;
}

DenseModel::Forward DenseModel::forward(const Vector& input) const {
    if (input.size() != input_dim()) {
        throw std::invalid_argument("DenseModel::forward: input dimension mismatch");
    }
    Forward cache;
    Vector activation = input;
    for (const Layer& layer : layers_) {
        cache.layer_inputs.push_back(activation);
        Vector z(layer.outputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            double sum = layer.bias[o];
            const double* row = layer.weights.data() + o * layer.inputs;
            for (std::size_t i = 0; i < layer.inputs; ++i) {
                sum += row[i] * activation[i];
            }
            z[o] = sum;
        }
        cache.preactivations.push_back(z);
        if (layer.activation == Activation::Relu) {
            for (double& v : z) v = std::max(0.0, v);
        }
        activation = std::move(z);
    }
    cache.logits = activation;
    if (head_ == HeadActivation::Sigmoid) {
        cache.probabilities.resize(activation.size());
        for (std::size_t i = 0; i < activation.size(); ++i) {
            cache.probabilities[i] = sigmoid(activation[i]);
        }
    } else {
        cache.probabilities = softmax(activation);
    }
    return cache;
}

Vector DenseModel::backward(const Forward& cache, const Vector& dloss_dprob) const {
    if (cache.layer_inputs.size() != layers_.size()) {
        throw std::invalid_argument("DenseModel::backward: stale cache");
    }
    if (dloss_dprob.size() != output_dim()) {
        throw std::invalid_argument("DenseModel::backward: gradient dimension mismatch");
    }

    // Head chain rule.
    const Vector& q = cache.probabilities;
    Vector dz(q.size());
    if (head_ == HeadActivation::Sigmoid) {
        for (std::size_t i = 0; i < q.size(); ++i) {
            dz[i] = dloss_dprob[i] * q[i] * (1.0 - q[i]);
        }
    } else {
        // softmax JVP: dz_j = q_j (dq_j - sum_k dq_k q_k)
        double dot = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) dot += dloss_dprob[i] * q[i];
        for (std::size_t i = 0; i < q.size(); ++i) {
            dz[i] = q[i] * (dloss_dprob[i] - dot);
        }
    }

    Vector grads(parameter_count(), 0.0);
    std::size_t offset = grads.size();
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Layer& layer = layers_[li];
        if (layer.activation == Activation::Relu) {
            for (std::size_t o = 0; o < layer.outputs; ++o) {
                if (cache.preactivations[li][o] <= 0.0) dz[o] = 0.0;
            }
        }
        offset -= layer.outputs * layer.inputs + layer.outputs;
        double* dw = grads.data() + offset;
        double* db = dw + layer.outputs * layer.inputs;
        const Vector& a = cache.layer_inputs[li];
        Vector da(layer.inputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            const double g = dz[o];
            db[o] = g;
            const double* row = layer.weights.data() + o * layer.inputs;
            double* dw_row = dw + o * layer.inputs;
            for (std::size_t i = 0; i < layer.inputs; ++i) {
                dw_row[i] = g * a[i];
                da[i] += g * row[i];
            }
        }
        dz = std::move(da);
    }
    return grads;
}

Vector DenseModel::parameters() const {
    Vector params;
    params.reserve(parameter_count());
    for (const Layer& layer : layers_) {
        params.insert(params.end(), layer.weights.begin(), layer.weights.end());
        params.insert(params.end(), layer.bias.begin(), layer.bias.end());
    }
    return params;
}

void DenseModel::set_parameters(const Vector& params) {
    if (params.size() != parameter_count()) {
        throw std::invalid_argument("DenseModel::set_parameters: size mismatch");
    }
    std::size_t offset = 0;
    for (Layer& layer : layers_) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(offset),
                    layer.weights.size(), layer.weights.begin());
        offset += layer.weights.size();
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(offset),
                    layer.bias.size(), layer.bias.begin());
        offset += layer.bias.size();
    }
}

std::size_t DenseModel::parameter_count() const {
    std::size_t count = 0;
    for (const Layer& layer : layers_) {
        count += layer.weights.size() + layer.bias.size();
    }
    return count;
}

// --------------------------------------------------------- ConvHeatmapModel

namespace {

// 3x3 convolution, stride 1, zero padding 1, on channel-major flat grids.
void conv3x3_forward(const Vector& in, std::size_t in_ch, std::size_t h, std::size_t w,
                     const ConvHeatmapModel::Conv& conv, Vector& out) {
    const auto hh = static_cast<std::ptrdiff_t>(h);
    const auto ww = static_cast<std::ptrdiff_t>(w);
    out.assign(conv.out_channels * h * w, 0.0);
    for (std::size_t o = 0; o < conv.out_channels; ++o) {
        double* out_plane = out.data() + o * h * w;
        for (std::size_t i = 0; i < h * w; ++i) out_plane[i] = conv.bias[o];
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
            const double* in_plane = in.data() + ic * h * w;
            const double* kernel = conv.weights.data() + (o * in_ch + ic) * 9;
            for (std::ptrdiff_t r = 0; r < hh; ++r) {
                for (std::ptrdiff_t c = 0; c < ww; ++c) {
                    double sum = 0.0;
                    for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
                        const std::ptrdiff_t rr = r + dr;
                        if (rr < 0 || rr >= hh) continue;
                        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                            const std::ptrdiff_t cc = c + dc;
                            if (cc < 0 || cc >= ww) continue;
                            sum += kernel[(dr + 1) * 3 + (dc + 1)] * in_plane[rr * ww + cc];
                        }
                    }
                    out_plane[r * ww + c] += sum;
                }
            }
        }
    }
}

// Accumulates dW/db and the input gradient for conv3x3_forward.
void conv3x3_backward(const Vector& in, std::size_t in_ch, std::size_t h, std::size_t w,
                      const ConvHeatmapModel::Conv& conv, const Vector& dout,
                      double* dweights, double* dbias, Vector& din) {
    const auto hh = static_cast<std::ptrdiff_t>(h);
    const auto ww = static_cast<std::ptrdiff_t>(w);
    din.assign(in_ch * h * w, 0.0);
    for (std::size_t o = 0; o < conv.out_channels; ++o) {
        const double* dout_plane = dout.data() + o * h * w;
        for (std::size_t i = 0; i < h * w; ++i) dbias[o] += dout_plane[i];
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
            const double* in_plane = in.data() + ic * h * w;
            double* din_plane = din.data() + ic * h * w;
            const double* kernel = conv.weights.data() + (o * in_ch + ic) * 9;
            double* dkernel = dweights + (o * in_ch + ic) * 9;
            for (std::ptrdiff_t r = 0; r < hh; ++r) {
                for (std::ptrdiff_t c = 0; c < ww; ++c) {
                    const double g = dout_plane[r * ww + c];
                    if (g == 0.0) continue;
                    for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
                        const std::ptrdiff_t rr = r + dr;
                        if (rr < 0 || rr >= hh) continue;
                        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                            const std::ptrdiff_t cc = c + dc;
                            if (cc < 0 || cc >= ww) continue;
                            const std::size_t k = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
                            dkernel[k] += g * in_plane[rr * ww + cc];
                            din_plane[rr * ww + cc] += g * kernel[k];
                        }
                    }
                }
            }
        }
    }
}

ConvHeatmapModel::Conv make_conv(std::size_t in_ch, std::size_t out_ch, Rng& rng) {
    ConvHeatmapModel::Conv conv;
    conv.in_channels = in_ch;
    conv.out_channels = out_ch;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * 9));
    conv.weights.resize(out_ch * in_ch * 9);
    for (double& w : conv.weights) w = rng.uniform(-bound, bound);
    conv.bias.assign(out_ch, 0.0);
    return conv;
}

}  // namespace

ConvHeatmapModel ConvHeatmapModel::create(std::size_t height, std::size_t width,
                                          std::size_t channels, std::size_t num_keypoints,
                                          Rng& rng) {
    if (height == 0 || width == 0 || height % 2 != 0 || width % 2 != 0) {
        throw std::invalid_argument("ConvHeatmapModel: height and width must be even");
    }
    if (channels == 0 || num_keypoints == 0) {
        throw std::invalid_argument("ConvHeatmapModel: channels and keypoints must be positive");
    }
    ConvHeatmapModel model;
    model.height_ = height;
    model.width_ = width;
    model.channels_ = channels;
    model.num_keypoints_ = num_keypoints;
    model.conv1_ = make_conv(1, channels, rng);
    model.conv2_ = make_conv(channels, channels, rng);
    model.conv3_ = make_conv(channels, num_keypoints, rng);
    return model;
}

ConvHeatmapModel::Forward ConvHeatmapModel::forward(const Image& image) const {
    if (image.height != height_ || image.width != width_) {
        throw std::invalid_argument("ConvHeatmapModel::forward: input dimension mismatch");
    }
    Forward cache;
    cache.input = image.pixels;

    conv3x3_forward(cache.input, 1, height_, width_, conv1_, cache.z1);
    cache.a1 = cache.z1;
    for (double& v : cache.a1) v = std::max(0.0, v);

    // 2x2 max pool, stride 2; first maximum in scan order wins ties.
    const std::size_t ph = height_ / 2, pw = width_ / 2;
    cache.pooled.assign(channels_ * ph * pw, 0.0);
    cache.pool_argmax.assign(channels_ * ph * pw, 0);
    for (std::size_t ch = 0; ch < channels_; ++ch) {
        const double* plane = cache.a1.data() + ch * height_ * width_;
        for (std::size_t r = 0; r < ph; ++r) {
            for (std::size_t c = 0; c < pw; ++c) {
                std::size_t best = (2 * r) * width_ + 2 * c;
                double best_value = plane[best];
                const std::size_t window[3] = {(2 * r) * width_ + 2 * c + 1,
                                               (2 * r + 1) * width_ + 2 * c,
                                               (2 * r + 1) * width_ + 2 * c + 1};
                for (std::size_t idx : window) {
                    if (plane[idx] > best_value) {
                        best_value = plane[idx];
                        best = idx;
                    }
                }
                cache.pooled[ch * ph * pw + r * pw + c] = best_value;
                cache.pool_argmax[ch * ph * pw + r * pw + c] = ch * height_ * width_ + best;
            }
        }
    }

    conv3x3_forward(cache.pooled, channels_, ph, pw, conv2_, cache.z2);
    cache.a2 = cache.z2;
    for (double& v : cache.a2) v = std::max(0.0, v);

    // Nearest-neighbor upsample x2.
    cache.upsampled.assign(channels_ * height_ * width_, 0.0);
    for (std::size_t ch = 0; ch < channels_; ++ch) {
        for (std::size_t r = 0; r < height_; ++r) {
            for (std::size_t c = 0; c < width_; ++c) {
                cache.upsampled[ch * height_ * width_ + r * width_ + c] =
                    cache.a2[ch * ph * pw + (r / 2) * pw + c / 2];
            }
        }
    }

    conv3x3_forward(cache.upsampled, channels_, height_, width_, conv3_, cache.z3);
    cache.heatmaps.assign(num_keypoints_, Heatmap(height_, width_));
    for (std::size_t k = 0; k < num_keypoints_; ++k) {
        for (std::size_t i = 0; i < height_ * width_; ++i) {
            cache.heatmaps[k].values[i] = sigmoid(cache.z3[k * height_ * width_ + i]);
        }
    }
    return cache;
}

Vector ConvHeatmapModel::backward(const Forward& cache,
                                  const std::vector<Vector>& dloss_dq) const {
    if (cache.z3.size() != num_keypoints_ * height_ * width_) {
        throw std::invalid_argument("ConvHeatmapModel::backward: stale cache");
    }
    if (dloss_dq.size() != num_keypoints_) {
        throw std::invalid_argument("ConvHeatmapModel::backward: keypoint count mismatch");
    }

    // Sigmoid head chain.
    Vector dz3(num_keypoints_ * height_ * width_, 0.0);
    for (std::size_t k = 0; k < num_keypoints_; ++k) {
        if (dloss_dq[k].empty()) continue;  // skipped heatmap
        if (dloss_dq[k].size() != height_ * width_) {
            throw std::invalid_argument("ConvHeatmapModel::backward: gradient size mismatch");
        }
        for (std::size_t i = 0; i < height_ * width_; ++i) {
            const double q = cache.heatmaps[k].values[i];
            dz3[k * height_ * width_ + i] = dloss_dq[k][i] * q * (1.0 - q);
        }
    }

    Vector grads(parameter_count(), 0.0);
    const std::size_t w1 = conv1_.weights.size();
    const std::size_t w2 = conv2_.weights.size();
    const std::size_t w3 = conv3_.weights.size();
    double* dw1 = grads.data();
    double* db1 = dw1 + w1;
    double* dw2 = db1 + conv1_.bias.size();
    double* db2 = dw2 + w2;
    double* dw3 = db2 + conv2_.bias.size();
    double* db3 = dw3 + w3;

    const std::size_t ph = height_ / 2, pw = width_ / 2;

    Vector dup;
    conv3x3_backward(cache.upsampled, channels_, height_, width_, conv3_, dz3, dw3, db3, dup);

    // Upsample backward: each half-res cell collects its 2x2 block.
    Vector da2(channels_ * ph * pw, 0.0);
    for (std::size_t ch = 0; ch < channels_; ++ch) {
        for (std::size_t r = 0; r < height_; ++r) {
            for (std::size_t c = 0; c < width_; ++c) {
                da2[ch * ph * pw + (r / 2) * pw + c / 2] +=
                    dup[ch * height_ * width_ + r * width_ + c];
            }
        }
    }
    for (std::size_t i = 0; i < da2.size(); ++i) {
        if (cache.z2[i] <= 0.0) da2[i] = 0.0;
    }

    Vector dpooled;
    conv3x3_backward(cache.pooled, channels_, ph, pw, conv2_, da2, dw2, db2, dpooled);

    // Pool backward routes to the recorded argmax.
    Vector da1(channels_ * height_ * width_, 0.0);
    for (std::size_t i = 0; i < dpooled.size(); ++i) {
        da1[cache.pool_argmax[i]] += dpooled[i];
    }
    for (std::size_t i = 0; i < da1.size(); ++i) {
        if (cache.z1[i] <= 0.0) da1[i] = 0.0;
    }

    Vector dinput;
    conv3x3_backward(cache.input, 1, height_, width_, conv1_, da1, dw1, db1, dinput);
    return grads;
}

Vector ConvHeatmapModel::parameters() const {
    Vector params;
    params.reserve(parameter_count());
    for (const Conv* conv : {&conv1_, &conv2_, &conv3_}) {
        params.insert(params.end(), conv->weights.begin(), conv->weights.end());
        params.insert(params.end(), conv->bias.begin(), conv->bias.end());
    }
    return params;
}

void ConvHeatmapModel::set_parameters(const Vector& params) {
    if (params.size() != parameter_count()) {
        throw std::invalid_argument("ConvHeatmapModel::set_parameters: size mismatch");
    }
    std::size_t offset = 0;
    for (Conv* conv : {&conv1_, &conv2_, &conv3_}) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(offset),
                    conv->weights.size(), conv->weights.begin());
        offset += conv->weights.size();
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(offset),
                    conv->bias.size(), conv->bias.begin());
        offset += conv->bias.size();
    }
}

std::size_t ConvHeatmapModel::parameter_count() const {
    std::size_t count = 0;
    for (const Conv* conv : {&conv1_, &conv2_, &conv3_}) {
        count += conv->weights.size() + conv->bias.size();
    }
    return count;
}

// ----------------------------------------------------------------- training

LossKind loss_for_epoch(std::size_t epoch, const TrainConfig& cfg) {
    return epoch < cfg.warmup_epochs ? LossKind::CE : cfg.loss_kind;
}

std::vector<std::size_t> ohem_filter(const Vector& per_sample_losses, double rho) {
    if (per_sample_losses.empty()) {
        throw std::invalid_argument("ohem_filter: empty batch");
    }
    if (rho <= 0.0 || rho > 1.0) {
        throw std::invalid_argument("ohem_filter: rho must be in (0,1]");
    }
    const auto n = per_sample_losses.size();
    const auto keep = static_cast<std::size_t>(
        std::ceil(rho * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (per_sample_losses[a] != per_sample_losses[b]) {
            return per_sample_losses[a] > per_sample_losses[b];
        }
        return a < b;  // ties to the lower index
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    return order;
}

void sgd_step(Vector& params, const Vector& grads, double lr, double momentum,
              Vector& velocity) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw std::invalid_argument("sgd_step: shape mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] - lr * grads[i];
        params[i] += velocity[i];
    }
}

LossResult mse_heatmap_loss(const Heatmap& target, const Heatmap& prediction) {
    if (target.height != prediction.height || target.width != prediction.width) {
        throw std::invalid_argument("mse_heatmap_loss: dimension mismatch");
    }
    LossResult result;
    result.per_class.resize(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = target.values[i] - prediction.values[i];
        result.per_class[i] = d * d;
        result.value += d * d;
    }
    return result;
}

Vector mse_heatmap_loss_gradient(const Heatmap& target, const Heatmap& prediction) {
    if (target.height != prediction.height || target.width != prediction.width) {
        throw std::invalid_argument("mse_heatmap_loss: dimension mismatch");
    }
    Vector grad(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        grad[i] = 2.0 * (prediction.values[i] - target.values[i]);
    }
    return grad;
}

ClassificationLossEval eval_classification_loss(LossKind kind, const TrainConfig& cfg,
                                                const Vector& onehot, const Vector& probs,
                                                const Vector& logits, HeadActivation head) {
    ClassificationLossEval eval;
    switch (kind) {
        case LossKind::CE:
            if (head == HeadActivation::Softmax) {
                eval.loss = softmax_ce(onehot, logits);
                eval.dloss_dprob.assign(probs.size(), 0.0);
                for (std::size_t k = 0; k < probs.size(); ++k) {
                    if (onehot[k] == 1.0) {
                        eval.dloss_dprob[k] = -1.0 / std::max(probs[k], cfg.anchor.floor);
                    }
                }
            } else {
                // CE warmup on a sigmoid-head model runs as BCE.
                eval.loss = bce(onehot, probs, cfg.anchor.floor);
                eval.dloss_dprob = bce_gradient(onehot, probs, cfg.anchor.floor);
            }
            return eval;
        case LossKind::BCE:
            eval.loss = bce(onehot, probs, cfg.anchor.floor);
            eval.dloss_dprob = bce_gradient(onehot, probs, cfg.anchor.floor);
            return eval;
        case LossKind::FL:
            eval.loss = focal_loss(onehot, probs, cfg.focal_gamma, cfg.anchor.floor);
            eval.dloss_dprob =
                focal_loss_gradient(onehot, probs, cfg.focal_gamma, cfg.anchor.floor);
            return eval;
        case LossKind::AL: {
            const AnchorProbabilities anchors =
                anchor_probabilities(onehot, probs, cfg.anchor);
            eval.loss = anchor_loss_with_anchors(onehot, probs, anchors, cfg.anchor);
            eval.dloss_dprob =
                anchor_loss_gradient_with_anchors(onehot, probs, anchors, cfg.anchor);
            return eval;
        }
        case LossKind::MSE: {
            eval.loss.per_class.resize(probs.size());
            eval.dloss_dprob.resize(probs.size());
            for (std::size_t k = 0; k < probs.size(); ++k) {
                const double d = probs[k] - onehot[k];
                eval.loss.per_class[k] = d * d;
                eval.loss.value += d * d;
                eval.dloss_dprob[k] = 2.0 * d;
            }
            return eval;
        }
        case LossKind::ALPose:
            break;
    }
    throw std::invalid_argument("eval_classification_loss: unsupported loss kind " +
                                to_string(kind));
}

PoseLossEval eval_pose_loss(LossKind kind, const TrainConfig& cfg,
                            const std::vector<EncodedTarget>& targets,
                            const std::vector<Heatmap>& predictions) {
    if (targets.size() != predictions.size()) {
        throw std::invalid_argument("eval_pose_loss: keypoint count mismatch");
    }
    PoseLossEval eval;
    eval.dloss_dq.resize(targets.size());
    for (std::size_t k = 0; k < targets.size(); ++k) {
        if (targets[k].truncated) continue;  // occluded keypoint: loss skipped
        const Heatmap& target = targets[k].heatmap;
        const Heatmap& pred = predictions[k];
        switch (kind) {
            case LossKind::ALPose: {
                const LossResult r = pose_anchor_loss(target, pred, cfg.pose);
                if (!r.anchors_used.negative) ++eval.fallbacks;
                eval.value += r.value;
                eval.dloss_dq[k] = pose_anchor_loss_gradient(target, pred, cfg.pose);
                break;
            }
            case LossKind::CE:
            case LossKind::BCE: {
                PoseLossConfig plain = cfg.pose;
                plain.gamma = 0.0;
                eval.value += pose_anchor_loss(target, pred, plain).value;
                eval.dloss_dq[k] = pose_anchor_loss_gradient(target, pred, plain);
                break;
            }
            case LossKind::MSE:
                eval.value += mse_heatmap_loss(target, pred).value;
                eval.dloss_dq[k] = mse_heatmap_loss_gradient(target, pred);
                break;
            default:
                throw std::invalid_argument("eval_pose_loss: unsupported loss kind " +
                                            to_string(kind));
        }
    }
    return eval;
}

std::uint64_t parameter_checksum(const Vector& params) {
    // FNV-1a over the raw bit patterns.
    std::uint64_t hash = 0xCBF29CE484222325ull;
    for (double v : params) {
        std::uint64_t bits;
        static_assert(sizeof bits == sizeof v);
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            hash ^= (bits >> (8 * b)) & 0xFF;
            hash *= 0x100000001B3ull;
        }
    }
    return hash;
}

namespace {

double lr_at(const std::vector<std::pair<std::size_t, double>>& schedule,
             std::size_t epoch) {
    if (schedule.empty()) {
        throw std::invalid_argument("lr_schedule must not be empty");
    }
    double lr = schedule.front().second;
    for (const auto& [start, value] : schedule) {
        if (value <= 0.0) {
            throw std::invalid_argument("lr values must be positive");
        }
        if (epoch >= start) lr = value;
    }
    return lr;
}

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.batch_size == 0) {
        throw std::invalid_argument("batch_size must be positive");
    }
    if (cfg.ohem_ratio && (*cfg.ohem_ratio <= 0.0 || *cfg.ohem_ratio > 1.0)) {
        throw std::invalid_argument("ohem_ratio must be in (0,1]");
    }
    lr_at(cfg.lr_schedule, 0);
}

/// Rank of the target among the probabilities (0 = argmax); ties broken by
/// the lower index.
std::size_t target_rank(const Vector& probs, std::size_t target) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (j == target) continue;
        if (probs[j] > probs[target] || (probs[j] == probs[target] && j < target)) {
            ++rank;
        }
    }
    return rank;
}

}  // namespace

TrainRun train_classifier(DenseModel& model, const ClassificationDataset& train,
                          const ClassificationDataset& val, const TrainConfig& cfg) {
    if (train.size() == 0) {
        throw std::invalid_argument("train_classifier: empty dataset");
    }
    validate_train_config(cfg);

    TrainRun run;
    run.config = cfg;
    Rng rng(cfg.seed);
    Vector params = model.parameters();
    Vector velocity(params.size(), 0.0);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    struct SampleEval {
        DenseModel::Forward cache;
        ClassificationLossEval eval;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const LossKind active = loss_for_epoch(epoch, cfg);
        const double lr = lr_at(cfg.lr_schedule, epoch);
        rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            std::vector<SampleEval> batch(count);
            Vector losses(count);
            for (std::size_t b = 0; b < count; ++b) {
                const std::size_t idx = order[start + b];
                batch[b].cache = model.forward(train.features[idx]);
                batch[b].eval = eval_classification_loss(
                    active, cfg, one_hot(train.labels[idx], train.num_classes),
                    batch[b].cache.probabilities, batch[b].cache.logits, model.head());
                losses[b] = batch[b].eval.loss.value;
                epoch_loss += losses[b];
            }

            std::vector<bool> selected(count, true);
            std::size_t selected_count = count;
            if (cfg.ohem_ratio) {
                const auto kept = ohem_filter(losses, *cfg.ohem_ratio);
                selected.assign(count, false);
                for (std::size_t i : kept) selected[i] = true;
                selected_count = kept.size();
            }

            double batch_loss = 0.0;
            for (double v : losses) batch_loss += v;
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError(epoch);
            }

            Vector grads(params.size(), 0.0);
            for (std::size_t b = 0; b < count; ++b) {
                if (!selected[b]) continue;
                const Vector g = model.backward(batch[b].cache, batch[b].eval.dloss_dprob);
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
            }
            const double inv = 1.0 / static_cast<double>(selected_count);
            for (double& g : grads) g *= inv;

            sgd_step(params, grads, lr, cfg.momentum, velocity);
            model.set_parameters(params);
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.active_loss = active;
        metrics.learning_rate = lr;
        metrics.train_loss = epoch_loss / static_cast<double>(train.size());
        if (val.size() > 0) {
            double val_loss = 0.0;
            std::size_t top1 = 0, top5 = 0;
            for (std::size_t i = 0; i < val.size(); ++i) {
                const auto cache = model.forward(val.features[i]);
                const auto eval = eval_classification_loss(
                    active, cfg, one_hot(val.labels[i], val.num_classes),
                    cache.probabilities, cache.logits, model.head());
                val_loss += eval.loss.value;
                const std::size_t rank = target_rank(cache.probabilities, val.labels[i]);
                top1 += rank == 0 ? 1 : 0;
                top5 += rank < 5 ? 1 : 0;
            }
            metrics.val_loss = val_loss / static_cast<double>(val.size());
            metrics.val_primary = static_cast<double>(top1) / static_cast<double>(val.size());
            metrics.val_secondary = static_cast<double>(top5) / static_cast<double>(val.size());
        }
        run.trace.push_back(metrics);
    }
    run.parameter_checksum = parameter_checksum(params);
    return run;
}

TrainRun train_pose(ConvHeatmapModel& model, const PoseDataset& train,
                    const PoseDataset& val, const TrainConfig& cfg) {
    if (train.size() == 0) {
        throw std::invalid_argument("train_pose: empty dataset");
    }
    validate_train_config(cfg);

    const std::size_t h = model.height();
    const std::size_t w = model.width();

    const auto encode_all = [&](const std::vector<KeypointAnnotation>& keypoints) {
        std::vector<EncodedTarget> targets;
        targets.reserve(keypoints.size());
        for (const auto& kp : keypoints) targets.push_back(encode_gaussian(kp, h, w));
        return targets;
    };

    std::vector<std::vector<EncodedTarget>> train_targets;
    train_targets.reserve(train.size());
    for (const auto& keypoints : train.annotations) {
        train_targets.push_back(encode_all(keypoints));
    }
    std::vector<std::vector<EncodedTarget>> val_targets;
    val_targets.reserve(val.size());
    for (const auto& keypoints : val.annotations) {
        val_targets.push_back(encode_all(keypoints));
    }

    TrainRun run;
    run.config = cfg;
    Rng rng(cfg.seed);
    Vector params = model.parameters();
    Vector velocity(params.size(), 0.0);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    struct SampleEval {
        ConvHeatmapModel::Forward cache;
        PoseLossEval eval;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const LossKind active = loss_for_epoch(epoch, cfg);
        const double lr = lr_at(cfg.lr_schedule, epoch);
        rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            std::vector<SampleEval> batch(count);
            Vector losses(count);
            for (std::size_t b = 0; b < count; ++b) {
                const std::size_t idx = order[start + b];
                if (cfg.augment_hflip && rng.uniform() < 0.5) {
                    Image flipped = train.images[idx];
                    auto keypoints = train.annotations[idx];
                    hflip(flipped, keypoints);
                    batch[b].cache = model.forward(flipped);
                    batch[b].eval = eval_pose_loss(active, cfg, encode_all(keypoints),
                                                   batch[b].cache.heatmaps);
                } else {
                    batch[b].cache = model.forward(train.images[idx]);
                    batch[b].eval = eval_pose_loss(active, cfg, train_targets[idx],
                                                   batch[b].cache.heatmaps);
                }
                losses[b] = batch[b].eval.value;
                epoch_loss += losses[b];
                run.anchor_fallbacks += batch[b].eval.fallbacks;
            }

            std::vector<bool> selected(count, true);
            std::size_t selected_count = count;
            if (cfg.ohem_ratio) {
                const auto kept = ohem_filter(losses, *cfg.ohem_ratio);
                selected.assign(count, false);
                for (std::size_t i : kept) selected[i] = true;
                selected_count = kept.size();
            }

            double batch_loss = 0.0;
            for (double v : losses) batch_loss += v;
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError(epoch);
            }

            Vector grads(params.size(), 0.0);
            for (std::size_t b = 0; b < count; ++b) {
                if (!selected[b]) continue;
                // skipped heatmaps carry empty gradients; backward treats them as zero
                const Vector g = model.backward(batch[b].cache, batch[b].eval.dloss_dq);
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
            }
            const double inv = 1.0 / static_cast<double>(selected_count);
            for (double& g : grads) g *= inv;

            sgd_step(params, grads, lr, cfg.momentum, velocity);
            model.set_parameters(params);
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.active_loss = active;
        metrics.learning_rate = lr;
        metrics.train_loss = epoch_loss / static_cast<double>(train.size());
        if (val.size() > 0) {
            double val_loss = 0.0;
            double pck_sum = 0.0;
            std::size_t pck_samples = 0;
            std::size_t peak_maps = 0, double_peaks = 0;
            for (std::size_t i = 0; i < val.size(); ++i) {
                const auto cache = model.forward(val.images[i]);
                val_loss +=
                    eval_pose_loss(active, cfg, val_targets[i], cache.heatmaps).value;
                std::vector<PredictedPoint> points;
                for (const auto& hm : cache.heatmaps) {
                    const auto loc = argmax_location(hm);
                    points.push_back({static_cast<double>(loc.x), static_cast<double>(loc.y)});
                }
                bool any_visible = false;
                for (const auto& kp : val.annotations[i]) any_visible |= kp.visible;
                if (any_visible) {
                    pck_sum += pck(points, val.annotations[i], val.keypoint_scale,
                                   cfg.pck_alpha);
                    ++pck_samples;
                }
                for (std::size_t k = 0; k < cache.heatmaps.size(); ++k) {
                    if (!val.annotations[i][k].visible) continue;
                    const auto stats =
                        peak_analysis(cache.heatmaps[k], 0.25, val.annotations[i][k],
                                      cfg.pck_alpha * val.keypoint_scale);
                    ++peak_maps;
                    double_peaks += stats.is_double ? 1 : 0;
                }
            }
            metrics.val_loss = val_loss / static_cast<double>(val.size());
            metrics.val_primary =
                pck_samples > 0 ? pck_sum / static_cast<double>(pck_samples) : 0.0;
            metrics.val_secondary =
                peak_maps > 0
                    ? static_cast<double>(double_peaks) / static_cast<double>(peak_maps)
                    : 0.0;
        }
        run.trace.push_back(metrics);
    }
    run.parameter_checksum = parameter_checksum(params);
    return run;
}

}  // namespace anchorloss
