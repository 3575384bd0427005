#pragma once

#include "imageflow/image.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <map>
#include <string>

namespace imageflow {

struct LossWeights {
    double lambda_v = 0.001;  // visual feature
    double lambda_c = 0.01;   // contrastive
    double lambda_s = 0.1;    // trajectory smoothness

    static LossWeights none() { return {0.0, 0.0, 0.0}; }
    void validate() const;
};

/// Guarded cosine similarity along the last axis: a.b / max(sqrt(|a|^2 |b|^2), eps).
torch::Tensor cosine_similarity(const torch::Tensor& a, const torch::Tensor& b, double eps = 1e-8);

/// Mean over all elements of (x_hat - x)^2.
torch::Tensor reconstruction_loss(const Image& x_hat, const Image& x);

/// Frozen image-to-vector encoder e(.): three strided conv layers with
/// randomly initialised weights that never receive gradients. Weights may
/// be replaced through `load_state` for an externally trained encoder.
class FeatureEncoderImpl : public torch::nn::Module {
public:
    FeatureEncoderImpl(int in_channels, std::uint64_t seed);
    torch::Tensor forward(const Image& x);  // (N, D) or (D)
    /// Replace weights by name (as in named_parameters); they stay frozen.
    void load_state(const std::map<std::string, torch::Tensor>& tensors);

private:
    torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(FeatureEncoder);

using ImageEncoder = std::function<torch::Tensor(const Image&)>;

/// Negative cosine similarity between e(x_hat) and e(x); in [-1, 1].
torch::Tensor visual_feature_loss(const Image& x_hat, const Image& x, FeatureEncoder& encoder);
torch::Tensor visual_feature_loss(const Image& x_hat, const Image& x, const ImageEncoder& encoder);

/// SimSiam projector p_j and predictor p_d (both two-layer MLPs).
class ContrastiveHeadImpl : public torch::nn::Module {
public:
    ContrastiveHeadImpl(int in_features, int projection_dim = 64, int predictor_hidden = 32);
    /// Test hook: supply arbitrary projector / predictor modules.
    ContrastiveHeadImpl(torch::nn::Sequential projector, torch::nn::Sequential predictor);

    torch::Tensor project(const torch::Tensor& v) { return projector_->forward(v); }
    torch::Tensor predict(const torch::Tensor& p) { return predictor_->forward(p); }

private:
    torch::nn::Sequential projector_{nullptr}, predictor_{nullptr};
};
TORCH_MODULE(ContrastiveHead);

/// Global average pool of a (c,h,w) / (N,c,h,w) latent to (c) / (N,c).
torch::Tensor pool_latent(const torch::Tensor& z);

/// Symmetric SimSiam loss on pooled bottleneck vectors of two images from the
/// same series:  -1/2 cos(p_d(p_j(z_i)), sg(p_j(z_j))) - 1/2 cos(p_d(p_j(z_j)), sg(p_j(z_i))).
torch::Tensor contrastive_simsiam_loss(const torch::Tensor& z_i_pooled, const torch::Tensor& z_j_pooled,
                                       ContrastiveHead& head);

/// Everything one forward pass over a training pair produces.
struct PairOutputs {
    Image x_hat;
    Image x_j;
    torch::Tensor visual;       // l_v, undefined when not computed
    torch::Tensor contrastive;  // l_c
    torch::Tensor smoothness;   // l_s
};

struct LossBreakdown {
    torch::Tensor total;
    double reconstruction = 0.0;
    double visual = 0.0;
    double contrastive = 0.0;
    double smoothness = 0.0;
};

/// l_r + lambda_v l_v + lambda_c l_c + lambda_s l_s. Gradient scoping is a
/// property of how the terms were produced: l_c only sees backbone and head
/// parameters, l_s only sees flow-field parameters (detached latents).
/// Throws TrainingError naming the first non-finite term.
LossBreakdown total_loss(const PairOutputs& outputs, const LossWeights& weights);

}  // namespace imageflow
