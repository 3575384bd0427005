#include "imageflow/objectives.hpp"

#include "imageflow/error.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace imageflow {

namespace nn = torch::nn;

void LossWeights::validate() const {
    if (lambda_v < 0.0 || lambda_c < 0.0 || lambda_s < 0.0)
        throw ConfigError("loss weights must be non-negative");
}

torch::Tensor cosine_similarity(const torch::Tensor& a, const torch::Tensor& b, double eps) {
    auto dot = (a * b).sum(-1);
    auto denom = (a.square().sum(-1) * b.square().sum(-1)).sqrt().clamp_min(eps);
    return dot / denom;
}

torch::Tensor reconstruction_loss(const Image& x_hat, const Image& x) {
    check_same_shape(x_hat, x, "reconstruction_loss");
    return (x_hat - x).square().mean();
}

FeatureEncoderImpl::FeatureEncoderImpl(int in_channels, std::uint64_t seed) {
    // A private generator keeps the global RNG stream untouched.
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    net_ = register_module("net", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, 16, 3).stride(2).padding(1)),
                                                 nn::ReLU(),
                                                 nn::Conv2d(nn::Conv2dOptions(16, 32, 3).stride(2).padding(1)),
                                                 nn::ReLU(),
                                                 nn::Conv2d(nn::Conv2dOptions(32, 32, 3).stride(2).padding(1))));
    torch::NoGradGuard guard;
    for (auto& p : net_->parameters()) {
        const double fan_in = p.dim() > 1 ? static_cast<double>(p[0].numel()) : 16.0;
        p.copy_(torch::randn(p.sizes(), gen, p.options()) / std::sqrt(fan_in));
        p.set_requires_grad(false);
    }
}

torch::Tensor FeatureEncoderImpl::forward(const Image& x) {
    check_image(x, "FeatureEncoder");
    const bool batched = x.dim() == 4;
    auto h = net_->forward(batched ? x : x.unsqueeze(0)).flatten(1);
    return batched ? h : h.squeeze(0);
}

void FeatureEncoderImpl::load_state(const std::map<std::string, torch::Tensor>& tensors) {
    torch::NoGradGuard guard;
    for (auto& item : named_parameters()) {
        auto it = tensors.find(item.key());
        if (it == tensors.end()) throw ConfigError("feature encoder weights: missing '" + item.key() + "'");
        if (it->second.sizes() != item.value().sizes())
            throw ShapeError("feature encoder weights: shape mismatch for '" + item.key() + "'");
        item.value().copy_(it->second);
    }
}

torch::Tensor visual_feature_loss(const Image& x_hat, const Image& x, FeatureEncoder& encoder) {
    return visual_feature_loss(x_hat, x, ImageEncoder([&](const Image& y) { return encoder->forward(y); }));
}

torch::Tensor visual_feature_loss(const Image& x_hat, const Image& x, const ImageEncoder& encoder) {
    check_same_shape(x_hat, x, "visual_feature_loss");
    return -imageflow::cosine_similarity(encoder(x_hat), encoder(x)).mean();
}

ContrastiveHeadImpl::ContrastiveHeadImpl(int in_features, int projection_dim, int predictor_hidden) {
    projector_ = register_module("projector", nn::Sequential(nn::Linear(in_features, projection_dim), nn::ReLU(),
                                                             nn::Linear(projection_dim, projection_dim)));
    predictor_ = register_module("predictor", nn::Sequential(nn::Linear(projection_dim, predictor_hidden), nn::ReLU(),
                                                             nn::Linear(predictor_hidden, projection_dim)));
}

ContrastiveHeadImpl::ContrastiveHeadImpl(nn::Sequential projector, nn::Sequential predictor) {
    projector_ = register_module("projector", std::move(projector));
    predictor_ = register_module("predictor", std::move(predictor));
}

torch::Tensor pool_latent(const torch::Tensor& z) {
    if (z.dim() != 3 && z.dim() != 4) throw ShapeError("pool_latent: expected (c,h,w) or (N,c,h,w)");
    return z.mean({-2, -1});
}

torch::Tensor contrastive_simsiam_loss(const torch::Tensor& z_i_pooled, const torch::Tensor& z_j_pooled,
                                       ContrastiveHead& head) {
    check_same_shape(z_i_pooled, z_j_pooled, "contrastive_simsiam_loss");
    auto proj_i = head->project(z_i_pooled);
    auto proj_j = head->project(z_j_pooled);
    auto pred_i = head->predict(proj_i);
    auto pred_j = head->predict(proj_j);
    auto half_i = imageflow::cosine_similarity(pred_i, proj_j.detach()).mean();
    auto half_j = imageflow::cosine_similarity(pred_j, proj_i.detach()).mean();
    return -0.5 * half_i - 0.5 * half_j;
}

LossBreakdown total_loss(const PairOutputs& o, const LossWeights& w) {
    w.validate();
    LossBreakdown out;
    auto rec = reconstruction_loss(o.x_hat, o.x_j);
    out.reconstruction = rec.item<double>();
    if (!std::isfinite(out.reconstruction)) throw TrainingError("non-finite reconstruction loss (l_r)");
    out.total = rec;
    auto add = [&](const torch::Tensor& term, double weight, double& slot, const char* name) {
        if (!term.defined()) return;
        slot = term.item<double>();
        if (weight == 0.0) return;
        if (!std::isfinite(slot)) throw TrainingError(std::string("non-finite ") + name + " loss");
        out.total = out.total + weight * term;
    };
    add(o.visual, w.lambda_v, out.visual, "visual feature (l_v)");
    add(o.contrastive, w.lambda_c, out.contrastive, "contrastive (l_c)");
    add(o.smoothness, w.lambda_s, out.smoothness, "smoothness (l_s)");
    return out;
}

}  // namespace imageflow
