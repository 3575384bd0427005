#include "imageflow/model.hpp"

#include "imageflow/archive.hpp"
#include "imageflow/error.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace imageflow {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::ode: return "ode";
        case Variant::sde: return "sde";
        case Variant::t_unet: return "t_unet";
    }
    return "ode";
}

Variant variant_from_string(const std::string& s) {
    if (s == "ode") return Variant::ode;
    if (s == "sde") return Variant::sde;
    if (s == "t_unet" || s == "tunet") return Variant::t_unet;
    throw ConfigError("unknown model variant '" + s + "'");
}

std::string to_string(SmoothnessMode m) {
    return m == SmoothnessMode::output_norm ? "output_norm" : "parameter_norm";
}

SmoothnessMode smoothness_from_string(const std::string& s) {
    if (s == "output_norm") return SmoothnessMode::output_norm;
    if (s == "parameter_norm") return SmoothnessMode::parameter_norm;
    throw ConfigError("unknown smoothness mode '" + s + "'");
}

void ModelConfig::validate() const {
    backbone.validate();
    if (solver.steps_per_unit_time < 1) throw ConfigError("dynamics: steps_per_unit_time must be >= 1");
    if (variant == Variant::ode && solver.method == SolverMethod::euler_maruyama)
        throw ConfigError("dynamics: the ode variant needs an ODE method (euler or rk4)");
    if (input_noise_std < 0.0) throw ConfigError("backbone: input_noise_std must be non-negative");
    if (diffusion_init <= 0.0) throw ConfigError("dynamics: diffusion_init must be positive");
    if (variant == Variant::t_unet && (time_embedding_dim <= 0 || time_embedding_dim % 2 != 0))
        throw ConfigError("backbone: time_embedding_dim must be positive and even for t_unet");
    if (projection_dim <= 0) throw ConfigError("objectives: projection_dim must be positive");
}

ForecastNetImpl::ForecastNetImpl(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    auto bb = config_.backbone;
    bb.sigmoid_output = true;
    bb.time_embedding_dim = config_.variant == Variant::t_unet ? config_.time_embedding_dim : 0;
    config_.backbone = bb;
    backbone_ = register_module("backbone", UNet(bb));
    if (is_flow_model()) fields_ = register_module("fields", FlowFieldSet(bb, config_.flow));
    if (config_.variant == Variant::sde)
        diffusion_ = register_module("diffusion", DiffusionTermSet(bb, config_.diffusion_init));
    const auto shapes = latent_shapes(bb);
    head_ = register_module("head", ContrastiveHead(static_cast<int>(shapes.back()[0]), config_.projection_dim,
                                                    std::max(1, config_.projection_dim / 2)));
    feature_encoder_ = register_module("feature_encoder", FeatureEncoder(bb.in_channels, config_.feature_encoder_seed));
    if (!config_.feature_encoder_weights.empty()) {
        auto archive = read_tensor_archive(config_.feature_encoder_weights);
        feature_encoder_->load_state({archive.tensors.begin(), archive.tensors.end()});
    }
}

MultiscaleLatent ForecastNetImpl::encode(const Image& x) {
    if (!is_flow_model()) throw ConfigError("encode: the t_unet variant has no time-free latent space");
    return backbone_->encode(x);
}

Image ForecastNetImpl::decode(const MultiscaleLatent& z) {
    if (!is_flow_model()) throw ConfigError("decode: the t_unet variant has no time-free latent space");
    return backbone_->decode(z);
}

std::vector<VectorField> ForecastNetImpl::vector_fields() {
    if (!fields_) throw ConfigError("model has no flow fields");
    return fields_->vector_fields();
}

std::vector<DiffusionScale> ForecastNetImpl::diffusion_scales() {
    if (!diffusion_) throw ConfigError("model has no diffusion terms (not an sde variant)");
    return diffusion_->scales(diffusion_scale);
}

MultiscaleLatent ForecastNetImpl::evolve(const MultiscaleLatent& z, double t_i, double t_j, std::uint64_t seed,
                                         bool allow_backward) {
    MultiscaleLatent out{{}, z.resolution_of};
    auto solver = config_.solver;
    solver.allow_backward = allow_backward;
    if (config_.variant == Variant::sde) {
        out.layers = integrate_sde(z.layers, t_i, t_j, vector_fields(), diffusion_scales(), solver, seed);
    } else if (config_.variant == Variant::ode) {
        out.layers = integrate_ode(z.layers, t_i, t_j, vector_fields(), solver);
    } else {
        throw ConfigError("evolve: the t_unet variant has no flow fields");
    }
    return out;
}

Image ForecastNetImpl::forward_t_unet(const Image& x_i, double t_i, double t_j) {
    if (config_.variant != Variant::t_unet) throw ConfigError("forward_t_unet: model is not a t_unet variant");
    const std::int64_t n = x_i.dim() == 4 ? x_i.size(0) : 1;
    auto dt = torch::full({n}, (t_j - t_i) * config_.time_embedding_scale, torch::kFloat32);
    auto emb = backbone_->embed_time(dt);
    auto z = backbone_->encode(x_i, emb);
    return backbone_->decode(z, emb);
}

Image ForecastNetImpl::forecast(const Image& x_i, double t_i, double t_j, std::uint64_t seed, bool allow_backward) {
    if (!is_flow_model()) return forward_t_unet(x_i, t_i, t_j);
    return decode(evolve(encode(x_i), t_i, t_j, seed, allow_backward));
}

torch::Tensor ForecastNetImpl::smoothness_term(const std::vector<std::vector<torch::Tensor>>& samples) {
    if (config_.smoothness == SmoothnessMode::parameter_norm) return field_parameter_norm(*fields_);
    return field_output_norms(vector_fields(), samples);
}

PairOutputs ForecastNetImpl::forward_pair(const PairInputs& in, const LossWeights& weights, bool training,
                                          std::uint64_t noise_seed) {
    check_same_shape(in.x_i, in.x_j, "forward_pair");
    auto x_in = in.x_i;
    if (training && config_.input_noise_std > 0.0) {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(noise_seed);
        x_in = x_in + config_.input_noise_std * torch::randn(x_in.sizes(), gen, x_in.options());
    }
    PairOutputs out;
    out.x_j = in.x_j;
    if (!is_flow_model()) {
        out.x_hat = forward_t_unet(x_in, in.t_i, in.t_j);
    } else {
        auto z_i = encode(x_in);
        auto z_j = evolve(z_i, in.t_i, in.t_j, noise_seed);
        out.x_hat = decode(z_j);
        if (weights.lambda_c > 0.0) {
            auto z_j_obs = encode(in.x_j);
            out.contrastive = contrastive_simsiam_loss(pool_latent(z_i.bottleneck()), pool_latent(z_j_obs.bottleneck()),
                                                       head_);
        }
        if (weights.lambda_s > 0.0) out.smoothness = smoothness_term({z_i.layers, z_j.layers});
    }
    if (weights.lambda_v > 0.0) out.visual = visual_feature_loss(out.x_hat, in.x_j, feature_encoder_);
    return out;
}

std::vector<torch::Tensor> ForecastNetImpl::backbone_parameters() { return backbone_->parameters(); }

std::vector<torch::Tensor> ForecastNetImpl::field_parameters() {
    std::vector<torch::Tensor> out;
    if (fields_) out = fields_->parameters();
    if (diffusion_)
        for (auto& p : diffusion_->parameters()) out.push_back(p);
    return out;
}

std::vector<torch::Tensor> ForecastNetImpl::head_parameters() { return head_->parameters(); }

std::vector<torch::Tensor> ForecastNetImpl::trainable_parameters() {
    std::vector<torch::Tensor> out;
    for (auto& p : parameters())
        if (p.requires_grad()) out.push_back(p);
    return out;
}

void copy_weights(ForecastNet& src, ForecastNet& dst) {
    torch::NoGradGuard guard;
    auto sp = src->named_parameters();
    auto dp = dst->named_parameters();
    for (auto& item : dp) {
        const auto* s = sp.find(item.key());
        if (!s) throw Error("copy_weights: missing parameter " + item.key());
        item.value().copy_(*s);
    }
    auto sb = src->named_buffers();
    for (auto& item : dst->named_buffers()) {
        const auto* s = sb.find(item.key());
        if (s) item.value().copy_(*s);
    }
    dst->diffusion_scale = src->diffusion_scale;
}

ForecastNet clone_model(ForecastNet& model) {
    ForecastNet copy(model->config());
    auto params = model->parameters();
    if (!params.empty()) copy->to(params.front().scalar_type());
    copy_weights(model, copy);
    copy->train(model->is_training());
    return copy;
}

TrajectorySamples sample_trajectories(ForecastNet& model, const Image& x_i, double t_i, double t_j,
                                      const std::vector<std::uint64_t>& seeds) {
    if (model->config().variant != Variant::sde)
        throw ConfigError("sample_trajectories requires an sde model; use predict/integrate_ode for ode models");
    if (seeds.empty()) throw ConfigError("sample_trajectories: need at least one seed");
    torch::NoGradGuard guard;
    TrajectorySamples out;
    for (auto s : seeds) out.samples.push_back(model->forecast(x_i, t_i, t_j, s));
    auto stacked = torch::stack(out.samples);
    out.dispersion = stacked.std(0, /*unbiased=*/false);
    return out;
}

}  // namespace imageflow
