#pragma once

#include "imageflow/backbone.hpp"
#include "imageflow/dynamics.hpp"
#include "imageflow/objectives.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace imageflow {

enum class Variant { ode, sde, t_unet };
enum class SmoothnessMode { output_norm, parameter_norm };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(SmoothnessMode m);
SmoothnessMode smoothness_from_string(const std::string& s);

struct ModelConfig {
    Variant variant = Variant::ode;
    BackboneConfig backbone;
    FlowFieldConfig flow;
    SolverConfig solver;
    double input_noise_std = 0.05;        // training-time denoising perturbation of x_i
    double diffusion_init = 0.05;         // initial sigma for the SDE variant
    int time_embedding_dim = 64;          // t_unet only
    double time_embedding_scale = 1000.0; // t_unet: embeds dt * scale
    int projection_dim = 64;
    std::uint64_t feature_encoder_seed = 1234;
    std::string feature_encoder_weights;  // tensor archive replacing the random frozen encoder
    SmoothnessMode smoothness = SmoothnessMode::output_norm;

    void validate() const;
};

/// Inputs of one forward pass over a pair. Times are normalized.
struct PairInputs {
    Image x_i;
    Image x_j;
    double t_i = 0.0;
    double t_j = 0.0;
};

/// The forecasting network: UNet backbone with per-layer flow fields (ode/sde)
/// or the time-conditional UNet baseline (t_unet), plus the contrastive head
/// and the frozen feature encoder used by the training objective.
class ForecastNetImpl : public torch::nn::Module {
public:
    explicit ForecastNetImpl(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    bool is_flow_model() const { return config_.variant != Variant::t_unet; }

    MultiscaleLatent encode(const Image& x);
    Image decode(const MultiscaleLatent& z);
    /// Integrate latents from t_i to t_j: ODE for the ode variant, SDE with the
    /// given Brownian seed for the sde variant.
    MultiscaleLatent evolve(const MultiscaleLatent& z, double t_i, double t_j, std::uint64_t seed = 0,
                            bool allow_backward = false);
    /// Encode -> evolve -> decode (flow models) or the time-conditional UNet.
    Image forecast(const Image& x_i, double t_i, double t_j, std::uint64_t seed = 0, bool allow_backward = false);
    /// Time-conditional baseline forward; only valid for the t_unet variant.
    Image forward_t_unet(const Image& x_i, double t_i, double t_j);

    /// Everything the total loss needs. `training` adds input noise (seeded by
    /// noise_seed); Brownian increments are seeded by noise_seed as well.
    PairOutputs forward_pair(const PairInputs& in, const LossWeights& weights, bool training,
                             std::uint64_t noise_seed);

    std::vector<VectorField> vector_fields();
    std::vector<DiffusionScale> diffusion_scales();
    torch::Tensor smoothness_term(const std::vector<std::vector<torch::Tensor>>& samples);

    UNet& backbone() { return backbone_; }
    FlowFieldSet& fields() { return fields_; }
    DiffusionTermSet& diffusion() { return diffusion_; }
    ContrastiveHead& head() { return head_; }
    FeatureEncoder& feature_encoder() { return feature_encoder_; }

    std::vector<torch::Tensor> backbone_parameters();
    std::vector<torch::Tensor> field_parameters();       // flow fields + diffusion terms
    std::vector<torch::Tensor> head_parameters();
    std::vector<torch::Tensor> trainable_parameters();

    /// Multiplier applied to every sigma (1 = learned diffusion, 0 = drift only).
    double diffusion_scale = 1.0;

private:
    ModelConfig config_;
    UNet backbone_{nullptr};
    FlowFieldSet fields_{nullptr};
    DiffusionTermSet diffusion_{nullptr};
    ContrastiveHead head_{nullptr};
    FeatureEncoder feature_encoder_{nullptr};
};
TORCH_MODULE(ForecastNet);

/// Fresh network with the same config and a copy of every parameter/buffer.
ForecastNet clone_model(ForecastNet& model);
/// Copy parameter and buffer values from `src` into `dst` (same config).
void copy_weights(ForecastNet& src, ForecastNet& dst);

struct TrajectorySamples {
    std::vector<Image> samples;
    Image dispersion;  // per-pixel standard deviation across samples
};

/// Several SDE forecasts from the same starting image, one per seed.
TrajectorySamples sample_trajectories(ForecastNet& model, const Image& x_i, double t_i, double t_j,
                                      const std::vector<std::uint64_t>& seeds);

}  // namespace imageflow
