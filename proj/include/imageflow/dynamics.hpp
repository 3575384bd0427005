#pragma once

#include "imageflow/backbone.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace imageflow {

enum class FieldParameterization { position, position_and_time };
enum class FieldSharing { per_layer, per_resolution, bottleneck_only };
enum class SolverMethod { euler, rk4, euler_maruyama };

std::string to_string(FieldParameterization p);
std::string to_string(FieldSharing s);
std::string to_string(SolverMethod m);
FieldParameterization parameterization_from_string(const std::string& s);
FieldSharing sharing_from_string(const std::string& s);
SolverMethod solver_from_string(const std::string& s);

struct SolverConfig {
    SolverMethod method = SolverMethod::rk4;
    int steps_per_unit_time = 10;
    bool allow_backward = false;
};

/// max(1, ceil(steps_per_unit_time * |dt|)); spans that are an exact multiple
/// of the step are not bumped up by floating-point noise.
std::int64_t step_count(const SolverConfig& solver, double dt);

/// dz/dtau for one latent layer. Must preserve the shape of z.
using VectorField = std::function<torch::Tensor(const torch::Tensor& z, double tau)>;
/// Per-channel diffusion scale sigma(tau), shape (c).
using DiffusionScale = std::function<torch::Tensor(double tau)>;

/// Evolve each latent independently from t_i to t_j with its field. An empty
/// field leaves its layer untouched. Differentiable through every step.
std::vector<torch::Tensor> integrate_ode(const std::vector<torch::Tensor>& z, double t_i, double t_j,
                                         const std::vector<VectorField>& fields, const SolverConfig& solver);

/// Euler-Maruyama: z <- z + f(z) h + sigma(tau) sqrt(h) xi. The Brownian
/// increments for layer b come from a generator seeded by (seed, b).
std::vector<torch::Tensor> integrate_sde(const std::vector<torch::Tensor>& z, double t_i, double t_j,
                                         const std::vector<VectorField>& fields,
                                         const std::vector<DiffusionScale>& sigmas, const SolverConfig& solver,
                                         std::uint64_t seed);

struct FlowFieldConfig {
    FieldParameterization parameterization = FieldParameterization::position;
    FieldSharing sharing = FieldSharing::per_layer;
    double output_init_scale = 0.1;  // shrinks the second conv at init
};

/// Two-layer convolutional vector field whose input and output channel counts
/// match its latent. In position_and_time mode a constant tau channel is
/// appended to the input.
class FlowFieldImpl : public torch::nn::Module {
public:
    FlowFieldImpl(int channels, FieldParameterization parameterization, double output_init_scale = 0.1);
    torch::Tensor forward(const torch::Tensor& z, double tau);

private:
    FieldParameterization parameterization_;
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(FlowField);

class FlowFieldSetImpl : public torch::nn::Module {
public:
    FlowFieldSetImpl(const BackboneConfig& backbone, FlowFieldConfig config);

    /// One entry per latent layer; empty where the layer is not evolved.
    std::vector<VectorField> vector_fields();
    std::optional<std::size_t> field_index(std::size_t layer) const { return layer_to_field_[layer]; }
    std::size_t num_fields() const { return fields_->size(); }
    const FlowFieldConfig& config() const { return config_; }

private:
    FlowFieldConfig config_;
    torch::nn::ModuleList fields_;
    std::vector<std::optional<std::size_t>> layer_to_field_;
};
TORCH_MODULE(FlowFieldSet);

/// sigma(tau): scalar tau -> per-channel positive scales via a small MLP with
/// softplus output.
class DiffusionTermImpl : public torch::nn::Module {
public:
    DiffusionTermImpl(int channels, int hidden = 16, double initial_scale = 0.05);
    torch::Tensor forward(double tau);

private:
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(DiffusionTerm);

class DiffusionTermSetImpl : public torch::nn::Module {
public:
    explicit DiffusionTermSetImpl(const BackboneConfig& backbone, double initial_scale = 0.05);
    /// `scale` multiplies every sigma; 0 collapses the SDE onto its drift.
    std::vector<DiffusionScale> scales(double scale = 1.0);

private:
    torch::nn::ModuleList terms_;
};
TORCH_MODULE(DiffusionTermSet);

/// Mean squared field output: for every layer that has a field, the mean over
/// elements of f(z)^2 averaged over the sampled latents, then averaged over
/// layers. Latents are detached so the value only depends on field weights.
torch::Tensor field_output_norms(const std::vector<VectorField>& fields,
                                 const std::vector<std::vector<torch::Tensor>>& samples, double tau = 0.0);

/// Alternative smoothness measure: mean squared field parameter value.
torch::Tensor field_parameter_norm(torch::nn::Module& fields);

}  // namespace imageflow
