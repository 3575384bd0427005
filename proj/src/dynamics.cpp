#include "imageflow/dynamics.hpp"

#include "imageflow/error.hpp"
#include "imageflow/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace imageflow {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string to_string(FieldParameterization p) {
    return p == FieldParameterization::position ? "position" : "position_and_time";
}

std::string to_string(FieldSharing s) {
    switch (s) {
        case FieldSharing::per_layer: return "per_layer";
        case FieldSharing::per_resolution: return "per_resolution";
        case FieldSharing::bottleneck_only: return "bottleneck_only";
    }
    return "per_layer";
}

std::string to_string(SolverMethod m) {
    switch (m) {
        case SolverMethod::euler: return "euler";
        case SolverMethod::rk4: return "rk4";
        case SolverMethod::euler_maruyama: return "euler_maruyama";
    }
    return "rk4";
}

FieldParameterization parameterization_from_string(const std::string& s) {
    if (s == "position") return FieldParameterization::position;
    if (s == "position_and_time") return FieldParameterization::position_and_time;
    throw ConfigError("unknown field parameterization '" + s + "'");
}

FieldSharing sharing_from_string(const std::string& s) {
    if (s == "per_layer") return FieldSharing::per_layer;
    if (s == "per_resolution") return FieldSharing::per_resolution;
    if (s == "bottleneck_only") return FieldSharing::bottleneck_only;
    throw ConfigError("unknown field sharing '" + s + "'");
}

SolverMethod solver_from_string(const std::string& s) {
    if (s == "euler") return SolverMethod::euler;
    if (s == "rk4") return SolverMethod::rk4;
    if (s == "euler_maruyama") return SolverMethod::euler_maruyama;
    throw ConfigError("unknown solver method '" + s + "'");
}

std::int64_t step_count(const SolverConfig& solver, double dt) {
    if (solver.steps_per_unit_time < 1) throw ConfigError("solver: steps_per_unit_time must be >= 1");
    const double raw = solver.steps_per_unit_time * std::abs(dt);
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw))));
}

namespace {

void check_span(double t_i, double t_j, const SolverConfig& solver) {
    if (!std::isfinite(t_i) || !std::isfinite(t_j)) throw ConfigError("integrate: non-finite time");
    if (t_j < t_i && !solver.allow_backward)
        throw ConfigError("integrate: t_j < t_i requires allow_backward");
}

void check_finite(const torch::Tensor& z, std::size_t layer, std::int64_t step) {
    if (!torch::isfinite(z).all().item<bool>())
        throw IntegrationError(layer, step,
                               "integration produced NaN/Inf in layer " + std::to_string(layer) + " at step " +
                                   std::to_string(step));
}

torch::Tensor broadcast_sigma(const torch::Tensor& sigma, const torch::Tensor& z) {
    // (c) -> (c,1,1) or (1,c,1,1)
    std::vector<std::int64_t> shape(z.dim(), 1);
    shape[z.dim() - 3] = sigma.numel();
    return sigma.reshape(shape);
}

}  // namespace

std::vector<torch::Tensor> integrate_ode(const std::vector<torch::Tensor>& z, double t_i, double t_j,
                                         const std::vector<VectorField>& fields, const SolverConfig& solver) {
    check_span(t_i, t_j, solver);
    if (fields.size() != z.size()) throw ShapeError("integrate_ode: one field entry per latent required");
    if (solver.method == SolverMethod::euler_maruyama)
        throw ConfigError("integrate_ode: euler_maruyama is an SDE method; use integrate_sde");
    const double dt = t_j - t_i;
    if (dt == 0.0) return z;
    const std::int64_t n = step_count(solver, dt);
    const double h = dt / static_cast<double>(n);

    std::vector<torch::Tensor> out;
    out.reserve(z.size());
    for (std::size_t b = 0; b < z.size(); ++b) {
        if (!fields[b]) {
            out.push_back(z[b]);
            continue;
        }
        const auto& f = fields[b];
        auto state = z[b];
        for (std::int64_t k = 0; k < n; ++k) {
            const double tau = t_i + static_cast<double>(k) * h;
            if (solver.method == SolverMethod::euler) {
                state = state + f(state, tau) * h;
            } else {
                auto k1 = f(state, tau);
                auto k2 = f(state + k1 * (h / 2.0), tau + h / 2.0);
                auto k3 = f(state + k2 * (h / 2.0), tau + h / 2.0);
                auto k4 = f(state + k3 * h, tau + h);
                state = state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            check_finite(state, b, k);
        }
        out.push_back(state);
    }
    return out;
}

std::vector<torch::Tensor> integrate_sde(const std::vector<torch::Tensor>& z, double t_i, double t_j,
                                         const std::vector<VectorField>& fields,
                                         const std::vector<DiffusionScale>& sigmas, const SolverConfig& solver,
                                         std::uint64_t seed) {
    check_span(t_i, t_j, solver);
    if (fields.size() != z.size() || sigmas.size() != z.size())
        throw ShapeError("integrate_sde: one field and one diffusion entry per latent required");
    const double dt = t_j - t_i;
    if (dt == 0.0) return z;
    const std::int64_t n = step_count(solver, dt);
    const double h = dt / static_cast<double>(n);
    const double sqrt_h = std::sqrt(std::abs(h));

    std::vector<torch::Tensor> out;
    out.reserve(z.size());
    for (std::size_t b = 0; b < z.size(); ++b) {
        if (!fields[b] && !sigmas[b]) {
            out.push_back(z[b]);
            continue;
        }
        torch::Generator gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, {b}));
        auto state = z[b];
        for (std::int64_t k = 0; k < n; ++k) {
            const double tau = t_i + static_cast<double>(k) * h;
            auto next = fields[b] ? state + fields[b](state, tau) * h : state;
            if (sigmas[b]) {
                auto xi = torch::randn(state.sizes(), gen, state.options().requires_grad(false));
                next = next + broadcast_sigma(sigmas[b](tau), state) * xi * sqrt_h;
            }
            state = next;
            check_finite(state, b, k);
        }
        out.push_back(state);
    }
    return out;
}

FlowFieldImpl::FlowFieldImpl(int channels, FieldParameterization parameterization, double output_init_scale)
    : parameterization_(parameterization) {
    const int in = channels + (parameterization == FieldParameterization::position_and_time ? 1 : 0);
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, channels, 3).padding(1)));
    conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    torch::NoGradGuard guard;
    conv2_->weight.mul_(output_init_scale);
    conv2_->bias.mul_(output_init_scale);
}

torch::Tensor FlowFieldImpl::forward(const torch::Tensor& z, double tau) {
    auto input = z;
    if (parameterization_ == FieldParameterization::position_and_time) {
        auto shape = z.sizes().vec();
        shape[z.dim() - 3] = 1;
        input = torch::cat({z, torch::full(shape, tau, z.options().requires_grad(false))}, z.dim() - 3);
    }
    return conv2_(F::silu(conv1_(input)));
}

FlowFieldSetImpl::FlowFieldSetImpl(const BackboneConfig& backbone, FlowFieldConfig config) : config_(config) {
    fields_ = register_module("fields", nn::ModuleList());
    const auto shapes = latent_shapes(backbone);
    const auto res = latent_resolutions(backbone);
    const std::size_t B = shapes.size();
    layer_to_field_.assign(B, std::nullopt);
    auto make = [&](std::size_t layer) {
        fields_->push_back(FlowField(static_cast<int>(shapes[layer][0]), config_.parameterization,
                                     config_.output_init_scale));
        return fields_->size() - 1;
    };
    switch (config_.sharing) {
        case FieldSharing::per_layer:
            for (std::size_t b = 0; b < B; ++b) layer_to_field_[b] = make(b);
            break;
        case FieldSharing::per_resolution: {
            std::vector<std::optional<std::size_t>> by_res(backbone.num_resolutions());
            for (std::size_t b = 0; b < B; ++b) {
                if (!by_res[res[b]]) by_res[res[b]] = make(b);
                layer_to_field_[b] = by_res[res[b]];
            }
            break;
        }
        case FieldSharing::bottleneck_only:
            layer_to_field_[B - 1] = make(B - 1);
            break;
    }
}

std::vector<VectorField> FlowFieldSetImpl::vector_fields() {
    std::vector<VectorField> out(layer_to_field_.size());
    for (std::size_t b = 0; b < layer_to_field_.size(); ++b) {
        if (!layer_to_field_[b]) continue;
        auto field = fields_[*layer_to_field_[b]]->as<FlowFieldImpl>();
        out[b] = [field](const torch::Tensor& z, double tau) { return field->forward(z, tau); };
    }
    return out;
}

DiffusionTermImpl::DiffusionTermImpl(int channels, int hidden, double initial_scale) {
    fc1_ = register_module("fc1", nn::Linear(1, hidden));
    fc2_ = register_module("fc2", nn::Linear(hidden, channels));
    torch::NoGradGuard guard;
    fc2_->weight.mul_(0.1);
    fc2_->bias.fill_(std::log(std::expm1(initial_scale)));
}

torch::Tensor DiffusionTermImpl::forward(double tau) {
    auto t = torch::full({1, 1}, tau, fc1_->weight.options().requires_grad(false));
    return F::softplus(fc2_(F::silu(fc1_(t)))).squeeze(0);
}

DiffusionTermSetImpl::DiffusionTermSetImpl(const BackboneConfig& backbone, double initial_scale) {
    terms_ = register_module("terms", nn::ModuleList());
    for (const auto& s : latent_shapes(backbone))
        terms_->push_back(DiffusionTerm(static_cast<int>(s[0]), 16, initial_scale));
}

std::vector<DiffusionScale> DiffusionTermSetImpl::scales(double scale) {
    std::vector<DiffusionScale> out;
    for (std::size_t b = 0; b < terms_->size(); ++b) {
        auto term = terms_[b]->as<DiffusionTermImpl>();
        out.push_back([term, scale](double tau) { return term->forward(tau) * scale; });
    }
    return out;
}

torch::Tensor field_output_norms(const std::vector<VectorField>& fields,
                                 const std::vector<std::vector<torch::Tensor>>& samples, double tau) {
    torch::Tensor total;
    int layers = 0;
    for (std::size_t b = 0; b < fields.size(); ++b) {
        if (!fields[b]) continue;
        torch::Tensor acc;
        int count = 0;
        for (const auto& sample : samples) {
            if (b >= sample.size()) throw ShapeError("field_output_norms: sample has too few layers");
            auto v = fields[b](sample[b].detach(), tau).square().mean();
            acc = acc.defined() ? acc + v : v;
            ++count;
        }
        if (count == 0) continue;
        auto layer_mean = acc / static_cast<double>(count);
        total = total.defined() ? total + layer_mean : layer_mean;
        ++layers;
    }
    if (layers == 0) return torch::zeros({}, torch::kFloat32);
    return total / static_cast<double>(layers);
}

torch::Tensor field_parameter_norm(torch::nn::Module& fields) {
    torch::Tensor total;
    std::int64_t n = 0;
    for (const auto& p : fields.parameters()) {
        auto s = p.square().sum();
        total = total.defined() ? total + s : s;
        n += p.numel();
    }
    if (n == 0) return torch::zeros({}, torch::kFloat32);
    return total / static_cast<double>(n);
}

}  // namespace imageflow
