#include "imageflow/registration.hpp"

#include "imageflow/error.hpp"

#include <cmath>
#include <limits>

namespace imageflow {

namespace F = torch::nn::functional;

namespace {

torch::Tensor as_nchw_luminance(const Image& x) {
    check_image(x, "register_to_anchor");
    auto single = x.dim() == 4 ? x.squeeze(0) : x;
    return single.mean(0, /*keepdim=*/true).unsqueeze(0).to(torch::kFloat64);
}

// Separable Gaussian blur with replicate padding; sigma in pixels.
torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
    if (sigma <= 0.0) return x;
    const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    auto offsets = torch::arange(-radius, radius + 1, torch::kFloat64);
    auto k = torch::exp(-offsets.square() / (2.0 * sigma * sigma));
    k = (k / k.sum()).to(x.scalar_type());
    auto padded = F::pad(x, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
    auto rows = F::conv2d(padded, k.view({1, 1, 1, -1}));
    return F::conv2d(rows, k.view({1, 1, -1, 1}));
}

torch::Tensor pyramid_level(const torch::Tensor& x, int factor, double sigma) {
    auto blurred = gaussian_blur(x, sigma);
    if (factor <= 1) return blurred;
    return F::avg_pool2d(blurred, F::AvgPool2dFuncOptions(factor).stride(factor).ceil_mode(true));
}

// Parameters are the affine_grid theta offsets from the identity. Theta is in
// normalized coordinates, which are resolution independent, so the same
// parameters carry over between pyramid levels.
torch::Tensor theta_from(const torch::Tensor& params) {
    auto eye = torch::tensor({1.0, 0.0, 0.0, 0.0, 1.0, 0.0}, torch::kFloat64);
    return (eye + params).view({1, 2, 3});
}

}  // namespace

RegistrationResult register_to_anchor(const Image& moving, const Image& fixed, const RegistrationConfig& config) {
    check_same_shape(moving, fixed, "register_to_anchor");
    if (config.pyramid_levels.size() != config.iterations.size())
        throw ConfigError("registration: pyramid_levels and iterations must have equal length");

    torch::NoGradGuard outer_guard;
    const auto mov = as_nchw_luminance(moving);
    const auto fix = as_nchw_luminance(fixed);
    const auto h = mov.size(2), w = mov.size(3);

    RegistrationResult result;
    auto params = torch::zeros({6}, torch::kFloat64);
    auto full_loss = [&](const torch::Tensor& p) {
        return (warp_theta(mov, theta_from(p), Interpolation::bilinear) - fix).square().mean().item<double>();
    };
    // candidates are ranked on the smoothed objective the optimizer sees
    const auto mov_s = pyramid_level(mov, 1, config.smoothing_sigma);
    const auto fix_s = pyramid_level(fix, 1, config.smoothing_sigma);
    auto objective = [&](const torch::Tensor& p) {
        return (warp_theta(mov_s, theta_from(p), Interpolation::bilinear) - fix_s).square().mean().item<double>();
    };
    result.initial_loss = full_loss(params);
    auto best_params = params.clone();
    double best_loss = objective(params);
    bool stalled_at_finest = false;
    bool finite = true;

    for (std::size_t level = 0; level < config.pyramid_levels.size(); ++level) {
        const auto m = pyramid_level(mov, config.pyramid_levels[level], config.smoothing_sigma);
        const auto f = pyramid_level(fix, config.pyramid_levels[level], config.smoothing_sigma);
        auto p = params.clone().set_requires_grad(true);
        torch::optim::Adam opt({p}, torch::optim::AdamOptions(config.learning_rate));
        std::vector<double> history;
        bool stalled = false;
        for (int it = 0; it < config.iterations[level]; ++it) {
            torch::AutoGradMode enable(true);
            opt.zero_grad();
            auto loss = (warp_theta(m, theta_from(p), Interpolation::bilinear) - f).square().mean();
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                finite = false;
                break;
            }
            history.push_back(value);
            loss.backward();
            opt.step();
            if (static_cast<int>(history.size()) > config.patience) {
                const double past = history[history.size() - 1 - config.patience];
                if (past - value <= config.stall_tolerance * std::max(past, 1e-12)) {
                    stalled = true;
                    break;
                }
            }
        }
        params = p.detach().clone();
        const double l = objective(params);
        if (std::isfinite(l) && l < best_loss) {
            best_loss = l;
            best_params = params.clone();
        }
        if (!finite) break;
        if (level + 1 == config.pyramid_levels.size()) stalled_at_finest = stalled;
    }

    result.transform = from_theta(theta_from(best_params), h, w);
    result.loss = full_loss(best_params);
    if (!finite) {
        result.converged = false;
        result.warning = "registration diverged (non-finite loss); returning best-so-far transform";
    } else if (!stalled_at_finest && best_loss > 1e-12) {
        result.converged = false;
        result.warning = "registration still improving when the iteration budget ran out; returning best-so-far transform";
    }
    if (!result.transform.is_invertible()) {
        result.transform = AffineTransform::identity();
        result.loss = result.initial_loss;
        result.converged = false;
        result.warning = "registration produced a singular transform; falling back to identity";
    }
    result.warped = warp_affine(moving, result.transform, Interpolation::bilinear).clamp(0.0, 1.0);
    return result;
}

SeriesRegistration register_series(const LongitudinalSeries& series, const RegistrationConfig& config) {
    if (series.size() < 2) throw ConfigError("register_series: series " + series.series_id + " has fewer than 2 visits");
    SeriesRegistration out;
    out.series = series;
    out.transforms.push_back(AffineTransform::identity());
    const auto& anchor = series.images.front();
    for (std::size_t k = 1; k < series.size(); ++k) {
        auto r = register_to_anchor(series.images[k], anchor, config);
        out.series.images[k] = r.warped;
        if (series.masks) (*out.series.masks)[k] = warp_affine((*series.masks)[k], r.transform);
        if (!r.converged) out.warnings.push_back(series.series_id + " visit " + std::to_string(k) + ": " + r.warning);
        out.transforms.push_back(r.transform);
    }
    return out;
}

}  // namespace imageflow
