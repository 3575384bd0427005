#include "imageflow/metrics.hpp"

#include "imageflow/error.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace imageflow {

namespace F = torch::nn::functional;

std::string to_string(HdEmptyPolicy p) { return p == HdEmptyPolicy::skip ? "skip" : "max_diagonal"; }

HdEmptyPolicy hd_policy_from_string(const std::string& s) {
    if (s == "skip") return HdEmptyPolicy::skip;
    if (s == "max_diagonal") return HdEmptyPolicy::max_diagonal;
    throw ConfigError("unknown hd_empty_policy '" + s + "'");
}

void MetricConfig::validate() const {
    if (!(dynamic_range > 0.0)) throw ConfigError("metrics: dynamic_range must be positive");
    if (ssim_window < 1 || ssim_window % 2 == 0) throw ConfigError("metrics: ssim_window must be odd and positive");
}

double mse(const Image& a, const Image& b) {
    check_same_shape(a, b, "mse");
    return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
}

double mae(const Image& a, const Image& b) {
    check_same_shape(a, b, "mae");
    return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().mean().item<double>();
}

double psnr(const Image& a, const Image& b, const MetricConfig& config) {
    config.validate();
    const double err = mse(a, b);
    if (err == 0.0) return config.psnr_cap_db;
    const double r = config.dynamic_range;
    return 10.0 * std::log10(r * r / err);
}

double ssim(const Image& a, const Image& b, const MetricConfig& config) {
    config.validate();
    check_same_shape(a, b, "ssim");
    if (a.dim() < 2) throw ShapeError("ssim: expected an image");
    const int w = config.ssim_window;
    // (H,W) / (C,H,W) / (N,C,H,W) -> (K,1,H,W)
    auto as_planes = [](const torch::Tensor& t) {
        auto d = t.to(torch::kFloat64);
        return d.reshape({-1, 1, d.size(-2), d.size(-1)});
    };
    auto x = as_planes(a);
    auto y = as_planes(b);
    if (x.size(2) < w || x.size(3) < w) throw ShapeError("ssim: image smaller than the window");
    auto mean = [w](const torch::Tensor& t) { return F::avg_pool2d(t, F::AvgPool2dFuncOptions(w).stride(1)); };
    const double np = static_cast<double>(w) * w;
    const double cov_norm = np / (np - 1.0);
    auto ux = mean(x), uy = mean(y);
    auto vx = cov_norm * (mean(x * x) - ux * ux);
    auto vy = cov_norm * (mean(y * y) - uy * uy);
    auto vxy = cov_norm * (mean(x * y) - ux * uy);
    const double c1 = config.ssim_c1(), c2 = config.ssim_c2();
    auto s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    // per-plane mean, then mean over planes
    return s.mean({1, 2, 3}).mean().item<double>();
}

double dice(const Mask& x, const Mask& y) {
    check_mask(x, "dice");
    check_same_shape(x, y, "dice");
    auto xb = x.to(torch::kBool), yb = y.to(torch::kBool);
    const double sx = xb.sum().item<double>(), sy = yb.sum().item<double>();
    if (sx + sy == 0.0) return 1.0;
    const double inter = (xb & yb).sum().item<double>();
    return 2.0 * inter / (sx + sy);
}

namespace {

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    const double inf = std::numeric_limits<double>::infinity();
    auto meet = [&f](int q, int p) {
        return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
    };
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        double s = meet(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = meet(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double diff = q - v[j];
        d[q] = diff * diff + f[v[j]];
    }
}

}  // namespace

torch::Tensor distance_to_foreground(const Mask& mask) {
    check_mask(mask, "distance_to_foreground");
    auto m = mask.to(torch::kBool).contiguous();
    const auto h = m.size(0), w = m.size(1);
    const auto* px = m.data_ptr<bool>();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> grid(static_cast<std::size_t>(h * w));
    for (std::int64_t i = 0; i < h * w; ++i) grid[i] = px[i] ? 0.0 : inf;

    const auto n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    // columns
    f.resize(h); d.resize(h);
    for (std::int64_t c = 0; c < w; ++c) {
        for (std::int64_t r = 0; r < h; ++r) f[r] = grid[r * w + c];
        edt_1d(f, d, v, z);
        for (std::int64_t r = 0; r < h; ++r) grid[r * w + c] = d[r];
    }
    // rows
    f.resize(w); d.resize(w);
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) f[c] = grid[r * w + c];
        edt_1d(f, d, v, z);
        for (std::int64_t c = 0; c < w; ++c) grid[r * w + c] = d[c];
    }
    auto out = torch::from_blob(grid.data(), {h, w}, torch::kFloat64).clone();
    return out.sqrt();
}

double hausdorff(const Mask& x, const Mask& y, const MetricConfig& config) {
    check_mask(x, "hausdorff");
    check_same_shape(x, y, "hausdorff");
    auto xb = x.to(torch::kBool), yb = y.to(torch::kBool);
    const bool ex = !xb.any().item<bool>(), ey = !yb.any().item<bool>();
    if (ex && ey) return 0.0;
    if (ex || ey) {
        if (config.hd_empty_policy == HdEmptyPolicy::skip) return std::numeric_limits<double>::quiet_NaN();
        return std::hypot(static_cast<double>(x.size(0)), static_cast<double>(x.size(1)));
    }
    const double xy = distance_to_foreground(yb).masked_select(xb).max().item<double>();
    const double yx = distance_to_foreground(xb).masked_select(yb).max().item<double>();
    return std::max(xy, yx);
}

}  // namespace imageflow
