#include "imageflow/baselines.hpp"

#include "imageflow/error.hpp"

#include <cmath>

namespace imageflow {

void ExtrapolationInput::validate(std::size_t min_points) const {
    if (images.size() != times.size()) throw ShapeError("extrapolation: images and times differ in length");
    if (images.size() < min_points)
        throw ConfigError("extrapolation: need at least " + std::to_string(min_points) + " visits, got " +
                          std::to_string(images.size()));
    for (std::size_t k = 0; k < images.size(); ++k) {
        check_image(images[k], "extrapolation");
        if (k > 0) {
            check_same_shape(images[0], images[k], "extrapolation");
            if (!(times[k] > times[k - 1])) throw ConfigError("extrapolation: times must be strictly increasing");
        }
    }
    if (!(target_time > times.back())) throw ConfigError("extrapolation: target time must follow the last visit");
}

std::vector<double> linear_weights(const std::vector<double>& t, double target) {
    const auto n = t.size();
    double mean = 0.0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(n);
    double sxx = 0.0;
    for (double v : t) sxx += (v - mean) * (v - mean);
    std::vector<double> w(n);
    // y_hat = ybar + slope (target - tbar),  slope = sum (t_k - tbar) y_k / sxx
    for (std::size_t k = 0; k < n; ++k) w[k] = 1.0 / static_cast<double>(n) + (target - mean) * (t[k] - mean) / sxx;
    return w;
}

namespace {

std::vector<double> quadratic_weights(const std::vector<double>& t, double x) {
    std::vector<double> w(3);
    for (int k = 0; k < 3; ++k) {
        double l = 1.0;
        for (int m = 0; m < 3; ++m)
            if (m != k) l *= (x - t[m]) / (t[k] - t[m]);
        w[k] = l;
    }
    return w;
}

// Natural cubic spline through (t, y), evaluated at x using the last interval's cubic.
double natural_spline_last(const std::vector<double>& t, const std::vector<double>& y, double x) {
    const auto n = t.size();
    std::vector<double> h(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) h[k] = t[k + 1] - t[k];
    // tridiagonal system for interior second derivatives M_1..M_{n-2}
    const auto m = n - 2;
    std::vector<double> a(m), b(m), c(m), d(m);
    for (std::size_t r = 0; r < m; ++r) {
        const auto i = r + 1;
        a[r] = h[i - 1];
        b[r] = 2.0 * (h[i - 1] + h[i]);
        c[r] = h[i];
        d[r] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    for (std::size_t r = 1; r < m; ++r) {
        const double f = a[r] / b[r - 1];
        b[r] -= f * c[r - 1];
        d[r] -= f * d[r - 1];
    }
    std::vector<double> M(n, 0.0);
    for (std::size_t r = m; r-- > 0;) M[r + 1] = (d[r] - (r + 1 < m ? c[r] * M[r + 2] : 0.0)) / b[r];

    const auto lo = n - 2, hi = n - 1;
    const double hh = h[lo];
    const double A = t[hi] - x, B = x - t[lo];
    return M[lo] * A * A * A / (6.0 * hh) + M[hi] * B * B * B / (6.0 * hh) + (y[lo] / hh - M[lo] * hh / 6.0) * A +
           (y[hi] / hh - M[hi] * hh / 6.0) * B;
}

Image combine(const std::vector<Image>& images, const std::vector<double>& w) {
    auto acc = torch::zeros(images[0].sizes(), torch::kFloat64);
    for (std::size_t k = 0; k < images.size(); ++k) acc += w[k] * images[k].to(torch::kFloat64);
    return acc.clamp(0.0, 1.0).to(images[0].scalar_type());
}

}  // namespace

std::vector<double> spline_weights(const std::vector<double>& t, double target) {
    const auto n = t.size();
    if (n < 2) throw ConfigError("extrapolation: need at least 2 visits");
    if (n == 2) return linear_weights(t, target);
    if (n == 3) return quadratic_weights(t, target);
    std::vector<double> w(n), e(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        e[k] = 1.0;
        w[k] = natural_spline_last(t, e, target);
        e[k] = 0.0;
    }
    return w;
}

Image linear_extrapolate(const ExtrapolationInput& in) {
    in.validate(2);
    return combine(in.images, linear_weights(in.times, in.target_time));
}

Image cubic_spline_extrapolate(const ExtrapolationInput& in) {
    in.validate(2);
    return combine(in.images, spline_weights(in.times, in.target_time));
}

}  // namespace imageflow
