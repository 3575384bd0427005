#include "imageflow/geometry.hpp"

#include "imageflow/error.hpp"

#include <cmath>
#include <numbers>

namespace imageflow {

namespace F = torch::nn::functional;

AffineTransform AffineTransform::from_params(double degrees, double scale, double shift_x,
                                             double shift_y) {
    const double a = degrees * std::numbers::pi / 180.0;
    AffineTransform t;
    t.matrix = {scale * std::cos(a), -scale * std::sin(a), scale * std::sin(a), scale * std::cos(a)};
    t.translation = {shift_x, shift_y};
    return t;
}

bool AffineTransform::is_invertible() const { return std::abs(determinant()) > 1e-8; }

AffineTransform AffineTransform::inverse() const {
    if (!is_invertible()) throw Error("AffineTransform::inverse: singular matrix");
    const double d = determinant();
    AffineTransform inv;
    inv.matrix = {matrix[3] / d, -matrix[1] / d, -matrix[2] / d, matrix[0] / d};
    inv.translation = {-(inv.matrix[0] * translation[0] + inv.matrix[1] * translation[1]),
                       -(inv.matrix[2] * translation[0] + inv.matrix[3] * translation[1])};
    return inv;
}

AffineTransform AffineTransform::compose(const AffineTransform& o) const {
    const auto& m = matrix;
    const auto& n = o.matrix;
    AffineTransform r;
    r.matrix = {m[0] * n[0] + m[1] * n[2], m[0] * n[1] + m[1] * n[3],
                m[2] * n[0] + m[3] * n[2], m[2] * n[1] + m[3] * n[3]};
    r.translation = {m[0] * o.translation[0] + m[1] * o.translation[1] + translation[0],
                     m[2] * o.translation[0] + m[3] * o.translation[1] + translation[1]};
    return r;
}

double AffineTransform::rotation_degrees() const {
    return std::atan2(matrix[2] - matrix[1], matrix[0] + matrix[3]) * 180.0 / std::numbers::pi;
}

// With align_corners=true, normalized = centered_pixel / ((size-1)/2).
torch::Tensor to_theta(const AffineTransform& t, std::int64_t height, std::int64_t width,
                       torch::ScalarType dtype) {
    const double sx = std::max<double>(1.0, (width - 1) / 2.0);
    const double sy = std::max<double>(1.0, (height - 1) / 2.0);
    const auto& m = t.matrix;
    auto theta = torch::tensor({m[0], m[1] * sy / sx, t.translation[0] / sx,
                                m[2] * sx / sy, m[3], t.translation[1] / sy},
                               torch::kFloat64);
    return theta.view({1, 2, 3}).to(dtype);
}

AffineTransform from_theta(const torch::Tensor& theta, std::int64_t height, std::int64_t width) {
    const double sx = std::max<double>(1.0, (width - 1) / 2.0);
    const double sy = std::max<double>(1.0, (height - 1) / 2.0);
    auto th = theta.detach().to(torch::kFloat64).reshape({6}).contiguous();
    const double* p = th.data_ptr<double>();
    AffineTransform t;
    t.matrix = {p[0], p[1] * sx / sy, p[3] * sy / sx, p[4]};
    t.translation = {p[2] * sx, p[5] * sy};
    return t;
}

torch::Tensor warp_theta(const torch::Tensor& x, const torch::Tensor& theta, Interpolation mode) {
    auto grid = F::affine_grid(theta.to(x.scalar_type()), x.sizes(), /*align_corners=*/true);
    auto opts = F::GridSampleFuncOptions()
                    .padding_mode(torch::kBorder)
                    .align_corners(true);
    if (mode == Interpolation::nearest)
        opts.mode(torch::kNearest);
    else
        opts.mode(torch::kBilinear);
    return F::grid_sample(x, grid, opts);
}

torch::Tensor warp_affine(const torch::Tensor& x, const AffineTransform& t, Interpolation mode) {
    if (!t.is_invertible()) throw Error("warp_affine: transform is not invertible");
    if (x.dim() == 2) {
        // masks: nearest neighbour keeps them binary
        auto f = x.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
        auto th = to_theta(t, x.size(0), x.size(1));
        return warp_theta(f, th, Interpolation::nearest).squeeze(0).squeeze(0) > 0.5;
    }
    const bool batched = x.dim() == 4;
    auto b = batched ? x : x.unsqueeze(0);
    auto th = to_theta(t, b.size(2), b.size(3), b.scalar_type()).expand({b.size(0), 2, 3});
    auto out = warp_theta(b, th, mode);
    return batched ? out : out.squeeze(0);
}

}  // namespace imageflow
