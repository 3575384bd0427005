#pragma once

#include <torch/torch.h>

#include <array>

namespace imageflow {

/// 2-D affine map in centered pixel coordinates (origin at the image center,
/// x to the right, y down). It maps an OUTPUT pixel position p to the INPUT
/// sampling position  A p + t  (backward warping).
struct AffineTransform {
    std::array<double, 4> matrix{1.0, 0.0, 0.0, 1.0};  // row-major 2x2
    std::array<double, 2> translation{0.0, 0.0};       // pixels

    static AffineTransform identity() { return {}; }
    /// Rotation by `degrees` about the center, isotropic scale, then shift.
    static AffineTransform from_params(double degrees, double scale, double shift_x, double shift_y);

    double determinant() const { return matrix[0] * matrix[3] - matrix[1] * matrix[2]; }
    bool is_invertible() const;
    AffineTransform inverse() const;
    /// (this ∘ other): sample positions are this(other(p)).
    AffineTransform compose(const AffineTransform& other) const;
    /// Rotation angle (degrees) of the closest rotation to `matrix`.
    double rotation_degrees() const;
};

enum class Interpolation { bilinear, nearest };

/// affine_grid-compatible (1,2,3) theta for an H x W image.
torch::Tensor to_theta(const AffineTransform& t, std::int64_t height, std::int64_t width,
                       torch::ScalarType dtype = torch::kFloat32);
AffineTransform from_theta(const torch::Tensor& theta, std::int64_t height, std::int64_t width);

/// Warp (C,H,W), (N,C,H,W) float images or (H,W) bool masks. Out-of-frame
/// samples take the nearest edge value.
torch::Tensor warp_affine(const torch::Tensor& x, const AffineTransform& t,
                          Interpolation mode = Interpolation::bilinear);

/// Differentiable warp of an (N,C,H,W) tensor by a (N,2,3) theta.
torch::Tensor warp_theta(const torch::Tensor& x, const torch::Tensor& theta, Interpolation mode);

}  // namespace imageflow
