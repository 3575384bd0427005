#pragma once

#include "imageflow/image.hpp"

#include <vector>

namespace imageflow {

/// Observed visits (strictly increasing times) and a later target time.
struct ExtrapolationInput {
    std::vector<Image> images;
    std::vector<double> times;
    double target_time = 0.0;

    void validate(std::size_t min_points) const;
};

/// Per-pixel least-squares line through all visits, evaluated at the target.
Image linear_extrapolate(const ExtrapolationInput& in);

/// Per-pixel natural cubic spline continued past the last knot with the cubic
/// of the final interval. Three visits use the interpolating quadratic, two
/// fall back to the linear extrapolator.
Image cubic_spline_extrapolate(const ExtrapolationInput& in);

/// Weights w_k with prediction = sum_k w_k * image_k (same for every pixel).
std::vector<double> linear_weights(const std::vector<double>& times, double target);
std::vector<double> spline_weights(const std::vector<double>& times, double target);

}  // namespace imageflow
