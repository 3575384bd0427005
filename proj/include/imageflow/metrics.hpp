#pragma once

#include "imageflow/image.hpp"

#include <string>

namespace imageflow {

enum class HdEmptyPolicy { skip, max_diagonal };

std::string to_string(HdEmptyPolicy p);
HdEmptyPolicy hd_policy_from_string(const std::string& s);

struct MetricConfig {
    double dynamic_range = 1.0;
    int ssim_window = 7;
    double psnr_cap_db = 100.0;
    HdEmptyPolicy hd_empty_policy = HdEmptyPolicy::max_diagonal;

    double ssim_c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
    double ssim_c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
    void validate() const;
};

double mse(const Image& a, const Image& b);
double mae(const Image& a, const Image& b);

/// 10 log10(R^2 / MSE); `psnr_cap_db` when the images are identical.
double psnr(const Image& a, const Image& b, const MetricConfig& config = {});

/// Mean SSIM over all fully-contained uniform windows (sample covariance,
/// window^2/(window^2-1) normalization), averaged over channels.
double ssim(const Image& a, const Image& b, const MetricConfig& config = {});

/// 2|X n Y| / (|X| + |Y|); 1 when both masks are empty.
double dice(const Mask& x, const Mask& y);

/// Symmetric Hausdorff distance (pixels) between foreground pixel sets.
/// Both empty -> 0; one empty -> NaN (skip) or the image diagonal.
double hausdorff(const Mask& x, const Mask& y, const MetricConfig& config = {});

/// Exact Euclidean distance from every pixel to the nearest foreground pixel of
/// `mask` (H,W), as float64. Infinite everywhere for an empty mask.
torch::Tensor distance_to_foreground(const Mask& mask);

}  // namespace imageflow
