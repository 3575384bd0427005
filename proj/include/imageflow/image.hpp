#pragma once

// Images are float32 tensors laid out channel-first: (C, H, W), or (N, C, H, W)
// when batched, with values in [0, 1]. Masks are bool tensors of shape (H, W).

#include <torch/torch.h>

#include <string>

namespace imageflow {

using Image = torch::Tensor;
using Mask = torch::Tensor;

void check_image(const Image& x, const std::string& what);
void check_mask(const Mask& m, const std::string& what);
void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const std::string& what);

/// Luminance (mean over channels) of a (C,H,W) image as (H,W).
torch::Tensor luminance(const Image& x);

/// Horizontal (last axis) or vertical flip of an image or mask.
torch::Tensor flip_horizontal(const torch::Tensor& x);
torch::Tensor flip_vertical(const torch::Tensor& x);

}  // namespace imageflow
