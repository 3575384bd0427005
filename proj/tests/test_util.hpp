#pragma once

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cstdint>

namespace testutil {

inline at::Generator gen(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

inline torch::Tensor uniform(std::vector<std::int64_t> shape, std::uint64_t seed,
                             torch::Dtype dtype = torch::kFloat32) {
    return torch::rand(shape, gen(seed), torch::TensorOptions().dtype(dtype));
}

inline torch::Tensor normal(std::vector<std::int64_t> shape, std::uint64_t seed,
                            torch::Dtype dtype = torch::kFloat32) {
    return torch::randn(shape, gen(seed), torch::TensorOptions().dtype(dtype));
}

/// Random blob mask: union of a few disks.
inline torch::Tensor blob_mask(int h, int w, std::uint64_t seed) {
    auto g = gen(seed);
    auto mask = torch::zeros({h, w}, torch::kBool);
    auto yy = torch::arange(h, torch::kFloat64).unsqueeze(1);
    auto xx = torch::arange(w, torch::kFloat64).unsqueeze(0);
    auto params = torch::rand({3, 3}, g, torch::kFloat64);
    for (int k = 0; k < 3; ++k) {
        const double cy = params[k][0].item<double>() * h, cx = params[k][1].item<double>() * w;
        const double r = 1.0 + params[k][2].item<double>() * 0.25 * std::min(h, w);
        mask |= ((yy - cy).square() + (xx - cx).square()) <= r * r;
    }
    return mask;
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
    return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

}  // namespace testutil
