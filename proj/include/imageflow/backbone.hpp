#pragma once

#include "imageflow/image.hpp"

#include <torch/torch.h>

#include <array>
#include <optional>
#include <vector>

namespace imageflow {

struct BackboneConfig {
    int in_channels = 1;
    int base_channels = 16;
    std::vector<int> channel_multipliers{1, 2, 4};  // one entry per resolution
    int blocks_per_resolution = 2;
    int image_size = 64;
    int time_embedding_dim = 0;                     // > 0 only for the time-conditional baseline
    bool sigmoid_output = true;                     // false: raw logits (segmenter)
    int output_channels = 0;                        // 0: same as in_channels

    int out_channels() const { return output_channels > 0 ? output_channels : in_channels; }

    int num_resolutions() const { return static_cast<int>(channel_multipliers.size()); }
    int num_latents() const { return num_resolutions() * blocks_per_resolution; }
    void validate() const;
};

/// Per-layer latents from the contraction path, shallow to deep; the last one
/// is the bottleneck. Tensors are (c,h,w) for single images, (N,c,h,w) batched.
struct MultiscaleLatent {
    std::vector<torch::Tensor> layers;
    std::vector<int> resolution_of;  // resolution level of each layer (0 = full size)

    std::size_t size() const noexcept { return layers.size(); }
    const torch::Tensor& bottleneck() const { return layers.back(); }
    MultiscaleLatent detached() const;
    MultiscaleLatent cloned() const;
};

/// Shape (c, h, w) of each latent implied by a config.
std::vector<std::array<std::int64_t, 3>> latent_shapes(const BackboneConfig& config);
std::vector<int> latent_resolutions(const BackboneConfig& config);

/// sin/cos frequency ladder: first half sin(t w_k), second half cos(t w_k),
/// w_k = 10000^(-k/(dim/2)).
torch::Tensor sinusoidal_time_embedding(double t, int dim);
torch::Tensor sinusoidal_time_embedding(const torch::Tensor& t, int dim);

int group_count(int channels);

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int in_channels, int out_channels, int embedding_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embedding = {});

private:
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
    torch::nn::Linear embed_{nullptr};
};
TORCH_MODULE(ResBlock);

class UpsampleImpl : public torch::nn::Module {
public:
    explicit UpsampleImpl(int channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(Upsample);

/// U-shaped encoder/decoder. The decoder reassembles an image from (possibly
/// evolved) latents: the deepest latent seeds the recursion, each stage
/// concatenates the next skip latent, applies a residual block and upsamples
/// when the next skip is at a finer resolution; the final stage concatenates
/// the shallowest latent, applies a residual block and the output projection.
class UNetImpl : public torch::nn::Module {
public:
    explicit UNetImpl(BackboneConfig config);

    MultiscaleLatent encode(const Image& x, const torch::Tensor& time_embedding = {});
    Image decode(const MultiscaleLatent& z, const torch::Tensor& time_embedding = {});
    /// Embedding MLP over the sinusoidal features of `t` (shape (N,)).
    torch::Tensor embed_time(const torch::Tensor& t);

    const BackboneConfig& config() const { return config_; }

private:
    void check_input(const Image& x) const;
    void check_latents(const MultiscaleLatent& z) const;

    BackboneConfig config_;
    std::vector<std::array<std::int64_t, 3>> shapes_;
    std::vector<int> resolutions_;
    torch::nn::Conv2d input_conv_{nullptr};
    torch::nn::ModuleList encoder_blocks_, downsamplers_;
    torch::nn::ModuleList decoder_blocks_;
    std::vector<std::optional<std::size_t>> decoder_upsample_;  // index into upsamplers_
    torch::nn::ModuleList upsamplers_;
    torch::nn::GroupNorm output_norm_{nullptr};
    torch::nn::Conv2d output_conv_{nullptr};
    torch::nn::Sequential time_mlp_{nullptr};
};
TORCH_MODULE(UNet);

}  // namespace imageflow
