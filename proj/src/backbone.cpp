#include "imageflow/backbone.hpp"

#include "imageflow/error.hpp"

#include <cmath>
#include <sstream>

namespace imageflow {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void BackboneConfig::validate() const {
    if (in_channels <= 0) throw ConfigError("backbone: in_channels must be positive");
    if (output_channels < 0) throw ConfigError("backbone: output_channels must be non-negative");
    if (base_channels <= 0) throw ConfigError("backbone: base_channels must be positive");
    if (channel_multipliers.empty()) throw ConfigError("backbone: channel_multipliers must not be empty");
    for (int m : channel_multipliers)
        if (m <= 0) throw ConfigError("backbone: channel multipliers must be positive");
    if (blocks_per_resolution < 1) throw ConfigError("backbone: blocks_per_resolution must be >= 1");
    const int down = 1 << (num_resolutions() - 1);
    if (image_size <= 0 || image_size % down != 0)
        throw ConfigError("backbone: image_size must be divisible by 2^(R-1) = " + std::to_string(down));
    if (time_embedding_dim < 0 || time_embedding_dim % 2 != 0)
        throw ConfigError("backbone: time_embedding_dim must be even and non-negative");
}

MultiscaleLatent MultiscaleLatent::detached() const {
    MultiscaleLatent out{{}, resolution_of};
    for (const auto& t : layers) out.layers.push_back(t.detach());
    return out;
}

MultiscaleLatent MultiscaleLatent::cloned() const {
    MultiscaleLatent out{{}, resolution_of};
    for (const auto& t : layers) out.layers.push_back(t.clone());
    return out;
}

std::vector<std::array<std::int64_t, 3>> latent_shapes(const BackboneConfig& c) {
    std::vector<std::array<std::int64_t, 3>> shapes;
    std::int64_t size = c.image_size;
    for (int r = 0; r < c.num_resolutions(); ++r) {
        const std::int64_t ch = static_cast<std::int64_t>(c.base_channels) * c.channel_multipliers[r];
        for (int k = 0; k < c.blocks_per_resolution; ++k) shapes.push_back({ch, size, size});
        size /= 2;
    }
    return shapes;
}

std::vector<int> latent_resolutions(const BackboneConfig& c) {
    std::vector<int> res;
    for (int r = 0; r < c.num_resolutions(); ++r)
        for (int k = 0; k < c.blocks_per_resolution; ++k) res.push_back(r);
    return res;
}

torch::Tensor sinusoidal_time_embedding(const torch::Tensor& t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("sinusoidal_time_embedding: dim must be positive and even");
    const int half = dim / 2;
    auto k = torch::arange(half, t.options().dtype(torch::kFloat64));
    auto freqs = torch::exp(-std::log(10000.0) * k / static_cast<double>(half)).to(t.scalar_type());
    auto args = t.reshape({-1, 1}) * freqs.view({1, half});
    auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
    return t.dim() == 0 ? emb.squeeze(0) : emb;
}

torch::Tensor sinusoidal_time_embedding(double t, int dim) {
    return sinusoidal_time_embedding(torch::tensor(t, torch::kFloat64), dim);
}

int group_count(int channels) {
    for (int g = std::min(8, channels); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int embedding_dim) {
    norm1_ = register_module("norm1", nn::GroupNorm(group_count(in_channels), in_channels));
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
    norm2_ = register_module("norm2", nn::GroupNorm(group_count(out_channels), out_channels));
    conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
    if (in_channels != out_channels)
        skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
    if (embedding_dim > 0) embed_ = register_module("embed", nn::Linear(embedding_dim, out_channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embedding) {
    auto h = conv1_(F::silu(norm1_(x)));
    if (embed_ && embedding.defined()) h = h + embed_(F::silu(embedding)).unsqueeze(-1).unsqueeze(-1);
    h = conv2_(F::silu(norm2_(h)));
    return (skip_ ? skip_(x) : x) + h;
}

UpsampleImpl::UpsampleImpl(int channels) {
    conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x) {
    auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                    .scale_factor(std::vector<double>{2.0, 2.0})
                                    .mode(torch::kNearest));
    return conv_(up);
}

UNetImpl::UNetImpl(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
    shapes_ = latent_shapes(config_);
    resolutions_ = latent_resolutions(config_);
    const int emb = config_.time_embedding_dim;
    const int B = config_.num_latents();

    input_conv_ = register_module("input_conv",
                                  nn::Conv2d(nn::Conv2dOptions(config_.in_channels, config_.base_channels, 3).padding(1)));
    encoder_blocks_ = register_module("encoder", nn::ModuleList());
    downsamplers_ = register_module("down", nn::ModuleList());
    int ch = config_.base_channels;
    for (int r = 0; r < config_.num_resolutions(); ++r) {
        const int out = config_.base_channels * config_.channel_multipliers[r];
        for (int k = 0; k < config_.blocks_per_resolution; ++k) {
            encoder_blocks_->push_back(ResBlock(ch, out, emb));
            ch = out;
        }
        if (r + 1 < config_.num_resolutions())
            downsamplers_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
    }

    decoder_blocks_ = register_module("decoder", nn::ModuleList());
    upsamplers_ = register_module("up", nn::ModuleList());
    decoder_upsample_.assign(B, std::nullopt);
    // decoder_upsample_[B-1] upsamples the bottleneck before the first concat
    // when the next skip is finer; decoder_upsample_[b] for b < B-1 follows block b.
    std::int64_t carried = shapes_[B - 1][0];
    if (B >= 2 && resolutions_[B - 1] != resolutions_[B - 2]) {
        decoder_upsample_[B - 1] = upsamplers_->size();
        upsamplers_->push_back(Upsample(static_cast<int>(carried)));
    }
    std::vector<std::shared_ptr<nn::Module>> blocks(B > 1 ? B - 1 : 1);
    for (int b = B - 2; b >= 0; --b) {
        const int in = static_cast<int>(carried + shapes_[b][0]);
        const int out = static_cast<int>(shapes_[b][0]);
        blocks[b] = ResBlock(in, out, emb).ptr();
        carried = out;
    }
    if (B == 1) blocks[0] = ResBlock(static_cast<int>(shapes_[0][0]), static_cast<int>(shapes_[0][0]), emb).ptr();
    for (auto& blk : blocks) decoder_blocks_->push_back(blk);
    for (int b = B - 2; b >= 1; --b) {
        if (resolutions_[b - 1] != resolutions_[b]) {
            decoder_upsample_[b] = upsamplers_->size();
            upsamplers_->push_back(Upsample(static_cast<int>(shapes_[b][0])));
        }
    }

    const int c0 = static_cast<int>(shapes_[0][0]);
    output_norm_ = register_module("output_norm", nn::GroupNorm(group_count(c0), c0));
    output_conv_ = register_module("output_conv", nn::Conv2d(nn::Conv2dOptions(c0, config_.out_channels(), 3).padding(1)));
    if (emb > 0) {
        time_mlp_ = register_module("time_mlp", nn::Sequential(nn::Linear(emb, emb), nn::SiLU(), nn::Linear(emb, emb)));
    }
}

void UNetImpl::check_input(const Image& x) const {
    check_image(x, "UNet input");
    const auto s = x.sizes();
    const auto d = x.dim();
    if (s[d - 3] != config_.in_channels || s[d - 2] != config_.image_size || s[d - 1] != config_.image_size) {
        std::ostringstream os;
        os << "UNet input: expected (" << config_.in_channels << "," << config_.image_size << ","
           << config_.image_size << "), got " << s;
        throw ShapeError(os.str());
    }
}

void UNetImpl::check_latents(const MultiscaleLatent& z) const {
    if (z.layers.size() != shapes_.size())
        throw ShapeError("decode: expected " + std::to_string(shapes_.size()) + " latents, got " +
                         std::to_string(z.layers.size()));
    for (std::size_t b = 0; b < shapes_.size(); ++b) {
        const auto& t = z.layers[b];
        const auto d = t.dim();
        if ((d != 3 && d != 4) || t.size(d - 3) != shapes_[b][0] || t.size(d - 2) != shapes_[b][1] ||
            t.size(d - 1) != shapes_[b][2]) {
            std::ostringstream os;
            os << "decode: latent " << b << " has shape " << t.sizes() << ", expected (" << shapes_[b][0] << ","
               << shapes_[b][1] << "," << shapes_[b][2] << ")";
            throw ShapeError(os.str());
        }
    }
}

torch::Tensor UNetImpl::embed_time(const torch::Tensor& t) {
    if (!time_mlp_) throw ConfigError("UNet: model was built without time embedding");
    return time_mlp_->forward(sinusoidal_time_embedding(t.reshape({-1}).to(torch::kFloat32), config_.time_embedding_dim));
}

MultiscaleLatent UNetImpl::encode(const Image& x, const torch::Tensor& emb) {
    check_input(x);
    const bool batched = x.dim() == 4;
    auto h = input_conv_(batched ? x : x.unsqueeze(0));
    MultiscaleLatent out;
    out.resolution_of = resolutions_;
    std::size_t block = 0;
    for (int r = 0; r < config_.num_resolutions(); ++r) {
        for (int k = 0; k < config_.blocks_per_resolution; ++k, ++block) {
            h = encoder_blocks_[block]->as<ResBlockImpl>()->forward(h, emb);
            out.layers.push_back(batched ? h : h.squeeze(0));
        }
        if (r + 1 < config_.num_resolutions()) h = downsamplers_[r]->as<nn::Conv2dImpl>()->forward(h);
    }
    return out;
}

Image UNetImpl::decode(const MultiscaleLatent& z, const torch::Tensor& emb) {
    check_latents(z);
    const bool batched = z.layers.front().dim() == 4;
    auto layer = [&](std::size_t b) { return batched ? z.layers[b] : z.layers[b].unsqueeze(0); };
    auto upsample = [&](std::size_t idx, const torch::Tensor& t) {
        return upsamplers_[idx]->as<UpsampleImpl>()->forward(t);
    };
    const std::size_t B = z.layers.size();
    torch::Tensor h;
    if (B == 1) {
        h = decoder_blocks_[0]->as<ResBlockImpl>()->forward(layer(0), emb);
    } else {
        h = layer(B - 1);
        if (decoder_upsample_[B - 1]) h = upsample(*decoder_upsample_[B - 1], h);
        for (std::size_t b = B - 1; b-- > 0;) {
            h = decoder_blocks_[b]->as<ResBlockImpl>()->forward(torch::cat({h, layer(b)}, 1), emb);
            if (b >= 1 && decoder_upsample_[b]) h = upsample(*decoder_upsample_[b], h);
        }
    }
    auto out = output_conv_(F::silu(output_norm_(h)));
    if (config_.sigmoid_output) out = torch::sigmoid(out);
    return batched ? out : out.squeeze(0);
}

}  // namespace imageflow
