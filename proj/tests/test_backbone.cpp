#include "imageflow/backbone.hpp"
#include "imageflow/error.hpp"
#include "imageflow/model.hpp"
#include "doctest_torch.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace imageflow;

namespace {

BackboneConfig tiny_backbone() {
    BackboneConfig c;
    c.base_channels = 8;
    c.channel_multipliers = {1, 2};
    c.blocks_per_resolution = 1;
    c.image_size = 16;
    return c;
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("default latent shape contract") {
    BackboneConfig c;
    const std::vector<std::array<std::int64_t, 3>> expected{{16, 64, 64}, {16, 64, 64}, {32, 32, 32},
                                                            {32, 32, 32}, {64, 16, 16}, {64, 16, 16}};
    CHECK((latent_shapes(c) == expected));
    CHECK((latent_resolutions(c) == std::vector<int>{0, 0, 1, 1, 2, 2}));
    CHECK(c.num_latents() == 6);

    torch::manual_seed(0);
    UNet net(c);
    net->eval();
    torch::NoGradGuard ng;
    auto x = testutil::uniform({1, 64, 64}, 1);
    auto z = net->encode(x);
    REQUIRE(z.size() == 6);
    for (std::size_t b = 0; b < 6; ++b) {
        CHECK(z.layers[b].sizes() == torch::IntArrayRef(expected[b]));
        CHECK(z.resolution_of[b] == latent_resolutions(c)[b]);
    }
    CHECK(z.bottleneck().sizes() == torch::IntArrayRef({64, 16, 16}));

    auto batch = testutil::uniform({4, 1, 64, 64}, 2);
    auto zb = net->encode(batch);
    for (std::size_t b = 0; b < 6; ++b) {
        CHECK(zb.layers[b].size(0) == 4);
        CHECK(zb.layers[b].sizes().slice(1) == torch::IntArrayRef(expected[b]));
    }
}

TEST_CASE("configuration invariants") {
    auto c = tiny_backbone();
    CHECK_NOTHROW(c.validate());
    c.image_size = 18;
    c.channel_multipliers = {1, 2, 4};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_backbone();
    c.blocks_per_resolution = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_backbone();
    c.channel_multipliers.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_backbone();
    c.time_embedding_dim = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    // B >= R for every valid config
    for (int r = 1; r <= 4; ++r)
        for (int k = 1; k <= 3; ++k) {
            BackboneConfig d;
            d.channel_multipliers.assign(r, 1);
            d.blocks_per_resolution = k;
            CHECK(d.num_latents() >= d.num_resolutions());
        }
}

TEST_CASE("round trip keeps shape and pixel range") {
    for (int size : {16, 32}) {
        for (int channels : {1, 3}) {
            auto c = tiny_backbone();
            c.image_size = size;
            c.in_channels = channels;
            torch::manual_seed(3);
            UNet net(c);
            net->eval();
            torch::NoGradGuard ng;
            auto x = testutil::uniform({channels, size, size}, 4);
            auto y = net->decode(net->encode(x));
            CHECK(y.sizes() == x.sizes());
            CHECK(y.min().item<float>() >= 0.0f);
            CHECK(y.max().item<float>() <= 1.0f);
        }
    }
}

TEST_CASE("eval-mode passes are deterministic") {
    torch::manual_seed(5);
    UNet net(tiny_backbone());
    net->eval();
    torch::NoGradGuard ng;
    auto x = testutil::uniform({1, 16, 16}, 6);
    auto a = net->encode(x);
    auto b = net->encode(x.clone());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(testutil::bitwise_equal(a.layers[k], b.layers[k]));
    MultiscaleLatent zero = a.cloned();
    for (auto& t : zero.layers) t.zero_();
    auto d1 = net->decode(zero);
    auto d2 = net->decode(zero);
    CHECK(testutil::bitwise_equal(d1, d2));
    CHECK(testutil::bitwise_equal(net->decode(a), net->decode(b)));
}

TEST_CASE("shape mismatches are rejected") {
    torch::manual_seed(7);
    UNet net(tiny_backbone());
    torch::NoGradGuard ng;
    CHECK_THROWS_AS(net->encode(torch::zeros({1, 32, 32})), ShapeError);
    CHECK_THROWS_AS(net->encode(torch::zeros({2, 16, 16})), ShapeError);
    auto z = net->encode(torch::zeros({1, 16, 16}));
    auto short_z = z;
    short_z.layers.pop_back();
    CHECK_THROWS_AS(net->decode(short_z), ShapeError);
    auto bad = z.cloned();
    bad.layers[0] = torch::zeros({3, 16, 16});
    CHECK_THROWS_AS(net->decode(bad), ShapeError);
}

TEST_CASE("autoencoder overfits constant images") {
    torch::manual_seed(8);
    UNet net(tiny_backbone());
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-2));
    auto batch = torch::stack({torch::full({1, 16, 16}, 0.2f), torch::full({1, 16, 16}, 0.5f),
                               torch::full({1, 16, 16}, 0.8f)});
    double loss = 1.0;
    for (int it = 0; it < 300 && loss >= 1e-4; ++it) {
        opt.zero_grad();
        auto l = (net->decode(net->encode(batch)) - batch).square().mean();
        l.backward();
        opt.step();
        loss = l.item<double>();
    }
    net->eval();
    torch::NoGradGuard ng;
    CHECK((net->decode(net->encode(batch)) - batch).square().mean().item<double>() < 1e-3);
}

TEST_CASE("sinusoidal time embedding") {
    auto e0 = sinusoidal_time_embedding(0.0, 8);
    REQUIRE(e0.sizes() == torch::IntArrayRef({8}));
    CHECK(torch::equal(e0.slice(0, 0, 4), torch::zeros({4}, e0.options())));
    CHECK(torch::equal(e0.slice(0, 4, 8), torch::ones({4}, e0.options())));
    CHECK_THROWS_AS(sinusoidal_time_embedding(0.5, 7), ConfigError);

    // the ladder itself
    auto e = sinusoidal_time_embedding(2.5, 8).to(torch::kFloat64);
    for (int k = 0; k < 4; ++k) {
        const double w = std::pow(10000.0, -k / 4.0);
        CHECK(e[k].item<double>() == doctest::Approx(std::sin(2.5 * w)).epsilon(1e-6));
        CHECK(e[k + 4].item<double>() == doctest::Approx(std::cos(2.5 * w)).epsilon(1e-6));
    }

    // continuity: a small step in t moves the embedding by O(step)
    for (double t : {0.0, 0.3, 7.0, 250.0}) {
        auto a = sinusoidal_time_embedding(t, 64);
        auto b = sinusoidal_time_embedding(t + 1e-4, 64);
        CHECK((a - b).abs().max().item<double>() < 2e-4);
    }
    // injectivity on a grid
    std::vector<torch::Tensor> grid;
    for (int k = 0; k <= 200; ++k) grid.push_back(sinusoidal_time_embedding(k * 5e-3, 64));
    for (std::size_t a = 0; a < grid.size(); ++a)
        for (std::size_t b = a + 1; b < grid.size(); ++b) CHECK_FALSE(torch::equal(grid[a], grid[b]));
    // batched form agrees with the scalar one
    auto batched = sinusoidal_time_embedding(torch::tensor({0.0, 2.5}, torch::kFloat64), 8);
    CHECK(torch::allclose(batched[1], sinusoidal_time_embedding(2.5, 8)));
}

TEST_CASE("time-conditional baseline") {
    ModelConfig mc;
    mc.variant = Variant::t_unet;
    mc.backbone = tiny_backbone();
    mc.time_embedding_dim = 16;
    torch::manual_seed(9);
    ForecastNet net(mc);
    auto x = testutil::uniform({1, 16, 16}, 10);
    {
        torch::NoGradGuard ng;
        net->eval();
        auto a = net->forward_t_unet(x, 0.1, 0.4);
        CHECK(a.sizes() == x.sizes());
        CHECK(testutil::bitwise_equal(a, net->forward_t_unet(x, 0.1, 0.4)));
        CHECK(net->forward_t_unet(x, 0.2, 0.2).sizes() == x.sizes());
    }
    // train on targets that darken in proportion to the gap
    net->train();
    torch::optim::Adam opt(net->trainable_parameters(), torch::optim::AdamOptions(5e-3));
    for (int it = 0; it < 300; ++it) {
        const double dt = (it % 5) * 0.2;
        auto xi = testutil::uniform({1, 16, 16}, 100 + it);
        auto target = xi * (1.0 - 0.8 * dt);
        opt.zero_grad();
        auto l = (net->forward_t_unet(xi, 0.0, dt) - target).square().mean();
        l.backward();
        opt.step();
    }
    net->eval();
    torch::NoGradGuard ng;
    auto near = net->forward_t_unet(x, 0.0, 0.1);
    auto far = net->forward_t_unet(x, 0.0, 0.9);
    CHECK((near - far).abs().mean().item<double>() > 0.05);
    CHECK(far.mean().item<double>() < near.mean().item<double>());
}

}
