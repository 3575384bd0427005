#include "imageflow/error.hpp"
#include "imageflow/model.hpp"
#include "imageflow/objectives.hpp"
#include "doctest_torch.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace imageflow;
namespace nn = torch::nn;

namespace {

nn::Sequential identity_seq() { return nn::Sequential(nn::Identity()); }

/// Fixed linear map without bias, frozen.
nn::Sequential fixed_linear(const torch::Tensor& w) {
    nn::Linear lin(nn::LinearOptions(w.size(1), w.size(0)).bias(false));
    torch::NoGradGuard ng;
    lin->weight.copy_(w);
    return nn::Sequential(lin);
}

ModelConfig tiny_model(Variant v = Variant::ode) {
    ModelConfig mc;
    mc.variant = v;
    mc.backbone.base_channels = 8;
    mc.backbone.channel_multipliers = {1, 2};
    mc.backbone.blocks_per_resolution = 1;
    mc.backbone.image_size = 16;
    mc.projection_dim = 16;
    mc.solver.steps_per_unit_time = 4;
    return mc;
}

void zero_grads(ForecastNet& net) {
    for (auto& p : net->parameters()) p.mutable_grad() = torch::Tensor();
}

bool all_grads_zero(const std::vector<torch::Tensor>& params) {
    for (const auto& p : params)
        if (p.grad().defined() && p.grad().ne(0).any().item<bool>()) return false;
    return true;
}

bool any_grad_nonzero(const std::vector<torch::Tensor>& params) {
    for (const auto& p : params)
        if (p.grad().defined() && p.grad().ne(0).any().item<bool>()) return true;
    return false;
}

std::vector<torch::Tensor> grads_of(const std::vector<torch::Tensor>& params) {
    std::vector<torch::Tensor> out;
    for (const auto& p : params) out.push_back(p.grad().defined() ? p.grad().clone() : torch::zeros_like(p));
    return out;
}

PairInputs toy_inputs() {
    return PairInputs{testutil::uniform({1, 16, 16}, 1), testutil::uniform({1, 16, 16}, 2), 0.1, 0.5};
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("reconstruction loss") {
    auto x = testutil::uniform({1, 8, 8}, 3, torch::kFloat64);
    CHECK(reconstruction_loss(x, x).item<double>() == 0.0);
    auto zero = torch::zeros({3, 4, 4}, torch::kFloat64);
    CHECK(reconstruction_loss(torch::full({3, 4, 4}, 0.1, torch::kFloat64), zero).item<double>() == 0.1 * 0.1);
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto a = testutil::uniform({2, 5, 7}, 10 + s, torch::kFloat64);
        auto b = testutil::uniform({2, 5, 7}, 50 + s, torch::kFloat64);
        auto fa = a.contiguous().view({-1}), fb = b.contiguous().view({-1});
        double sum = 0.0;
        for (std::int64_t k = 0; k < fa.numel(); ++k) {
            const double d = fa[k].item<double>() - fb[k].item<double>();
            sum += d * d;
        }
        CHECK(std::abs(reconstruction_loss(a, b).item<double>() - sum / 70.0) < 1e-10);
    }
    CHECK_THROWS_AS(reconstruction_loss(torch::zeros({1, 4, 4}), torch::zeros({1, 4, 5})), ShapeError);
}

TEST_CASE("guarded cosine similarity") {
    auto a = torch::tensor({3.0, 4.0}, torch::kFloat64);
    CHECK(imageflow::cosine_similarity(a, a).item<double>() == 1.0);
    CHECK(imageflow::cosine_similarity(a, -a).item<double>() == -1.0);
    CHECK(imageflow::cosine_similarity(a, torch::tensor({-4.0, 3.0}, torch::kFloat64)).item<double>() == 0.0);
    auto z = torch::zeros({2}, torch::kFloat64);
    CHECK(imageflow::cosine_similarity(z, a).item<double>() == 0.0);
    CHECK(std::isfinite(imageflow::cosine_similarity(z, z).item<double>()));
}

TEST_CASE("visual feature loss with the frozen encoder") {
    FeatureEncoder enc(1, 4);
    for (auto& p : enc->parameters()) CHECK_FALSE(p.requires_grad());
    auto x = testutil::uniform({1, 16, 16}, 5);
    CHECK(visual_feature_loss(x, x, enc).item<double>() == doctest::Approx(-1.0).epsilon(1e-6));
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto v = visual_feature_loss(testutil::uniform({1, 16, 16}, 100 + s), x, enc).item<double>();
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // batched inputs average per-sample cosines
    auto xb = testutil::uniform({3, 1, 16, 16}, 6);
    CHECK(visual_feature_loss(xb, xb, enc).item<double>() == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("visual feature loss with test-double encoders") {
    auto x = torch::zeros({1, 2, 2}, torch::kFloat64);
    auto y = torch::ones({1, 2, 2}, torch::kFloat64);
    auto a = torch::tensor({1.0, 2.0, 0.0}, torch::kFloat64);
    auto same = [&](const Image&) { return a; };
    CHECK(visual_feature_loss(x, y, ImageEncoder(same)).item<double>() == -1.0);
    ImageEncoder orthogonal = [&](const Image& img) {
        return img.sum().item<double>() == 0.0 ? a : torch::tensor({-2.0, 1.0, 5.0}, torch::kFloat64);
    };
    CHECK(visual_feature_loss(x, y, orthogonal).item<double>() == 0.0);
    ImageEncoder antiparallel = [&](const Image& img) { return img.sum().item<double>() == 0.0 ? a : -a; };
    CHECK(visual_feature_loss(x, y, antiparallel).item<double>() == 1.0);
}

TEST_CASE("feature encoder weights can be replaced and stay frozen") {
    FeatureEncoder a(1, 1), b(1, 2);
    auto x = testutil::uniform({1, 16, 16}, 7);
    CHECK_FALSE(torch::equal(a->forward(x), b->forward(x)));
    std::map<std::string, torch::Tensor> state;
    for (const auto& item : a->named_parameters()) state[item.key()] = item.value().clone();
    b->load_state(state);
    CHECK(torch::equal(a->forward(x), b->forward(x)));
    for (auto& p : b->parameters()) CHECK_FALSE(p.requires_grad());
    state.erase(state.begin());
    CHECK_THROWS_AS(b->load_state(state), ConfigError);
}

TEST_CASE("simsiam loss with test doubles") {
    auto z = torch::tensor({0.3, -1.2, 2.0}, torch::kFloat64);
    ContrastiveHead ident(identity_seq(), identity_seq());
    CHECK(contrastive_simsiam_loss(z, z, ident).item<double>() == -1.0);

    // predictor rotates by 90 degrees in the plane: orthogonal to the target branch
    auto rot = torch::tensor({{0.0, -1.0}, {1.0, 0.0}}, torch::kFloat64);
    ContrastiveHead ortho(identity_seq(), fixed_linear(rot));
    ortho->to(torch::kFloat64);
    auto v = torch::tensor({1.5, -0.5}, torch::kFloat64);
    CHECK(contrastive_simsiam_loss(v, v, ortho).item<double>() == 0.0);

    torch::manual_seed(11);
    ContrastiveHead head(3, 8, 4);
    head->to(torch::kFloat64);
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto a = testutil::normal({3}, 20 + s, torch::kFloat64);
        auto b = testutil::normal({3}, 40 + s, torch::kFloat64);
        const double ab = contrastive_simsiam_loss(a, b, head).item<double>();
        const double ba = contrastive_simsiam_loss(b, a, head).item<double>();
        CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
        CHECK(ab >= -1.0);
        CHECK(ab <= 1.0);
    }
}

TEST_CASE("simsiam stop-gradient sits on the projector-only branch") {
    // identity projector: z_j reaches the loss only through the predictor branch of the second half
    auto w = torch::tensor({{2.0, 0.5}, {-0.25, 1.0}}, torch::kFloat64);
    nn::Linear pred(nn::LinearOptions(2, 2).bias(false));
    {
        torch::NoGradGuard ng;
        pred->weight.copy_(w);
    }
    ContrastiveHead head(identity_seq(), nn::Sequential(pred));
    head->to(torch::kFloat64);
    auto zi = torch::tensor({1.0, 0.2}, torch::kFloat64).requires_grad_(true);
    auto zj = torch::tensor({-0.4, 0.9}, torch::kFloat64).requires_grad_(true);
    contrastive_simsiam_loss(zi, zj, head).backward();
    // gradient of -1/2 cos(W zi, sg(zj)) wrt zi, plus nothing from the other half
    auto zi_ref = zi.detach().clone().requires_grad_(true);
    auto zj_ref = zj.detach().clone().requires_grad_(true);
    auto ref = -0.5 * imageflow::cosine_similarity(torch::matmul(w, zi_ref), zj_ref.detach()) -
               0.5 * imageflow::cosine_similarity(torch::matmul(w, zj_ref), zi_ref.detach());
    ref.backward();
    CHECK(torch::allclose(zi.grad(), zi_ref.grad(), 1e-12, 1e-14));
    CHECK(torch::allclose(zj.grad(), zj_ref.grad(), 1e-12, 1e-14));
}

TEST_CASE("total loss composition") {
    PairOutputs o;
    o.x_hat = torch::full({1, 4, 4}, 0.5, torch::kFloat64);
    o.x_j = torch::zeros({1, 4, 4}, torch::kFloat64);
    o.visual = torch::tensor(-0.5, torch::kFloat64);
    o.contrastive = torch::tensor(-0.25, torch::kFloat64);
    o.smoothness = torch::tensor(2.0, torch::kFloat64);
    auto none = total_loss(o, LossWeights::none());
    CHECK(none.total.item<double>() == 0.25);
    CHECK(none.reconstruction == 0.25);
    auto all = total_loss(o, LossWeights{0.5, 2.0, 0.125});
    CHECK(all.total.item<double>() == 0.25 + 0.5 * -0.5 + 2.0 * -0.25 + 0.125 * 2.0);
    CHECK(all.visual == -0.5);
    CHECK(all.contrastive == -0.25);
    CHECK(all.smoothness == 2.0);
    CHECK_THROWS_AS(total_loss(o, LossWeights{-1.0, 0.0, 0.0}), ConfigError);
    o.smoothness = torch::tensor(std::nan(""), torch::kFloat64);
    CHECK_THROWS_AS(total_loss(o, LossWeights{0.0, 0.0, 1.0}), TrainingError);
    CHECK_NOTHROW(total_loss(o, LossWeights{0.0, 0.0, 0.0}));
    auto again = total_loss(o, LossWeights{0.5, 2.0, 0.0});
    CHECK(again.total.item<double>() == total_loss(o, LossWeights{0.5, 2.0, 0.0}).total.item<double>());
}

TEST_CASE("term ranges on a real forward pass") {
    torch::manual_seed(12);
    ForecastNet net(tiny_model());
    auto out = net->forward_pair(toy_inputs(), LossWeights{}, true, 3);
    auto b = total_loss(out, LossWeights{});
    CHECK(b.reconstruction >= 0.0);
    CHECK(b.visual >= -1.0);
    CHECK(b.visual <= 1.0);
    CHECK(b.contrastive >= -1.0);
    CHECK(b.contrastive <= 1.0);
    CHECK(b.smoothness >= 0.0);
}

TEST_CASE("gradient scoping") {
    for (auto variant : {Variant::ode, Variant::sde}) {
        CAPTURE(to_string(variant));
        torch::manual_seed(13);
        ForecastNet net(tiny_model(variant));
        const LossWeights w{0.001, 0.01, 0.1};

        SUBCASE("contrastive term never reaches the flow fields") {
            zero_grads(net);
            auto out = net->forward_pair(toy_inputs(), w, true, 4);
            out.contrastive.backward();
            CHECK(all_grads_zero(net->field_parameters()));
            CHECK(any_grad_nonzero(net->backbone_parameters()));
            CHECK(any_grad_nonzero(net->head_parameters()));
        }
        SUBCASE("smoothness term never reaches the backbone") {
            zero_grads(net);
            auto out = net->forward_pair(toy_inputs(), w, true, 4);
            out.smoothness.backward();
            CHECK(all_grads_zero(net->backbone_parameters()));
            CHECK(all_grads_zero(net->head_parameters()));
            CHECK(any_grad_nonzero(net->fields()->parameters()));
        }
        SUBCASE("reconstruction and visual terms reach backbone and fields") {
            zero_grads(net);
            auto out = net->forward_pair(toy_inputs(), w, true, 4);
            (reconstruction_loss(out.x_hat, out.x_j) + out.visual).backward();
            CHECK(any_grad_nonzero(net->backbone_parameters()));
            CHECK(any_grad_nonzero(net->fields()->parameters()));
            CHECK(all_grads_zero(net->feature_encoder()->parameters()));
        }
        SUBCASE("dropping a term leaves the out-of-scope gradients bitwise unchanged") {
            auto grads_with = [&](LossWeights lw) {
                zero_grads(net);
                auto out = net->forward_pair(toy_inputs(), w, true, 4);
                total_loss(out, lw).total.backward();
                return std::make_pair(grads_of(net->backbone_parameters()), grads_of(net->field_parameters()));
            };
            auto full = grads_with(w);
            auto no_s = grads_with(LossWeights{w.lambda_v, w.lambda_c, 0.0});
            auto no_c = grads_with(LossWeights{w.lambda_v, 0.0, w.lambda_s});
            for (std::size_t k = 0; k < full.first.size(); ++k)
                CHECK(testutil::bitwise_equal(full.first[k], no_s.first[k]));
            for (std::size_t k = 0; k < full.second.size(); ++k)
                CHECK(testutil::bitwise_equal(full.second[k], no_c.second[k]));
        }
    }
}

}
