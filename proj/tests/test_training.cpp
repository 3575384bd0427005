#include "imageflow/error.hpp"
#include "imageflow/training.hpp"
#include "doctest_torch.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace imageflow;

namespace {

ModelConfig tiny_model(Variant v = Variant::ode) {
    ModelConfig mc;
    mc.variant = v;
    mc.backbone.base_channels = 8;
    mc.backbone.channel_multipliers = {1, 2};
    mc.backbone.blocks_per_resolution = 1;
    mc.backbone.image_size = 16;
    mc.projection_dim = 16;
    mc.time_embedding_dim = 16;
    mc.solver.steps_per_unit_time = 4;
    return mc;
}

TrainConfig quick_train(int epochs, int accum = 1) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.grad_accumulation = accum;
    tc.effective_batch = accum;
    tc.learning_rate = 1e-3;
    tc.augment = false;
    tc.seed = 3;
    return tc;
}

Dataset tiny_dataset(int visits = 3) {
    SynthConfig sc;
    sc.num_series = 3;
    sc.image_size = 16;
    sc.visits_min = visits;
    sc.visits_max = visits;
    sc.lesion_base_radius = 2.0;
    return split_series_level(generate_synthetic(sc, 4), {0.34, 0.33, 0.33}, 4);
}

LongitudinalSeries growing_series(int n) {
    LongitudinalSeries s;
    s.series_id = "h";
    for (int k = 0; k < n; ++k) {
        s.images.push_back(testutil::uniform({1, 16, 16}, 30 + k) * (1.0 - 0.1 * k));
        s.times.push_back(2.0 * k);
    }
    return s;
}

double param_distance(ForecastNet& a, ForecastNet& b) {
    double sq = 0.0;
    auto pa = a->parameters(), pb = b->parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) sq += (pa[k] - pb[k]).square().sum().item<double>();
    return std::sqrt(sq);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config invariants") {
    TrainConfig tc;
    CHECK_NOTHROW(tc.validate());
    CHECK(tc.effective_batch == tc.actual_batch * tc.grad_accumulation);
    tc.effective_batch = 32;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.actual_batch = 2;
    tc.effective_batch = 128;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.ema_decay = 1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.regularizers_on = false;
    CHECK(tc.effective_weights().lambda_v == 0.0);
    CHECK(tc.effective_weights().lambda_c == 0.0);
    CHECK(tc.effective_weights().lambda_s == 0.0);
}

TEST_CASE("cosine schedule with warmup") {
    CosineWarmupSchedule s(1e-3, 100, 10);
    CHECK(s.lr(0) == 0.0);
    CHECK(s.lr(5) == doctest::Approx(5e-4));
    CHECK(s.lr(10) == 1e-3);
    CHECK(s.lr(99) <= 1e-5);
    for (std::int64_t k = 10; k < 99; ++k) CHECK(s.lr(k + 1) <= s.lr(k));
    for (std::int64_t k = 0; k < 10; ++k) CHECK(s.lr(k + 1) > s.lr(k));
    CosineWarmupSchedule no_warm(2e-3, 5, 0);
    CHECK(no_warm.lr(0) == 2e-3);
    CHECK(no_warm.lr(4) == 0.0);
    CHECK_THROWS_AS(CosineWarmupSchedule(1e-3, 0, 0), ConfigError);
}

TEST_CASE("ema shadow tracks live weights") {
    torch::manual_seed(1);
    torch::nn::Linear lin(3, 2);
    Ema ema(*lin, 0.9);
    auto params = lin->parameters();
    REQUIRE(ema.shadow().size() == params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
        CHECK(ema.shadow()[k].sizes() == params[k].sizes());
        CHECK(torch::equal(ema.shadow()[k], params[k]));
    }
    // jump the live weights, then hold them constant
    {
        torch::NoGradGuard ng;
        for (auto& p : params) p.add_(1.0);
    }
    double prev = 1e9;
    for (int it = 0; it < 100; ++it) {
        ema.update(*lin);
        double gap = 0.0;
        for (std::size_t k = 0; k < params.size(); ++k)
            gap = std::max(gap, (ema.shadow()[k] - params[k]).abs().max().item<double>());
        CHECK(gap <= prev);
        prev = gap;
        if (it == 0) CHECK(gap == doctest::Approx(0.9).epsilon(1e-5));
    }
    CHECK(prev < 1e-4);
    torch::nn::Linear other(3, 2);
    ema.copy_to(*other);
    CHECK(torch::equal(other->weight, ema.shadow()[0]));
}

TEST_CASE("gradient accumulation matches a true batch") {
    torch::manual_seed(2);
    ForecastNet accum_net(tiny_model());
    accum_net->to(torch::kFloat64);
    auto batch_net = clone_model(accum_net);
    const LossWeights w{0.001, 0.01, 0.1};
    auto xi = testutil::uniform({4, 1, 16, 16}, 5, torch::kFloat64);
    auto xj = testutil::uniform({4, 1, 16, 16}, 6, torch::kFloat64);

    auto opt_options = torch::optim::AdamWOptions(1e-3).weight_decay(1e-2);
    torch::optim::AdamW opt_a(accum_net->trainable_parameters(), opt_options);
    torch::optim::AdamW opt_b(batch_net->trainable_parameters(), opt_options);

    for (int k = 0; k < 4; ++k) {
        auto out = accum_net->forward_pair({xi[k], xj[k], 0.2, 0.7}, w, false, 0);
        (total_loss(out, w).total / 4.0).backward();
    }
    opt_a.step();
    auto out = batch_net->forward_pair({xi, xj, 0.2, 0.7}, w, false, 0);
    total_loss(out, w).total.backward();
    opt_b.step();
    CHECK(param_distance(accum_net, batch_net) < 1e-6);
}

TEST_CASE("one epoch on two tiny series") {
    auto d = tiny_dataset(2);
    // all three series to train, none held out
    for (auto& [id, sp] : d.split_assignment) sp = Split::train;
    d.split_assignment.begin()->second = Split::val;
    auto r = train(d, tiny_model(), quick_train(1));
    CHECK(r.history.epochs.size() == 1);
    CHECK(r.history.steps.size() == 2);
    CHECK(r.history.best_epoch == 0);
    CHECK(r.state.best);
    CHECK(r.state.ema);
    CHECK(r.state.step == 2);
    CHECK(r.history.steps.back().val_psnr.has_value());
}

TEST_CASE("empty train split is an error") {
    auto d = tiny_dataset(2);
    for (auto& [id, sp] : d.split_assignment) sp = Split::test;
    CHECK_THROWS_AS(train(d, tiny_model(), quick_train(1)), ConfigError);
}

TEST_CASE("overfitting a single pair") {
    Dataset d;
    auto s = growing_series(2);
    s.images[1] = s.images[0].flip({2});
    d.series.push_back(s);
    d.split_assignment[s.series_id] = Split::train;
    d.time_scale = 2.0;
    auto tc = quick_train(200);
    tc.warmup_fraction = 0.0;
    tc.weight_decay = 0.0;
    tc.regularizers_on = false;
    auto mc = tiny_model();
    mc.input_noise_std = 0.0;
    auto r = train(d, mc, tc);
    CHECK(r.history.steps.size() == 200);
    double best = 1.0;
    for (const auto& step : r.history.steps) best = std::min(best, step.reconstruction);
    CHECK(best < 1e-3);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto d = tiny_dataset(3);
    auto tc = quick_train(2, 2);
    tc.augment = true;
    auto a = train(d, tiny_model(Variant::sde), tc);
    auto b = train(d, tiny_model(Variant::sde), tc);
    CHECK(a.history.epochs.back().val_loss == b.history.epochs.back().val_loss);
    CHECK(a.history.steps.back().total == b.history.steps.back().total);
    CHECK(param_distance(a.state.best, b.state.best) == 0.0);
    tc.seed = 4;
    auto c = train(d, tiny_model(Variant::sde), tc);
    CHECK(c.history.steps.back().total != a.history.steps.back().total);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
    auto d = tiny_dataset(2);
    auto tc = quick_train(3);
    tc.learning_rate = 1e30;
    tc.warmup_fraction = 0.0;
    try {
        train(d, tiny_model(), tc);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        const std::string what = e.what();
        CHECK(what.find("epoch") != std::string::npos);
        CHECK(what.find("series") != std::string::npos);
    }
}

TEST_CASE("prediction contracts") {
    torch::manual_seed(7);
    ForecastNet net(tiny_model());
    auto x = testutil::uniform({1, 16, 16}, 8);
    auto same = predict(net, x, 0.4, 0.4);
    {
        torch::NoGradGuard ng;
        net->eval();
        CHECK(testutil::bitwise_equal(same, net->decode(net->encode(x))));
    }
    for (double dt : {0.0, 0.25, 0.5, 1.0}) {
        auto y = predict(net, x, 0.0, dt);
        CHECK(y.sizes() == x.sizes());
        CHECK(y.min().item<float>() >= 0.0f);
        CHECK(y.max().item<float>() <= 1.0f);
    }
    CHECK_THROWS_AS(predict(net, x, 0.5, 0.2), ConfigError);
    CHECK_NOTHROW(predict(net, x, 0.5, 0.2, true));

    ModelState empty;
    CHECK_THROWS_AS(predict(empty, x, 0.0, 1.0), ConfigError);
}

TEST_CASE("test-time optimization") {
    torch::manual_seed(9);
    ForecastNet net(tiny_model());
    auto history = growing_series(3);
    const double scale = 4.0;
    std::vector<torch::Tensor> before;
    for (auto& p : net->parameters()) before.push_back(p.detach().clone());

    SUBCASE("zero iterations leave predictions unchanged") {
        TtoConfig cfg;
        cfg.iterations = 0;
        auto tuned = test_time_optimize(net, history, scale, cfg);
        CHECK(testutil::bitwise_equal(predict(tuned, history.images[2], 1.0, 1.5),
                                      predict(net, history.images[2], 1.0, 1.5)));
    }
    SUBCASE("only flow fields move; the source model is untouched") {
        TtoConfig cfg;
        cfg.iterations = 3;
        cfg.learning_rate = 1e-3;
        auto tuned = test_time_optimize(net, history, scale, cfg);
        auto src = net->parameters();
        for (std::size_t k = 0; k < src.size(); ++k) CHECK(torch::equal(src[k], before[k]));
        auto bb_tuned = tuned->backbone_parameters(), bb_src = net->backbone_parameters();
        for (std::size_t k = 0; k < bb_src.size(); ++k) CHECK(testutil::bitwise_equal(bb_tuned[k], bb_src[k]));
        auto h_tuned = tuned->head_parameters(), h_src = net->head_parameters();
        for (std::size_t k = 0; k < h_src.size(); ++k) CHECK(testutil::bitwise_equal(h_tuned[k], h_src[k]));
        bool moved = false;
        auto f_tuned = tuned->field_parameters(), f_src = net->field_parameters();
        for (std::size_t k = 0; k < f_src.size(); ++k) moved = moved || !torch::equal(f_tuned[k], f_src[k]);
        CHECK(moved);
        for (auto& p : tuned->backbone_parameters()) CHECK(p.requires_grad());
    }
    SUBCASE("a tiny step does not increase the history loss") {
        TtoConfig cfg;
        cfg.iterations = 1;
        cfg.learning_rate = 1e-6;
        const double l0 = history_loss(net, history, scale, cfg.weights);
        auto tuned = test_time_optimize(net, history, scale, cfg);
        CHECK(history_loss(tuned, history, scale, cfg.weights) <= l0 + 1e-6);
    }
    SUBCASE("invalid requests") {
        auto one = history;
        one.images.resize(1);
        one.times.resize(1);
        CHECK_THROWS_AS(test_time_optimize(net, one, scale, TtoConfig{}), ConfigError);
        ForecastNet t_unet(tiny_model(Variant::t_unet));
        CHECK_THROWS_AS(test_time_optimize(t_unet, history, scale, TtoConfig{}), ConfigError);
    }
}

}
