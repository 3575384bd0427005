#include "imageflow/error.hpp"
#include "imageflow/metrics.hpp"
#include "test_util.hpp"

#include "doctest_torch.hpp"

#include <cmath>
#include <limits>

using namespace imageflow;
using testutil::uniform;

namespace {

double loop_mse(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = a.to(torch::kFloat64).contiguous().reshape({-1});
    auto y = b.to(torch::kFloat64).contiguous().reshape({-1});
    const double* px = x.data_ptr<double>();
    const double* py = y.data_ptr<double>();
    double s = 0.0;
    for (std::int64_t k = 0; k < x.numel(); ++k) s += (px[k] - py[k]) * (px[k] - py[k]);
    return s / static_cast<double>(x.numel());
}

double loop_mae(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = a.to(torch::kFloat64).contiguous().reshape({-1});
    auto y = b.to(torch::kFloat64).contiguous().reshape({-1});
    double s = 0.0;
    for (std::int64_t k = 0; k < x.numel(); ++k) s += std::abs(x.data_ptr<double>()[k] - y.data_ptr<double>()[k]);
    return s / static_cast<double>(x.numel());
}

// Windowed statistics recomputed with explicit loops over every fully
// contained 7x7 window of every channel.
double loop_ssim(const torch::Tensor& a, const torch::Tensor& b, int win = 7, double range = 1.0) {
    auto x = a.to(torch::kFloat64).contiguous();
    auto y = b.to(torch::kFloat64).contiguous();
    if (x.dim() == 2) {
        x = x.unsqueeze(0);
        y = y.unsqueeze(0);
    }
    const auto c = x.size(0), h = x.size(1), w = x.size(2);
    auto X = x.accessor<double, 3>();
    auto Y = y.accessor<double, 3>();
    const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
    const double np = win * win;
    double total = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        int count = 0;
        for (std::int64_t i = 0; i + win <= h; ++i)
            for (std::int64_t j = 0; j + win <= w; ++j) {
                double mx = 0, my = 0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        mx += X[ch][i + u][j + v];
                        my += Y[ch][i + u][j + v];
                    }
                mx /= np;
                my /= np;
                double vx = 0, vy = 0, cxy = 0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        const double dx = X[ch][i + u][j + v] - mx, dy = Y[ch][i + u][j + v] - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cxy += dx * dy;
                    }
                vx /= np - 1;
                vy /= np - 1;
                cxy /= np - 1;
                sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        total += sum / count;
    }
    return total / static_cast<double>(c);
}

double brute_hausdorff(const torch::Tensor& a, const torch::Tensor& b) {
    auto pa = torch::nonzero(a).to(torch::kFloat64);
    auto pb = torch::nonzero(b).to(torch::kFloat64);
    auto directed = [](const torch::Tensor& p, const torch::Tensor& q) {
        double worst = 0.0;
        for (std::int64_t i = 0; i < p.size(0); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::int64_t j = 0; j < q.size(0); ++j) {
                const double dy = p[i][0].item<double>() - q[j][0].item<double>();
                const double dx = p[i][1].item<double>() - q[j][1].item<double>();
                best = std::min(best, std::sqrt(dy * dy + dx * dx));
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(pa, pb), directed(pb, pa));
}

double brute_dice(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = a.contiguous(), y = b.contiguous();
    std::int64_t na = 0, nb = 0, both = 0;
    for (std::int64_t k = 0; k < x.numel(); ++k) {
        const bool u = x.data_ptr<bool>()[k], v = y.data_ptr<bool>()[k];
        na += u;
        nb += v;
        both += u && v;
    }
    return na + nb == 0 ? 1.0 : 2.0 * both / static_cast<double>(na + nb);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("psnr closed forms") {
    auto a = uniform({1, 8, 8}, 1);
    CHECK(psnr(a, a) == 100.0);
    // one pixel off by 1 among 100 -> MSE = 0.01 -> 20 dB
    auto x = torch::zeros({1, 10, 10}, torch::kFloat64);
    auto y = x.clone();
    y[0][3][4] = 1.0;
    CHECK(mse(x, y) == 0.01);
    CHECK(psnr(x, y) == 20.0);
    MetricConfig cfg;
    cfg.dynamic_range = 2.0;
    CHECK(psnr(x, y, cfg) == doctest::Approx(10.0 * std::log10(400.0)).epsilon(1e-15));
}

TEST_CASE("psnr matches the reference formula on 100 random pairs") {
    for (int k = 0; k < 100; ++k) {
        auto a = uniform({1, 9, 11}, 2 * k + 10, torch::kFloat64);
        auto b = uniform({1, 9, 11}, 2 * k + 11, torch::kFloat64);
        const double ref = 10.0 * std::log10(1.0 / loop_mse(a, b));
        CHECK(std::abs(psnr(a, b) - ref) < 1e-9);
        CHECK(psnr(a, b) == psnr(b, a));
    }
}

TEST_CASE("psnr strictly decreases as mse grows") {
    auto x = torch::full({1, 8, 8}, 0.5, torch::kFloat64);
    double prev = std::numeric_limits<double>::infinity();
    for (double off : {0.01, 0.02, 0.05, 0.1, 0.2, 0.4}) {
        const double p = psnr(x, x + off);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim closed forms and golden value") {
    auto a = uniform({1, 16, 16}, 3);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    auto zero = torch::zeros({1, 16, 16});
    auto one = torch::ones({1, 16, 16});
    const double c1 = 1e-4;
    CHECK(ssim(zero, one) == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-9));

    // value produced by a widely used reference implementation for this fixture
    auto yy = torch::arange(12, torch::kFloat64).unsqueeze(1).expand({12, 12});
    auto xx = torch::arange(12, torch::kFloat64).unsqueeze(0).expand({12, 12});
    auto p = (torch::sin(0.7 * xx) * torch::cos(0.45 * yy) + 1.0) / 2.0;
    auto q = (p * 0.8 + 0.1 + 0.05 * torch::sin(1.3 * xx * yy / 7.0)).clamp(0.0, 1.0);
    CHECK(ssim(p, q) == doctest::Approx(0.9651872681067827).epsilon(1e-12));
}

TEST_CASE("ssim matches an explicit windowed loop on 100 random inputs") {
    for (int k = 0; k < 100; ++k) {
        const std::int64_t c = k % 3 == 0 ? 3 : 1;
        const std::int64_t h = 8 + k % 5, w = 9 + k % 4;
        auto a = uniform({c, h, w}, 500 + k, torch::kFloat64);
        auto b = (a + 0.3 * uniform({c, h, w}, 900 + k, torch::kFloat64)).clamp(0.0, 1.0);
        CHECK(std::abs(ssim(a, b) - loop_ssim(a, b)) < 1e-6);
        CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
        CHECK(ssim(a, b) <= 1.0 + 1e-12);
        CHECK(ssim(a, b) >= -1.0 - 1e-12);
    }
}

TEST_CASE("ssim rejects images smaller than the window") {
    auto a = uniform({1, 5, 5}, 4);
    CHECK_THROWS_AS(ssim(a, a), ShapeError);
}

TEST_CASE("mae and mse closed forms and loop oracle") {
    auto a = uniform({1, 8, 8}, 5, torch::kFloat64);
    CHECK(mae(a, a) == 0.0);
    CHECK(mse(a, a) == 0.0);
    CHECK(mae(a, a + 0.1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(mse(a, a + 0.1) == doctest::Approx(0.01).epsilon(1e-12));
    for (int k = 0; k < 100; ++k) {
        auto x = uniform({2, 7, 5}, 100 + k, torch::kFloat64);
        auto y = uniform({2, 7, 5}, 300 + k, torch::kFloat64);
        CHECK(std::abs(mse(x, y) - loop_mse(x, y)) < 1e-12);
        CHECK(std::abs(mae(x, y) - loop_mae(x, y)) < 1e-12);
        CHECK(mse(x, y) == mse(y, x));
        CHECK(mae(x, y) == mae(y, x));
    }
    CHECK_THROWS_AS(mse(a, uniform({1, 8, 7}, 6)), ShapeError);
}

TEST_CASE("dice closed forms") {
    auto m = testutil::blob_mask(20, 20, 7);
    CHECK(dice(m, m) == 1.0);
    auto x = torch::zeros({20, 20}, torch::kBool);
    auto y = torch::zeros({20, 20}, torch::kBool);
    x.index_put_({torch::indexing::Slice(0, 10), torch::indexing::Slice(0, 10)}, true);
    y.index_put_({torch::indexing::Slice(10, 20), torch::indexing::Slice(10, 20)}, true);
    CHECK(dice(x, y) == 0.0);
    // |X| = |Y| = 100 with 50 shared pixels
    auto z = torch::zeros({20, 20}, torch::kBool);
    z.index_put_({torch::indexing::Slice(5, 15), torch::indexing::Slice(0, 10)}, true);
    CHECK(dice(x, z) == 0.5);
    auto empty = torch::zeros({20, 20}, torch::kBool);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(dice(empty, x) == 0.0);
}

TEST_CASE("dice matches pixel counting on 100 random masks") {
    for (int k = 0; k < 100; ++k) {
        auto a = testutil::blob_mask(16, 18, 1000 + k);
        auto b = testutil::blob_mask(16, 18, 2000 + k);
        CHECK(std::abs(dice(a, b) - brute_dice(a, b)) < 1e-12);
        CHECK(dice(a, b) == dice(b, a));
        CHECK(dice(a, b) >= 0.0);
        CHECK(dice(a, b) <= 1.0);
    }
}

TEST_CASE("hausdorff closed forms") {
    auto x = torch::zeros({8, 8}, torch::kBool);
    auto y = torch::zeros({8, 8}, torch::kBool);
    x[0][0] = true;
    y[3][4] = true;
    CHECK(hausdorff(x, y) == 5.0);
    auto m = testutil::blob_mask(12, 12, 9);
    CHECK(hausdorff(m, m) == 0.0);

    auto yy = torch::arange(12, torch::kFloat64).unsqueeze(1).expand({12, 12});
    auto xx = torch::arange(12, torch::kFloat64).unsqueeze(0).expand({12, 12});
    auto ma = ((xx - 3).square() + (yy - 4).square()) <= 6.0;
    auto mb = ((xx - 8).square() + (yy - 9).square()) <= 3.0;
    CHECK(hausdorff(ma, mb) == doctest::Approx(7.810249675906654).epsilon(1e-14));
}

TEST_CASE("hausdorff empty-mask policy") {
    auto empty = torch::zeros({6, 8}, torch::kBool);
    auto one = empty.clone();
    one[2][2] = true;
    CHECK(hausdorff(empty, empty) == 0.0);
    CHECK(hausdorff(empty, one) == doctest::Approx(10.0));
    MetricConfig skip;
    skip.hd_empty_policy = HdEmptyPolicy::skip;
    CHECK(std::isnan(hausdorff(one, empty, skip)));
}

TEST_CASE("hausdorff matches all-pairs brute force on 100 random blobs") {
    for (int k = 0; k < 100; ++k) {
        auto a = testutil::blob_mask(14, 15, 3000 + k);
        auto b = testutil::blob_mask(14, 15, 4000 + k);
        const double fast = hausdorff(a, b);
        CHECK(std::abs(fast - brute_hausdorff(a, b)) < 1e-9);
        CHECK(fast == hausdorff(b, a));
        CHECK(fast >= 0.0);
    }
}

TEST_CASE("distance transform is exact") {
    auto m = testutil::blob_mask(10, 13, 42);
    auto d = distance_to_foreground(m);
    auto pts = torch::nonzero(m).to(torch::kFloat64);
    for (std::int64_t i = 0; i < 10; ++i)
        for (std::int64_t j = 0; j < 13; ++j) {
            auto dist = ((pts.select(1, 0) - i).square() + (pts.select(1, 1) - j).square()).sqrt().min();
            CHECK(d[i][j].item<double>() == doctest::Approx(dist.item<double>()).epsilon(1e-14));
        }
}

TEST_CASE("metric config validation") {
    MetricConfig cfg;
    cfg.dynamic_range = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    MetricConfig c2;
    CHECK(c2.ssim_c1() == doctest::Approx(1e-4));
    CHECK(c2.ssim_c2() == doctest::Approx(9e-4));
}

}
