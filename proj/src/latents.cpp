#include "imageflow/latents.hpp"

#include "imageflow/error.hpp"
#include "imageflow/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace imageflow {

torch::Tensor Pca::transform(const torch::Tensor& x) const {
    return torch::matmul(x.to(torch::kFloat64) - mean, components.t());
}

Pca fit_pca(const torch::Tensor& x, int k) {
    if (x.dim() != 2) throw ShapeError("fit_pca: expected (N, D)");
    if (k < 1 || k > x.size(1)) throw ConfigError("fit_pca: k must be in [1, D]");
    if (x.size(0) < 1) throw ConfigError("fit_pca: need at least one row");
    auto d = x.to(torch::kFloat64);
    Pca p;
    p.mean = d.mean(0);
    auto centered = d - p.mean;
    auto [u, s, vh] = torch::linalg_svd(centered, /*full_matrices=*/false);
    const auto avail = std::min<std::int64_t>(k, vh.size(0));
    auto comps = torch::zeros({k, d.size(1)}, torch::kFloat64);
    comps.slice(0, 0, avail).copy_(vh.slice(0, 0, avail));
    for (std::int64_t r = 0; r < avail; ++r) {
        auto row = comps[r];
        const auto idx = row.abs().argmax().item<std::int64_t>();
        if (row[idx].item<double>() < 0.0) row.neg_();
    }
    const double denom = std::max<std::int64_t>(1, d.size(0) - 1);
    auto var = torch::zeros({k}, torch::kFloat64);
    var.slice(0, 0, avail).copy_(s.slice(0, 0, avail).square() / denom);
    p.components = comps;
    p.explained_variance = var;
    return p;
}

std::vector<LatentRecord> export_latents(ForecastNet& model, const Dataset& dataset, double time_scale,
                                         std::optional<Split> split) {
    if (!model->is_flow_model()) throw ConfigError("latent export needs a flow model");
    torch::NoGradGuard guard;
    model->eval();
    std::vector<LatentRecord> out;
    std::vector<torch::Tensor> rows;
    for (const auto& s : dataset.series) {
        if (split) {
            auto it = dataset.split_assignment.find(s.series_id);
            if (it == dataset.split_assignment.end() || it->second != *split) continue;
        }
        for (std::size_t k = 0; k < s.size(); ++k) {
            auto v = pool_latent(model->encode(s.images[k]).bottleneck()).to(torch::kFloat64).contiguous();
            LatentRecord r;
            r.series_id = s.series_id;
            r.visit = k;
            r.normalized_time = s.times[k] / time_scale;
            r.vector.assign(v.data_ptr<double>(), v.data_ptr<double>() + v.numel());
            out.push_back(std::move(r));
            rows.push_back(v);
        }
    }
    if (out.empty()) return out;
    auto x = torch::stack(rows);
    const int k = static_cast<int>(std::min<std::int64_t>(2, x.size(1)));
    auto pca = fit_pca(x, k);
    auto coords = pca.transform(x);
    for (std::size_t n = 0; n < out.size(); ++n) {
        out[n].pc1 = coords[static_cast<std::int64_t>(n)][0].item<double>();
        out[n].pc2 = k > 1 ? coords[static_cast<std::int64_t>(n)][1].item<double>() : 0.0;
    }
    return out;
}

std::string latents_csv(const std::vector<LatentRecord>& records) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "series_id,visit,normalized_time,pc1,pc2";
    const std::size_t dim = records.empty() ? 0 : records[0].vector.size();
    for (std::size_t d = 0; d < dim; ++d) os << ",z" << d;
    os << '\n';
    for (const auto& r : records) {
        os << r.series_id << ',' << r.visit << ',' << r.normalized_time << ',' << r.pc1 << ',' << r.pc2;
        for (double v : r.vector) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

namespace {

struct Canvas {
    int size;
    std::vector<float> rgb;  // (3, size, size)

    explicit Canvas(int s) : size(s), rgb(static_cast<std::size_t>(3 * s * s), 1.0f) {}

    void put(int x, int y, float r, float g, float b) {
        if (x < 0 || y < 0 || x >= size || y >= size) return;
        const auto i = static_cast<std::size_t>(y * size + x);
        const auto plane = static_cast<std::size_t>(size * size);
        rgb[i] = r;
        rgb[plane + i] = g;
        rgb[2 * plane + i] = b;
    }

    void line(double x0, double y0, double x1, double y1, float shade) {
        const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
        for (int k = 0; k <= n; ++k) {
            const double a = static_cast<double>(k) / n;
            put(static_cast<int>(std::lround(x0 + a * (x1 - x0))), static_cast<int>(std::lround(y0 + a * (y1 - y0))),
                shade, shade, shade);
        }
    }

    void disk(double cx, double cy, double radius, float r, float g, float b) {
        const int lo_x = static_cast<int>(std::floor(cx - radius)), hi_x = static_cast<int>(std::ceil(cx + radius));
        const int lo_y = static_cast<int>(std::floor(cy - radius)), hi_y = static_cast<int>(std::ceil(cy + radius));
        for (int y = lo_y; y <= hi_y; ++y)
            for (int x = lo_x; x <= hi_x; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) put(x, y, r, g, b);
    }
};

}  // namespace

Image latent_scatter(const std::vector<LatentRecord>& records, int size) {
    if (size < 32) throw ConfigError("latent_scatter: size must be >= 32");
    Canvas c(size);
    if (!records.empty()) {
        double x0 = records[0].pc1, x1 = x0, y0 = records[0].pc2, y1 = y0;
        for (const auto& r : records) {
            x0 = std::min(x0, r.pc1);
            x1 = std::max(x1, r.pc1);
            y0 = std::min(y0, r.pc2);
            y1 = std::max(y1, r.pc2);
        }
        const double margin = 0.08 * size;
        const double span = std::max({x1 - x0, y1 - y0, 1e-12});
        auto px = [&](double v) { return margin + (v - x0) / span * (size - 2 * margin); };
        auto py = [&](double v) { return size - margin - (v - y0) / span * (size - 2 * margin); };
        for (std::size_t n = 1; n < records.size(); ++n) {
            const auto& a = records[n - 1];
            const auto& b = records[n];
            if (a.series_id != b.series_id) continue;
            const double ax = px(a.pc1), ay = py(a.pc2), bx = px(b.pc1), by = py(b.pc2);
            c.line(ax, ay, bx, by, 0.55f);
            const double len = std::hypot(bx - ax, by - ay);
            if (len < 1e-9) continue;
            const double ux = (bx - ax) / len, uy = (by - ay) / len, head = std::min(8.0, 0.4 * len);
            for (double sgn : {-1.0, 1.0})
                c.line(bx, by, bx - head * (ux * 0.87 - sgn * uy * 0.5), by - head * (uy * 0.87 + sgn * ux * 0.5),
                       0.35f);
        }
        for (const auto& r : records) {
            const float t = static_cast<float>(std::clamp(r.normalized_time, 0.0, 1.0));
            c.disk(px(r.pc1), py(r.pc2), 3.5, t, 0.1f, 1.0f - t);
        }
    }
    return torch::from_blob(c.rgb.data(), {3, size, size}, torch::kFloat32).clone();
}

}  // namespace imageflow
