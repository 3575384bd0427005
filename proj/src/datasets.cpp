#include "imageflow/datasets.hpp"

#include "imageflow/error.hpp"
#include "imageflow/geometry.hpp"
#include "imageflow/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace imageflow {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "'");
}

void LongitudinalSeries::validate() const {
    const auto n = images.size();
    if (n < 2) throw ConfigError("series " + series_id + ": needs at least 2 visits");
    if (times.size() != n) throw ConfigError("series " + series_id + ": times/images length mismatch");
    if (masks && masks->size() != n) throw ConfigError("series " + series_id + ": masks/images length mismatch");
    for (std::size_t k = 1; k < n; ++k)
        if (!(times[k] > times[k - 1]))
            throw ConfigError("series " + series_id + ": times must be strictly increasing");
    for (const auto& im : images) {
        check_image(im, "series " + series_id);
        check_same_shape(im, images.front(), "series " + series_id);
        if (im.min().item<double>() < 0.0 || im.max().item<double>() > 1.0)
            throw ConfigError("series " + series_id + ": pixel values outside [0,1]");
    }
}

const LongitudinalSeries& Dataset::find(const std::string& id) const {
    for (const auto& s : series)
        if (s.series_id == id) return s;
    throw ConfigError("unknown series '" + id + "'");
}

std::vector<const LongitudinalSeries*> Dataset::in_split(Split split) const {
    std::vector<const LongitudinalSeries*> out;
    for (const auto& s : series) {
        auto it = split_assignment.find(s.series_id);
        if (it != split_assignment.end() && it->second == split) out.push_back(&s);
    }
    return out;
}

void Dataset::validate() const {
    if (!(time_scale > 0.0)) throw ConfigError("dataset time_scale must be positive");
    for (const auto& s : series) s.validate();
}

void SynthConfig::validate() const {
    if (num_series <= 0) throw ConfigError("synth: num_series must be positive");
    if (image_size <= 0) throw ConfigError("synth: image_size must be positive");
    if (visits_min < 2) throw ConfigError("synth: visits_min must be >= 2");
    if (visits_max < visits_min) throw ConfigError("synth: visits_max must be >= visits_min");
    if (!(horizon > 0.0)) throw ConfigError("synth: horizon must be positive");
    if (lesion_base_radius < 0.0) throw ConfigError("synth: lesion_base_radius must be non-negative");
    if (growth_rate_range[0] < 0.0 || growth_rate_range[1] < growth_rate_range[0])
        throw ConfigError("synth: growth_rate_range must be non-negative and ordered");
    if (texture_noise_std < 0.0) throw ConfigError("synth: texture_noise_std must be non-negative");
}

double lesion_radius(double base_radius, double growth_rate, double t) {
    return base_radius + growth_rate * t;
}

namespace {

torch::Generator make_generator(std::uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

torch::Tensor smooth_background(int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    std::uniform_int_distribution<int> freq(-3, 3);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    auto coords = torch::arange(size, torch::kFloat64) / static_cast<double>(size);
    auto yy = coords.view({size, 1}).expand({size, size});
    auto xx = coords.view({1, size}).expand({size, size});
    auto acc = torch::zeros({size, size}, torch::kFloat64);
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
        const double a = amp(rng);
        int fx = freq(rng), fy = freq(rng);
        if (fx == 0 && fy == 0) fx = 1;
        const double ph = phase(rng);
        acc += a * torch::cos(2.0 * std::numbers::pi * (fx * xx + fy * yy) + ph);
        total += a;
    }
    return 0.65 + 0.15 * acc / total;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    const int size = config.image_size;
    Dataset ds;
    std::mt19937_64 rng(derive_seed(seed, {0}));
    std::uniform_int_distribution<int> visits(config.visits_min, config.visits_max);
    std::uniform_real_distribution<double> when(0.0, config.horizon);
    std::uniform_real_distribution<double> rate(config.growth_rate_range[0], config.growth_rate_range[1]);
    std::uniform_real_distribution<double> centre(0.3 * size, 0.7 * size);

    auto coords = torch::arange(size, torch::kFloat64);
    auto yy = coords.view({size, 1}).expand({size, size});
    auto xx = coords.view({1, size}).expand({size, size});

    double max_time = 0.0;
    for (int m = 0; m < config.num_series; ++m) {
        LongitudinalSeries s;
        std::ostringstream id;
        id << "s" << std::setw(3) << std::setfill('0') << m;
        s.series_id = id.str();

        const int n = visits(rng);
        std::vector<double> times;
        while (static_cast<int>(times.size()) < n) {
            const double t = when(rng);
            if (std::none_of(times.begin(), times.end(), [&](double u) { return std::abs(u - t) < 1e-6; }))
                times.push_back(t);
        }
        std::sort(times.begin(), times.end());
        const double r = rate(rng);
        const double cx = centre(rng), cy = centre(rng);
        const double span = config.growth_rate_range[1] - config.growth_rate_range[0];
        const double severity = span > 0.0 ? (r - config.growth_rate_range[0]) / span : 0.5;
        const double lesion_level = 0.3 - 0.2 * severity;

        auto background = smooth_background(size, derive_seed(config.background_structure_seed, {std::uint64_t(m)}));
        auto dist2 = (xx - cx).square() + (yy - cy).square();
        auto gen = make_generator(derive_seed(seed, {1, std::uint64_t(m)}));

        std::vector<Mask> masks;
        for (int k = 0; k < n; ++k) {
            const double radius = lesion_radius(config.lesion_base_radius, r, times[k]);
            auto mask = dist2 <= radius * radius;
            auto lesion = lesion_level + 0.2 * (background - 0.65);
            auto img = torch::where(mask, lesion, background);
            img = img + config.texture_noise_std *
                            torch::randn({size, size}, gen, torch::TensorOptions().dtype(torch::kFloat64));
            s.images.push_back(img.clamp(0.0, 1.0).to(torch::kFloat32).unsqueeze(0).contiguous());
            masks.push_back(mask.contiguous());
        }
        s.times = std::move(times);
        s.masks = std::move(masks);
        max_time = std::max(max_time, s.times.back());
        ds.series.push_back(std::move(s));
    }
    ds.time_scale = max_time > 0.0 ? max_time : 1.0;
    return ds;
}

Dataset split_series_level(Dataset dataset, std::array<double, 3> ratios, std::uint64_t seed) {
    for (double r : ratios)
        if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    const std::size_t n = dataset.series.size();
    if (n < 3) throw ConfigError("split: need at least 3 series to populate train/val/test");

    // largest remainder
    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double q = ratios[k] * static_cast<double>(n);
        count[k] = static_cast<std::size_t>(std::floor(q));
        rem[k] = q - std::floor(q);
        assigned += count[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++count[order[k % 3]];
    for (int k = 0; k < 3; ++k) {
        while (count[k] == 0) {
            auto donor = std::max_element(count.begin(), count.end());
            --*donor;
            ++count[k];
        }
    }

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, {2}));
    std::shuffle(idx.begin(), idx.end(), rng);

    dataset.split_assignment.clear();
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < count[k]; ++c, ++pos)
            dataset.split_assignment[dataset.series[idx[pos]].series_id] = static_cast<Split>(k);

    double max_time = 0.0;
    for (const auto* s : dataset.in_split(Split::train)) max_time = std::max(max_time, s->times.back());
    if (!(max_time > 0.0)) throw ConfigError("split: training split has no positive acquisition time");
    dataset.time_scale = max_time;
    return dataset;
}

std::vector<TrainingPair> enumerate_pairs(const Dataset& dataset, Split split) {
    std::vector<TrainingPair> pairs;
    for (const auto* s : dataset.in_split(split)) {
        for (std::size_t i = 0; i < s->size(); ++i) {
            for (std::size_t j = i + 1; j < s->size(); ++j) {
                TrainingPair p;
                p.series_id = s->series_id;
                p.i = i;
                p.j = j;
                p.x_i = s->images[i];
                p.x_j = s->images[j];
                p.t_i = dataset.normalized(s->times[i]);
                p.t_j = dataset.normalized(s->times[j]);
                if (s->masks) {
                    p.mask_i = (*s->masks)[i];
                    p.mask_j = (*s->masks)[j];
                }
                pairs.push_back(std::move(p));
            }
        }
    }
    return pairs;
}

AugmentPolicy AugmentPolicy::identity() {
    return AugmentPolicy{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
}

bool AugmentPolicy::is_identity() const {
    return flip_prob == 0.0 && max_rotation_deg == 0.0 && max_shift_px == 0.0 &&
           max_scale_delta == 0.0 && max_brightness == 0.0 && max_contrast_delta == 0.0 &&
           noise_std == 0.0;
}

namespace {

double uniform(std::mt19937_64& rng, double half_width) {
    if (half_width == 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
}

Image photometric(const Image& x, const AugmentPolicy& p, std::mt19937_64& rng, torch::Generator& gen) {
    const double brightness = uniform(rng, p.max_brightness);
    const double contrast = 1.0 + uniform(rng, p.max_contrast_delta);
    auto y = x;
    if (contrast != 1.0) {
        auto mean = x.mean();
        y = (x - mean) * contrast + mean;
    }
    if (brightness != 0.0) y = y + brightness;
    if (p.noise_std > 0.0) y = y + p.noise_std * torch::randn(x.sizes(), gen, x.options());
    return y.clamp(0.0, 1.0);
}

}  // namespace

TrainingPair augment_pair(const TrainingPair& pair, const AugmentPolicy& policy, std::uint64_t seed) {
    TrainingPair out = pair;
    if (policy.is_identity()) return out;

    std::mt19937_64 rng(derive_seed(seed, {3}));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const bool hflip = coin(rng) < policy.flip_prob;
    const bool vflip = coin(rng) < policy.flip_prob;
    const double angle = uniform(rng, policy.max_rotation_deg);
    const double scale = 1.0 + uniform(rng, policy.max_scale_delta);
    const double sx = uniform(rng, policy.max_shift_px);
    const double sy = uniform(rng, policy.max_shift_px);
    const auto transform = AffineTransform::from_params(angle, scale, sx, sy);
    const bool warp = angle != 0.0 || scale != 1.0 || sx != 0.0 || sy != 0.0;

    auto spatial = [&](const torch::Tensor& t) {
        auto r = t;
        if (hflip) r = flip_horizontal(r);
        if (vflip) r = flip_vertical(r);
        if (warp) r = warp_affine(r, transform, Interpolation::bilinear);
        return r;
    };
    out.x_i = spatial(pair.x_i);
    out.x_j = spatial(pair.x_j);
    if (pair.mask_i) out.mask_i = spatial(*pair.mask_i);
    if (pair.mask_j) out.mask_j = spatial(*pair.mask_j);

    auto gen = make_generator(derive_seed(seed, {4}));
    out.x_i = photometric(out.x_i, policy, rng, gen);
    out.x_j = photometric(out.x_j, policy, rng, gen);
    return out;
}

}  // namespace imageflow
