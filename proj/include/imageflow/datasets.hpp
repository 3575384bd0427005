#pragma once

#include "imageflow/image.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace imageflow {

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// One subject's registered image sequence. Times are in raw acquisition units.
struct LongitudinalSeries {
    std::string series_id;
    std::vector<Image> images;           // each (C,H,W) in [0,1]
    std::vector<double> times;           // strictly increasing
    std::optional<std::vector<Mask>> masks;

    std::size_t size() const noexcept { return images.size(); }
    /// Throws ConfigError when any invariant is violated.
    void validate() const;
};

struct Dataset {
    std::vector<LongitudinalSeries> series;
    std::map<std::string, Split> split_assignment;
    double time_scale = 1.0;

    const LongitudinalSeries& find(const std::string& id) const;
    std::vector<const LongitudinalSeries*> in_split(Split s) const;
    double normalized(double t) const { return t / time_scale; }
    void validate() const;
};

struct TrainingPair {
    std::string series_id;
    std::size_t i = 0;
    std::size_t j = 0;
    Image x_i;
    Image x_j;
    double t_i = 0.0;  // normalized
    double t_j = 0.0;  // normalized
    std::optional<Mask> mask_i;
    std::optional<Mask> mask_j;
};

struct SynthConfig {
    int num_series = 40;
    int image_size = 64;
    int visits_min = 2;
    int visits_max = 6;
    double horizon = 24.0;
    double lesion_base_radius = 4.0;
    std::array<double, 2> growth_rate_range{0.05, 0.5};  // pixels per time unit
    double texture_noise_std = 0.02;
    std::uint64_t background_structure_seed = 7;

    void validate() const;
};

/// Synthetic longitudinal series: a static smooth background with a disk-shaped
/// dark lesion whose radius grows linearly in time at a per-series rate. The
/// lesion darkness increases with the growth rate, so a single image carries
/// enough information to infer how fast its lesion will grow.
Dataset generate_synthetic(const SynthConfig& config, std::uint64_t seed);

/// Closed-form lesion radius used by the generator.
double lesion_radius(double base_radius, double growth_rate, double t);

/// Series-level partition by largest-remainder rounding. Recomputes
/// `time_scale` as the largest acquisition time in the training split.
Dataset split_series_level(Dataset dataset, std::array<double, 3> ratios, std::uint64_t seed);

/// All ordered pairs (i < j) within each series of the split.
std::vector<TrainingPair> enumerate_pairs(const Dataset& dataset, Split split);

struct AugmentPolicy {
    double flip_prob = 0.5;          // horizontal and vertical, each independently
    double max_rotation_deg = 10.0;
    double max_shift_px = 3.0;
    double max_scale_delta = 0.05;   // scale drawn in [1-d, 1+d]
    double max_brightness = 0.05;
    double max_contrast_delta = 0.1; // contrast factor in [1-d, 1+d]
    double noise_std = 0.01;

    static AugmentPolicy identity();
    bool is_identity() const;
};

/// Shared spatial transform for the whole pair, independent photometric jitter
/// per image. Deterministic given seed; outputs clipped to [0,1].
TrainingPair augment_pair(const TrainingPair& pair, const AugmentPolicy& policy, std::uint64_t seed);

}  // namespace imageflow
