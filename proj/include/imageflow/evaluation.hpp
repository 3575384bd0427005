#pragma once

#include "imageflow/backbone.hpp"
#include "imageflow/datasets.hpp"
#include "imageflow/metrics.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace imageflow {

// ---- auxiliary segmenter -------------------------------------------------

struct SegmenterConfig {
    int base_channels = 8;
    std::vector<int> channel_multipliers{1, 2};
    int epochs = 15;
    int batch_size = 8;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Small encoder-decoder producing per-pixel lesion logits.
class Segmenter {
public:
    Segmenter() = default;
    Segmenter(int in_channels, int image_size, const SegmenterConfig& config);

    torch::Tensor probabilities(const Image& x);  // (H,W) or (N,H,W)
    Mask segment(const Image& x);                 // probabilities > 0.5
    UNet& net() { return net_; }
    bool defined() const { return static_cast<bool>(net_); }

private:
    UNet net_{nullptr};
};

/// Pixelwise binary cross-entropy on the train split's image/mask pairs.
Segmenter train_segmenter(const Dataset& dataset, const SegmenterConfig& config,
                          const std::function<void(const std::string&)>& log = {});

// ---- evaluation pairs ------------------------------------------------------

/// Forecast x_j from the most recent earlier visit x_{j-1}; extrapolators see
/// the whole history x_0..x_{j-1}. Times are raw.
struct EvalPair {
    std::string series_id;
    std::size_t i = 0;
    std::size_t j = 0;
    Image x_i;
    Image x_j;
    double t_i = 0.0;
    double t_j = 0.0;
    std::vector<Image> history;
    std::vector<double> history_times;
    std::optional<Mask> mask_i;
    std::optional<Mask> mask_j;
};

/// Every target visit j >= min_history of every series in `split`.
std::vector<EvalPair> evaluation_pairs(const Dataset& dataset, Split split, std::size_t min_history = 2);

/// FNV-1a digest of the ordered (series, i, j) list, as 16 hex digits.
std::string pair_list_hash(const std::vector<EvalPair>& pairs);

// ---- subsets ----------------------------------------------------------------

enum class Subset { all, minor_growth, major_growth };
std::string to_string(Subset s);

/// true = major growth: DSC(mask_i, mask_j) < 0.9. Ground-truth masks when the
/// pair carries them, otherwise segmenter masks.
std::vector<bool> subset_split(const std::vector<EvalPair>& pairs, Segmenter* segmenter);

// ---- scoring ------------------------------------------------------------------

struct PairMetrics {
    double psnr = 0.0, ssim = 0.0, mae = 0.0, mse = 0.0, dice = 0.0, hd = 0.0;
};

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{"psnr", "ssim", "mae", "mse", "dice", "hd"};
    return names;
}
bool higher_is_better(const std::string& metric);
double metric_value(const PairMetrics& m, const std::string& metric);

/// Image metrics against x_j; masks of both the forecast and x_j come from the segmenter.
PairMetrics score_prediction(const Image& prediction, const Image& truth, Segmenter& segmenter,
                             const MetricConfig& config);

using Forecaster = std::function<Image(const EvalPair&)>;

// ---- report -------------------------------------------------------------------

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n_pairs = 0;
};

struct EvalReport {
    std::vector<std::string> methods;
    std::size_t seeds = 1;
    std::size_t n_all = 0, n_minor = 0, n_major = 0;
    std::string pair_hash;
    // method -> subset -> metric
    std::map<std::string, std::map<std::string, std::map<std::string, MetricSummary>>> table;
    std::map<std::string, double> rank;

    const MetricSummary& at(const std::string& method, Subset subset, const std::string& metric) const;
    /// method,subset,metric,mean,std,n_pairs
    std::string to_csv() const;
    /// method,mean_rank
    std::string ranks_csv() const;
    std::string to_json() const;
};

/// Mean fractional rank per method (column) across cells (rows); cells holding
/// a NaN are skipped. Ties share the average of their ranks.
std::vector<double> mean_ranks(const std::vector<std::vector<double>>& cells, const std::vector<bool>& higher_better);

/// Fills `report.rank` from its table over every (subset, metric) cell.
void rank_methods(EvalReport& report);

/// per_seed[method][seed][pair]: mean over the pairs of each subset per seed,
/// then mean and sample std across seeds.
EvalReport build_report(const std::vector<std::string>& methods,
                        const std::map<std::string, std::vector<std::vector<PairMetrics>>>& per_seed,
                        const std::vector<bool>& major, const std::string& pair_hash);

/// Score every method (one forecaster per seed) on the same pairs.
EvalReport evaluate_methods(const std::vector<EvalPair>& pairs, const std::vector<std::string>& methods,
                            const std::map<std::string, std::vector<Forecaster>>& forecasters,
                            Segmenter& segmenter, const MetricConfig& config);

}  // namespace imageflow
