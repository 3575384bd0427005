#pragma once

#include "imageflow/config.hpp"
#include "imageflow/evaluation.hpp"
#include "imageflow/io.hpp"
#include "imageflow/latents.hpp"
#include "imageflow/training.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace imageflow {

namespace fs = std::filesystem;

/// Appends to <run_dir>/log.txt and optionally echoes to stderr.
class RunLog {
public:
    RunLog(const fs::path& run_dir, bool echo);
    void operator()(const std::string& line);
    Logger logger();

private:
    fs::path path_;
    bool echo_;
};

/// Output root: $IMAGEFLOW_RUNS_DIR, or "runs".
fs::path runs_root();

/// Synthetic dataset, split into train/val/test, written as a dataset directory.
Dataset cmd_synth(const RunConfig& config, const fs::path& out_dir);

/// Affine-registers every series onto its first visit.
Dataset cmd_register(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir);

/// Trains the configured variant; writes best.ckpt, ema.ckpt and history.csv.
TrainResult cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir, bool echo = false);

/// Forecast from one image; raw times.
Image cmd_predict(const fs::path& checkpoint, const fs::path& image, double t_i, double t_j, const fs::path& out_png,
                  bool allow_backward = false);

/// Learned methods use the listed checkpoints (one per seed) or are trained
/// from the config when none are given.
EvalReport cmd_evaluate(const RunConfig& config, const fs::path& data_dir, const std::vector<std::string>& methods,
                        const std::map<std::string, std::vector<fs::path>>& checkpoints, const fs::path& out_dir,
                        bool echo = false);

struct TtoOutcome {
    double history_loss_before = 0.0;
    double history_loss_after = 0.0;
    double psnr_before = 0.0;
    double psnr_after = 0.0;
};

/// Fine-tunes on all but the last visit of the series, then forecasts the last.
TtoOutcome cmd_tto(const fs::path& checkpoint, const fs::path& series_dir, int iterations, double learning_rate,
                   const fs::path& out_dir);

/// n SDE forecasts plus a 16-bit dispersion map scaled by a recorded factor.
TrajectorySamples cmd_sample(const fs::path& checkpoint, const fs::path& image, double t_i, double t_j, int n,
                             std::uint64_t seed, const fs::path& out_dir);

// ---- ablation harness -------------------------------------------------------------

enum class AblationAxis { field_param, latent_scope, lambda_v, lambda_c, lambda_s };
std::string to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(const std::string& s);

struct AblationVariant {
    std::string label;
    ModelConfig model;
    TrainConfig training;
    std::array<double, 6> reference;  // published psnr, ssim, mae, mse, dice, hd
};

/// Row set of one axis, derived from a base config. Lambda sweeps vary one
/// weight over {0, 0.001, 0.01, 0.1, 1} with the other two at 0.
std::vector<AblationVariant> ablation_variants(AblationAxis axis, const RunConfig& base);

struct AblationRow {
    std::string label;
    std::array<double, 6> desk;  // test-pair means in metric_names() order
    std::array<double, 6> reference;
    std::string pair_hash;
    std::size_t n_pairs = 0;
};

std::vector<AblationRow> run_ablation(AblationAxis axis, const RunConfig& base, const Dataset& dataset,
                                      Segmenter& segmenter, const Logger& log = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

std::vector<AblationRow> cmd_ablate(const RunConfig& config, const fs::path& data_dir, AblationAxis axis,
                                    const fs::path& out_dir, bool echo = false);

/// latents.csv and latents.png.
std::vector<LatentRecord> cmd_latents(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out_dir);

/// Forecaster for a named method over evaluation pairs (raw times).
Forecaster make_forecaster(const std::string& method, ForecastNet model = nullptr, double time_scale = 1.0,
                           std::uint64_t seed = 0);

}  // namespace imageflow
