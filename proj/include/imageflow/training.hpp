#pragma once

#include "imageflow/datasets.hpp"
#include "imageflow/model.hpp"
#include "imageflow/objectives.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace imageflow {

struct TrainConfig {
    double learning_rate = 1e-4;
    int epochs = 40;
    int actual_batch = 1;
    int effective_batch = 64;
    int grad_accumulation = 64;
    double ema_decay = 0.9;
    double warmup_fraction = 0.05;
    double weight_decay = 1e-2;
    std::uint64_t seed = 0;
    bool regularizers_on = true;   // false: reconstruction loss only
    LossWeights weights;
    bool augment = true;
    AugmentPolicy augment_policy;
    int max_val_pairs = 0;          // 0 = every validation pair

    LossWeights effective_weights() const { return regularizers_on ? weights : LossWeights::none(); }
    void validate() const;
};

/// Linear warmup from 0 to the peak, then cosine annealing to 0 at the last step.
class CosineWarmupSchedule {
public:
    CosineWarmupSchedule(double peak, std::int64_t total_steps, std::int64_t warmup_steps);
    double lr(std::int64_t step) const;
    std::int64_t total_steps() const { return total_; }
    std::int64_t warmup_steps() const { return warmup_; }

private:
    double peak_;
    std::int64_t total_;
    std::int64_t warmup_;
};

/// Exponential moving average of a module's parameters.
class Ema {
public:
    Ema(torch::nn::Module& module, double decay);
    void update(torch::nn::Module& module);
    void copy_to(torch::nn::Module& module) const;
    const std::vector<torch::Tensor>& shadow() const { return shadow_; }
    double decay() const { return decay_; }

private:
    double decay_;
    std::vector<torch::Tensor> shadow_;
};

struct StepRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double total = 0.0, reconstruction = 0.0, visual = 0.0, contrastive = 0.0, smoothness = 0.0;
    double lr = 0.0;
    std::optional<double> val_psnr;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;   // reconstruction MSE on validation pairs
    double val_psnr = 0.0;
};

struct History {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_psnr = 0.0;
};

struct ModelState {
    ForecastNet live{nullptr};
    ForecastNet ema{nullptr};
    ForecastNet best{nullptr};   // EMA weights at the best validation PSNR
    std::shared_ptr<torch::optim::AdamW> optimizer;
    std::int64_t step = 0;
    double time_scale = 1.0;
};

struct TrainResult {
    ModelState state;
    History history;
};

using Logger = std::function<void(const std::string&)>;

/// Pairwise training over every (i < j) pair of the train split.
TrainResult train(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& config,
                  const Logger& log = {});

/// Forecast with EMA weights. Throws ConfigError for t_j < t_i unless allowed.
Image predict(ForecastNet& model, const Image& x_i, double t_i, double t_j, bool allow_backward = false,
              std::uint64_t seed = 0);
Image predict(const ModelState& state, const Image& x_i, double t_i, double t_j, bool allow_backward = false);

/// Mean total loss over every pair of `history` (normalized by time_scale), with
/// no augmentation and no input noise.
double history_loss(ForecastNet& model, const LongitudinalSeries& history, double time_scale,
                    const LossWeights& weights);

struct TtoConfig {
    int iterations = 1;
    double learning_rate = 1e-4;
    bool full_model = false;  // true: also tune backbone and head
    LossWeights weights;
};

/// Fine-tune a clone's flow fields on all pairs within `history`; the original
/// model is untouched.
ForecastNet test_time_optimize(ForecastNet& model, const LongitudinalSeries& history, double time_scale,
                               const TtoConfig& config);

}  // namespace imageflow
