#include "imageflow/training.hpp"

#include "imageflow/error.hpp"
#include "imageflow/metrics.hpp"
#include "imageflow/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace imageflow {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be positive");
    if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
    if (actual_batch != 1) throw ConfigError("training: only actual_batch = 1 is supported");
    if (effective_batch < 1 || grad_accumulation < 1) throw ConfigError("training: batch sizes must be >= 1");
    if (effective_batch != actual_batch * grad_accumulation)
        throw ConfigError("training: effective_batch must equal actual_batch * grad_accumulation");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("training: ema_decay must be in [0, 1)");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("training: warmup_fraction must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("training: weight_decay must be non-negative");
    if (max_val_pairs < 0) throw ConfigError("training: max_val_pairs must be non-negative");
    weights.validate();
}

CosineWarmupSchedule::CosineWarmupSchedule(double peak, std::int64_t total_steps, std::int64_t warmup_steps)
    : peak_(peak), total_(total_steps), warmup_(warmup_steps) {
    if (total_ < 1) throw ConfigError("schedule: total_steps must be >= 1");
    if (warmup_ < 0 || warmup_ >= total_) warmup_ = std::clamp<std::int64_t>(warmup_, 0, total_ - 1);
}

double CosineWarmupSchedule::lr(std::int64_t step) const {
    step = std::clamp<std::int64_t>(step, 0, total_ - 1);
    if (step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
    const auto span = total_ - 1 - warmup_;
    if (span <= 0) return peak_;
    const double progress = static_cast<double>(step - warmup_) / static_cast<double>(span);
    return 0.5 * peak_ * (1.0 + std::cos(M_PI * progress));
}

Ema::Ema(torch::nn::Module& module, double decay) : decay_(decay) {
    torch::NoGradGuard guard;
    for (auto& p : module.parameters()) shadow_.push_back(p.detach().clone());
}

void Ema::update(torch::nn::Module& module) {
    torch::NoGradGuard guard;
    auto params = module.parameters();
    if (params.size() != shadow_.size()) throw Error("Ema: parameter count changed");
    for (std::size_t k = 0; k < params.size(); ++k) shadow_[k].mul_(decay_).add_(params[k].detach(), 1.0 - decay_);
}

void Ema::copy_to(torch::nn::Module& module) const {
    torch::NoGradGuard guard;
    auto params = module.parameters();
    if (params.size() != shadow_.size()) throw Error("Ema: parameter count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) params[k].copy_(shadow_[k]);
}

namespace {

struct ValResult {
    double loss = 0.0;
    double psnr = 0.0;
};

ValResult validate_pairs(ForecastNet& model, const std::vector<TrainingPair>& pairs, int epoch) {
    ValResult r;
    if (pairs.empty()) return r;
    torch::NoGradGuard guard;
    model->eval();
    for (const auto& p : pairs) {
        Image x_hat;
        try {
            x_hat = model->forecast(p.x_i, p.t_i, p.t_j, derive_seed(0, {p.i, p.j}));
        } catch (const IntegrationError& err) {
            throw TrainingError("epoch " + std::to_string(epoch) + " validation, series " + p.series_id + ": " +
                                err.what());
        }
        r.loss += mse(x_hat, p.x_j);
        r.psnr += psnr(x_hat, p.x_j);
    }
    r.loss /= static_cast<double>(pairs.size());
    r.psnr /= static_cast<double>(pairs.size());
    return r;
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
    for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

std::string fmt_step(const StepRecord& s) {
    std::ostringstream os;
    os << "epoch " << s.epoch << " step " << s.step << " loss " << s.total << " (rec " << s.reconstruction << ", vis "
       << s.visual << ", con " << s.contrastive << ", smooth " << s.smoothness << ") lr " << s.lr;
    return os.str();
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& config,
                  const Logger& log) {
    config.validate();
    model_config.validate();
    const auto weights = config.effective_weights();
    auto train_pairs = enumerate_pairs(dataset, Split::train);
    if (train_pairs.empty()) throw ConfigError("training: the train split has no (i < j) pairs");
    auto val_pairs = enumerate_pairs(dataset, Split::val);
    if (config.max_val_pairs > 0 && static_cast<int>(val_pairs.size()) > config.max_val_pairs) {
        std::mt19937_64 rng(derive_seed(config.seed, {99}));
        std::shuffle(val_pairs.begin(), val_pairs.end(), rng);
        val_pairs.resize(static_cast<std::size_t>(config.max_val_pairs));
    }

    torch::manual_seed(config.seed);
    TrainResult result;
    auto& st = result.state;
    st.time_scale = dataset.time_scale;
    st.live = ForecastNet(model_config);
    st.ema = clone_model(st.live);
    Ema ema(*st.live, config.ema_decay);
    st.optimizer = std::make_shared<torch::optim::AdamW>(
        st.live->trainable_parameters(),
        torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));

    const auto n = static_cast<std::int64_t>(train_pairs.size());
    const std::int64_t accum = config.grad_accumulation;
    const std::int64_t steps_per_epoch = (n + accum - 1) / accum;
    const std::int64_t total_steps = steps_per_epoch * config.epochs;
    CosineWarmupSchedule schedule(config.learning_rate, total_steps,
                                  static_cast<std::int64_t>(std::llround(config.warmup_fraction * total_steps)));
    if (log) {
        std::ostringstream os;
        os << "training " << to_string(model_config.variant) << " on " << n << " pairs, " << val_pairs.size()
           << " val pairs, " << total_steps << " optimizer steps";
        log(os.str());
    }

    std::vector<std::size_t> order(train_pairs.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        st.live->train();
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(config.seed, {static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), rng);

        StepRecord acc;
        std::int64_t in_step = 0;
        double epoch_loss = 0.0;
        st.optimizer->zero_grad();
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto e = static_cast<std::uint64_t>(epoch);
            auto pair = train_pairs[order[k]];
            if (config.augment) pair = augment_pair(pair, config.augment_policy, derive_seed(config.seed, {10, e, k}));
            LossBreakdown loss;
            try {
                auto out = st.live->forward_pair({pair.x_i, pair.x_j, pair.t_i, pair.t_j}, weights, true,
                                                 derive_seed(config.seed, {11, e, k}));
                loss = total_loss(out, weights);
            } catch (const IntegrationError& err) {
                throw TrainingError("epoch " + std::to_string(epoch) + ", series " + pair.series_id + ": " + err.what());
            } catch (const TrainingError& err) {
                throw TrainingError("epoch " + std::to_string(epoch) + ", series " + pair.series_id + ": " + err.what());
            }
            (loss.total / static_cast<double>(accum)).backward();
            const double total = loss.total.item<double>();
            epoch_loss += total;
            acc.total += total;
            acc.reconstruction += loss.reconstruction;
            acc.visual += loss.visual;
            acc.contrastive += loss.contrastive;
            acc.smoothness += loss.smoothness;
            ++in_step;

            if (in_step == accum || k + 1 == order.size()) {
                const double lr = schedule.lr(st.step);
                set_lr(*st.optimizer, lr);
                st.optimizer->step();
                st.optimizer->zero_grad();
                ema.update(*st.live);
                const double m = static_cast<double>(in_step);
                StepRecord rec{st.step, epoch, acc.total / m, acc.reconstruction / m, acc.visual / m,
                               acc.contrastive / m, acc.smoothness / m, lr, std::nullopt};
                result.history.steps.push_back(rec);
                ++st.step;
                acc = StepRecord{};
                in_step = 0;
            }
        }

        ema.copy_to(*st.ema);
        auto val = validate_pairs(st.ema, val_pairs, epoch);
        EpochRecord er{epoch, epoch_loss / static_cast<double>(n), val.loss, val.psnr};
        result.history.epochs.push_back(er);
        if (!result.history.steps.empty()) result.history.steps.back().val_psnr = val.psnr;
        if (result.history.best_epoch < 0 || val.psnr > result.history.best_val_psnr) {
            result.history.best_epoch = epoch;
            result.history.best_val_psnr = val.psnr;
            st.best = clone_model(st.ema);
        }
        if (log) {
            std::ostringstream os;
            os << fmt_step(result.history.steps.back()) << " | epoch loss " << er.train_loss << ", val mse "
               << er.val_loss << ", val psnr " << er.val_psnr;
            log(os.str());
        }
    }
    st.best->eval();
    st.ema->eval();
    return result;
}

Image predict(ForecastNet& model, const Image& x_i, double t_i, double t_j, bool allow_backward, std::uint64_t seed) {
    if (t_j < t_i && !allow_backward)
        throw ConfigError("predict: target time precedes the input time (set allow_backward to integrate backward)");
    if (t_j < t_i && !model->is_flow_model())
        throw ConfigError("predict: the t_unet variant cannot forecast backward in time");
    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    auto out = model->forecast(x_i, t_i, t_j, seed, allow_backward);
    model->train(was_training);
    return out;
}

Image predict(const ModelState& state, const Image& x_i, double t_i, double t_j, bool allow_backward) {
    auto model = state.best ? state.best : state.ema;
    if (!model) throw ConfigError("predict: model state has no trained weights");
    return predict(model, x_i, t_i / state.time_scale, t_j / state.time_scale, allow_backward);
}

namespace {

torch::Tensor history_loss_tensor(ForecastNet& model, const LongitudinalSeries& history, double time_scale,
                                  const LossWeights& weights) {
    const auto n = history.images.size();
    torch::Tensor sum;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            PairInputs in{history.images[i], history.images[j], history.times[i] / time_scale,
                          history.times[j] / time_scale};
            auto loss = total_loss(model->forward_pair(in, weights, false, derive_seed(0, {i, j})), weights).total;
            sum = sum.defined() ? sum + loss : loss;
            ++count;
        }
    }
    if (count == 0) throw ConfigError("history needs at least two visits");
    return sum / static_cast<double>(count);
}

}  // namespace

double history_loss(ForecastNet& model, const LongitudinalSeries& history, double time_scale,
                    const LossWeights& weights) {
    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    const double v = history_loss_tensor(model, history, time_scale, weights).item<double>();
    model->train(was_training);
    return v;
}

ForecastNet test_time_optimize(ForecastNet& model, const LongitudinalSeries& history, double time_scale,
                               const TtoConfig& config) {
    if (!model->is_flow_model()) throw ConfigError("test-time optimization needs a flow model");
    if (config.iterations < 0) throw ConfigError("tto: iterations must be non-negative");
    if (!(config.learning_rate > 0.0)) throw ConfigError("tto: learning_rate must be positive");
    if (history.images.size() < 2) throw ConfigError("tto: history needs at least two visits");
    config.weights.validate();

    auto tuned = clone_model(model);
    tuned->eval();
    std::vector<torch::Tensor> params;
    auto weights = config.weights;
    if (config.full_model) {
        params = tuned->trainable_parameters();
    } else {
        for (auto& p : tuned->parameters()) p.set_requires_grad(false);
        params = tuned->field_parameters();
        for (auto& p : params) p.set_requires_grad(true);
        weights.lambda_c = 0.0;  // the contrastive term never reaches the flow fields
    }
    torch::optim::Adam opt(params, torch::optim::AdamOptions(config.learning_rate));
    for (int it = 0; it < config.iterations; ++it) {
        opt.zero_grad();
        auto loss = history_loss_tensor(tuned, history, time_scale, weights);
        loss.backward();
        opt.step();
    }
    // restore the original trainability flags
    auto src = model->named_parameters();
    for (auto& item : tuned->named_parameters()) item.value().set_requires_grad(src[item.key()].requires_grad());
    return tuned;
}

}  // namespace imageflow
