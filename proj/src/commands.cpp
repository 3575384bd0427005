#include "imageflow/commands.hpp"

#include "imageflow/baselines.hpp"
#include "imageflow/error.hpp"
#include "imageflow/registration.hpp"
#include "imageflow/rng.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace imageflow {

using nlohmann::json;

RunLog::RunLog(const fs::path& run_dir, bool echo) : path_(run_dir / "log.txt"), echo_(echo) {
    fs::create_directories(run_dir);
    std::ofstream(path_, std::ios::trunc);
}

void RunLog::operator()(const std::string& line) {
    std::ofstream out(path_, std::ios::app);
    out << line << '\n';
    if (echo_) std::cerr << line << '\n';
}

Logger RunLog::logger() {
    return [this](const std::string& line) { (*this)(line); };
}

fs::path runs_root() {
    const char* env = std::getenv("IMAGEFLOW_RUNS_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

namespace {

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

void echo_config(const RunConfig& config, const fs::path& dir) { write_text(dir / "config.json", to_json(config)); }

std::string history_csv(const History& h) {
    std::ostringstream os;
    os << "step,epoch,total,reconstruction,visual,contrastive,smoothness,lr,val_psnr\n";
    for (const auto& s : h.steps) {
        os << s.step << ',' << s.epoch << ',' << num(s.total) << ',' << num(s.reconstruction) << ',' << num(s.visual)
           << ',' << num(s.contrastive) << ',' << num(s.smoothness) << ',' << num(s.lr) << ','
           << (s.val_psnr ? num(*s.val_psnr) : "") << '\n';
    }
    return os.str();
}

std::string epochs_csv(const History& h) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_psnr\n";
    for (const auto& e : h.epochs)
        os << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_loss) << ',' << num(e.val_psnr) << '\n';
    return os.str();
}

Variant method_variant(const std::string& method) {
    if (method == "ode") return Variant::ode;
    if (method == "sde") return Variant::sde;
    if (method == "tunet") return Variant::t_unet;
    throw ConfigError("method '" + method + "' is not a learned model");
}

ModelConfig model_for(const RunConfig& config, Variant v) {
    auto m = config.model;
    m.variant = v;
    if (v == Variant::sde) m.solver.method = SolverMethod::euler_maruyama;
    if (v == Variant::ode && m.solver.method == SolverMethod::euler_maruyama) m.solver.method = SolverMethod::rk4;
    return m;
}

Dataset load_split_dataset(const RunConfig& config, const fs::path& data_dir) {
    auto ds = load_dataset(data_dir);
    if (ds.split_assignment.size() != ds.series.size())
        ds = split_series_level(std::move(ds), config.split_ratios, derive_seed(config.seed, {0x5911}));
    return ds;
}

}  // namespace

Dataset cmd_synth(const RunConfig& config, const fs::path& out_dir) {
    config.validate();
    auto ds = generate_synthetic(config.dataset, config.seed);
    ds = split_series_level(std::move(ds), config.split_ratios, derive_seed(config.seed, {0x5911}));
    save_dataset(ds, out_dir);
    echo_config(config, out_dir);
    return ds;
}

Dataset cmd_register(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir) {
    auto ds = load_dataset(data_dir);
    Dataset out;
    out.time_scale = ds.time_scale;
    out.split_assignment = ds.split_assignment;
    std::map<std::string, std::vector<AffineTransform>> transforms;
    std::ostringstream report;
    report << "series_id,visit,warning\n";
    for (const auto& s : ds.series) {
        auto r = register_series(s, config.registration);
        transforms[s.series_id] = r.transforms;
        for (const auto& w : r.warnings) report << s.series_id << ",," << '"' << w << '"' << '\n';
        out.series.push_back(std::move(r.series));
    }
    save_dataset(out, out_dir);
    for (const auto& [id, list] : transforms) save_transforms(list, out_dir / id / "transforms.json");
    write_text(out_dir / "registration_warnings.csv", report.str());
    echo_config(config, out_dir);
    return out;
}

TrainResult cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir, bool echo) {
    config.validate();
    fs::create_directories(out_dir);
    echo_config(config, out_dir);
    RunLog log(out_dir, echo);
    auto ds = load_split_dataset(config, data_dir);
    auto result = train(ds, config.model, config.training, log.logger());
    save_checkpoint(result.state.best, result.state.time_scale, out_dir / "best.ckpt");
    save_checkpoint(result.state.ema, result.state.time_scale, out_dir / "ema.ckpt");
    write_text(out_dir / "history.csv", history_csv(result.history));
    write_text(out_dir / "epochs.csv", epochs_csv(result.history));
    log("best epoch " + std::to_string(result.history.best_epoch) + ", val psnr " +
        num(result.history.best_val_psnr));
    return result;
}

Image cmd_predict(const fs::path& checkpoint, const fs::path& image, double t_i, double t_j, const fs::path& out_png,
                  bool allow_backward) {
    auto ck = load_checkpoint(checkpoint);
    auto x = read_png(image);
    auto y = predict(ck.model, x, t_i / ck.time_scale, t_j / ck.time_scale, allow_backward);
    if (out_png.has_parent_path()) fs::create_directories(out_png.parent_path());
    write_png(out_png, y);
    return y;
}

Forecaster make_forecaster(const std::string& method, ForecastNet model, double time_scale, std::uint64_t seed) {
    if (method == "linear")
        return [](const EvalPair& p) { return linear_extrapolate({p.history, p.history_times, p.t_j}); };
    if (method == "cubic")
        return [](const EvalPair& p) { return cubic_spline_extrapolate({p.history, p.history_times, p.t_j}); };
    if (!model) throw ConfigError("method '" + method + "' needs a trained model");
    (void)method_variant(method);
    return [model, time_scale, seed](const EvalPair& p) mutable {
        const auto s = derive_seed(seed, {hash_string(p.series_id), p.i, p.j});
        return predict(model, p.x_i, p.t_i / time_scale, p.t_j / time_scale, false, s);
    };
}

EvalReport cmd_evaluate(const RunConfig& config, const fs::path& data_dir, const std::vector<std::string>& methods,
                        const std::map<std::string, std::vector<fs::path>>& checkpoints, const fs::path& out_dir,
                        bool echo) {
    config.validate();
    fs::create_directories(out_dir);
    echo_config(config, out_dir);
    RunLog log(out_dir, echo);
    auto ds = load_split_dataset(config, data_dir);
    const auto pairs = evaluation_pairs(ds, Split::test);
    log("evaluating " + std::to_string(pairs.size()) + " test pairs, hash " + pair_list_hash(pairs));
    auto segmenter = train_segmenter(ds, config.evaluation.segmenter, log.logger());

    std::map<std::string, std::vector<Forecaster>> forecasters;
    for (const auto& method : methods) {
        if (method == "linear" || method == "cubic") {
            forecasters[method].push_back(make_forecaster(method));
            continue;
        }
        auto it = checkpoints.find(method);
        if (it != checkpoints.end() && !it->second.empty()) {
            for (std::size_t s = 0; s < it->second.size(); ++s) {
                auto ck = load_checkpoint(it->second[s]);
                forecasters[method].push_back(make_forecaster(method, ck.model, ck.time_scale, s));
            }
            continue;
        }
        for (int s = 0; s < config.evaluation.seeds; ++s) {
            auto tc = config.training;
            tc.seed = derive_seed(config.seed, {static_cast<std::uint64_t>(s)});
            log("training " + method + " (seed index " + std::to_string(s) + ")");
            auto result = train(ds, model_for(config, method_variant(method)), tc, log.logger());
            save_checkpoint(result.state.best, result.state.time_scale,
                            out_dir / "checkpoints" / (method + "_seed" + std::to_string(s) + ".ckpt"));
            forecasters[method].push_back(
                make_forecaster(method, result.state.best, result.state.time_scale, static_cast<std::uint64_t>(s)));
        }
    }
    auto report = evaluate_methods(pairs, methods, forecasters, segmenter, config.evaluation.metrics);
    write_text(out_dir / "report.csv", report.to_csv());
    write_text(out_dir / "report.json", report.to_json() + "\n");
    write_text(out_dir / "ranks.csv", report.ranks_csv());
    return report;
}

TtoOutcome cmd_tto(const fs::path& checkpoint, const fs::path& series_dir, int iterations, double learning_rate,
                   const fs::path& out_dir) {
    auto ck = load_checkpoint(checkpoint);
    auto series = load_series(series_dir);
    if (series.size() < 3) throw ConfigError("tto: the series needs at least 3 visits (2 history + 1 target)");
    LongitudinalSeries history = series;
    history.images.pop_back();
    history.times.pop_back();
    if (history.masks) history.masks->pop_back();
    const auto n = series.size();

    TtoConfig cfg;
    cfg.iterations = iterations;
    cfg.learning_rate = learning_rate;
    TtoOutcome out;
    out.history_loss_before = history_loss(ck.model, history, ck.time_scale, cfg.weights);
    auto before = predict(ck.model, series.images[n - 2], series.times[n - 2] / ck.time_scale,
                          series.times[n - 1] / ck.time_scale);
    auto tuned = test_time_optimize(ck.model, history, ck.time_scale, cfg);
    out.history_loss_after = history_loss(tuned, history, ck.time_scale, cfg.weights);
    auto after = predict(tuned, series.images[n - 2], series.times[n - 2] / ck.time_scale,
                         series.times[n - 1] / ck.time_scale);
    out.psnr_before = psnr(before, series.images[n - 1]);
    out.psnr_after = psnr(after, series.images[n - 1]);

    fs::create_directories(out_dir);
    write_png(out_dir / "pred_before.png", before);
    write_png(out_dir / "pred_after.png", after);
    save_checkpoint(tuned, ck.time_scale, out_dir / "tuned.ckpt");
    json j{{"iterations", iterations},
           {"learning_rate", learning_rate},
           {"history_loss_before", out.history_loss_before},
           {"history_loss_after", out.history_loss_after},
           {"psnr_before", out.psnr_before},
           {"psnr_after", out.psnr_after}};
    write_text(out_dir / "tto.json", j.dump(2) + "\n");
    return out;
}

TrajectorySamples cmd_sample(const fs::path& checkpoint, const fs::path& image, double t_i, double t_j, int n,
                             std::uint64_t seed, const fs::path& out_dir) {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    auto ck = load_checkpoint(checkpoint);
    auto x = read_png(image);
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < n; ++k) seeds.push_back(derive_seed(seed, {static_cast<std::uint64_t>(k)}));
    auto samples = sample_trajectories(ck.model, x, t_i / ck.time_scale, t_j / ck.time_scale, seeds);
    fs::create_directories(out_dir);
    for (int k = 0; k < n; ++k) {
        std::ostringstream name;
        name << "sample_" << std::setw(3) << std::setfill('0') << k << ".png";
        write_png(out_dir / name.str(), samples.samples[static_cast<std::size_t>(k)]);
    }
    const double peak = samples.dispersion.max().item<double>();
    const double factor = peak > 0.0 ? 1.0 / peak : 1.0;
    write_png(out_dir / "dispersion.png", samples.dispersion * factor, 16);
    json j{{"n", n}, {"seed", seed}, {"dispersion_scale_factor", factor}, {"dispersion_max", peak}};
    write_text(out_dir / "sample.json", j.dump(2) + "\n");
    return samples;
}

std::string to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::field_param: return "field_param";
        case AblationAxis::latent_scope: return "latent_scope";
        case AblationAxis::lambda_v: return "lambda_v";
        case AblationAxis::lambda_c: return "lambda_c";
        case AblationAxis::lambda_s: return "lambda_s";
    }
    return "field_param";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
    for (auto a : {AblationAxis::field_param, AblationAxis::latent_scope, AblationAxis::lambda_v, AblationAxis::lambda_c,
                   AblationAxis::lambda_s})
        if (to_string(a) == s) return a;
    throw ConfigError("unknown ablation axis '" + s + "'");
}

std::vector<AblationVariant> ablation_variants(AblationAxis axis, const RunConfig& base) {
    auto model = base.model;
    model.variant = Variant::ode;
    if (model.solver.method == SolverMethod::euler_maruyama) model.solver.method = SolverMethod::rk4;
    auto training = base.training;
    std::vector<AblationVariant> rows;
    auto add = [&](std::string label, ModelConfig m, TrainConfig t, std::array<double, 6> ref) {
        rows.push_back({std::move(label), std::move(m), std::move(t), ref});
    };
    switch (axis) {
        case AblationAxis::field_param: {
            auto a = model, b = model;
            a.flow.parameterization = FieldParameterization::position_and_time;
            b.flow.parameterization = FieldParameterization::position;
            add("f(z,t)", a, training, {22.42, 0.643, 0.123, 0.027, 0.872, 48.38});
            add("f(z)", b, training, {22.63, 0.646, 0.119, 0.024, 0.874, 42.68});
            break;
        }
        case AblationAxis::latent_scope: {
            auto a = model, b = model, c = model;
            a.flow.sharing = FieldSharing::bottleneck_only;
            b.flow.sharing = FieldSharing::per_resolution;
            c.flow.sharing = FieldSharing::per_layer;
            add("bottleneck only", a, training, {22.33, 0.639, 0.122, 0.026, 0.850, 48.13});
            add("all unique resolutions", b, training, {22.49, 0.643, 0.122, 0.025, 0.859, 43.39});
            add("all unique layers", c, training, {22.63, 0.646, 0.119, 0.024, 0.874, 42.68});
            break;
        }
        case AblationAxis::lambda_v:
        case AblationAxis::lambda_c:
        case AblationAxis::lambda_s: {
            static const std::array<double, 5> lambdas{0.0, 0.001, 0.01, 0.1, 1.0};
            static const std::array<std::array<double, 6>, 5> ref_v{{{22.63, 0.646, 0.119, 0.024, 0.874, 42.68},
                                                                      {22.65, 0.658, 0.118, 0.024, 0.872, 44.27},
                                                                      {22.64, 0.650, 0.120, 0.025, 0.872, 45.89},
                                                                      {22.57, 0.647, 0.120, 0.025, 0.869, 50.69},
                                                                      {22.54, 0.634, 0.124, 0.027, 0.867, 48.13}}};
            static const std::array<std::array<double, 6>, 5> ref_c{{{22.63, 0.646, 0.119, 0.024, 0.874, 42.68},
                                                                      {22.63, 0.646, 0.119, 0.025, 0.872, 46.23},
                                                                      {22.65, 0.652, 0.118, 0.024, 0.875, 42.18},
                                                                      {22.38, 0.651, 0.121, 0.025, 0.871, 45.30},
                                                                      {22.25, 0.644, 0.121, 0.025, 0.868, 46.85}}};
            static const std::array<std::array<double, 6>, 5> ref_s{{{22.63, 0.646, 0.119, 0.024, 0.874, 42.68},
                                                                      {22.38, 0.649, 0.123, 0.027, 0.870, 46.91},
                                                                      {22.65, 0.648, 0.119, 0.024, 0.870, 45.71},
                                                                      {22.70, 0.657, 0.118, 0.024, 0.878, 47.44},
                                                                      {22.69, 0.655, 0.118, 0.024, 0.875, 45.16}}};
            const auto& ref = axis == AblationAxis::lambda_v ? ref_v : axis == AblationAxis::lambda_c ? ref_c : ref_s;
            for (std::size_t k = 0; k < lambdas.size(); ++k) {
                auto t = training;
                t.regularizers_on = true;
                t.weights = LossWeights::none();
                if (axis == AblationAxis::lambda_v) t.weights.lambda_v = lambdas[k];
                if (axis == AblationAxis::lambda_c) t.weights.lambda_c = lambdas[k];
                if (axis == AblationAxis::lambda_s) t.weights.lambda_s = lambdas[k];
                std::ostringstream label;
                label << lambdas[k];
                add(label.str(), model, t, ref[k]);
            }
            break;
        }
    }
    return rows;
}

std::vector<AblationRow> run_ablation(AblationAxis axis, const RunConfig& base, const Dataset& dataset,
                                      Segmenter& segmenter, const Logger& log) {
    const auto pairs = evaluation_pairs(dataset, Split::test);
    if (pairs.empty()) throw ConfigError("ablation: the test split has no pairs");
    const auto hash = pair_list_hash(pairs);
    std::vector<AblationRow> rows;
    for (const auto& v : ablation_variants(axis, base)) {
        if (log) log("ablation " + to_string(axis) + ": " + v.label);
        auto result = train(dataset, v.model, v.training, log);
        auto f = make_forecaster("ode", result.state.best, result.state.time_scale, v.training.seed);
        AblationRow row;
        row.label = v.label;
        row.reference = v.reference;
        row.pair_hash = pair_list_hash(pairs);
        row.n_pairs = pairs.size();
        row.desk.fill(0.0);
        std::array<std::size_t, 6> counts{};
        for (const auto& p : pairs) {
            auto m = score_prediction(f(p), p.x_j, segmenter, base.evaluation.metrics);
            for (std::size_t k = 0; k < 6; ++k) {
                const double val = metric_value(m, metric_names()[k]);
                if (std::isnan(val)) continue;
                row.desk[k] += val;
                ++counts[k];
            }
        }
        for (std::size_t k = 0; k < 6; ++k)
            row.desk[k] = counts[k] ? row.desk[k] / static_cast<double>(counts[k]) : std::nan("");
        if (row.pair_hash != hash) throw Error("ablation: pair list changed between rows");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "setting";
    for (const auto& m : metric_names()) os << ',' << m;
    for (const auto& m : metric_names()) os << ",reference_" << m;
    os << ",n_pairs,pair_list_hash\n";
    for (const auto& r : rows) {
        os << '"' << r.label << '"';
        for (double v : r.desk) os << ',' << num(v);
        for (double v : r.reference) os << ',' << num(v);
        os << ',' << r.n_pairs << ',' << r.pair_hash << '\n';
    }
    return os.str();
}

std::vector<AblationRow> cmd_ablate(const RunConfig& config, const fs::path& data_dir, AblationAxis axis,
                                    const fs::path& out_dir, bool echo) {
    config.validate();
    fs::create_directories(out_dir);
    echo_config(config, out_dir);
    RunLog log(out_dir, echo);
    auto ds = load_split_dataset(config, data_dir);
    auto segmenter = train_segmenter(ds, config.evaluation.segmenter, log.logger());
    auto rows = run_ablation(axis, config, ds, segmenter, log.logger());
    for (const auto& r : rows) log("pair list hash [" + r.label + "] " + r.pair_hash);
    write_text(out_dir / ("ablation_" + to_string(axis) + ".csv"), ablation_csv(rows));
    return rows;
}

std::vector<LatentRecord> cmd_latents(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out_dir) {
    auto ck = load_checkpoint(checkpoint);
    auto ds = load_dataset(data_dir);
    auto records = export_latents(ck.model, ds, ck.time_scale);
    fs::create_directories(out_dir);
    write_text(out_dir / "latents.csv", latents_csv(records));
    write_png(out_dir / "latents.png", latent_scatter(records));
    return records;
}

}  // namespace imageflow
