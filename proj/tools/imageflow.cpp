#include "imageflow/commands.hpp"
#include "imageflow/error.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace imageflow;

namespace {

RunConfig config_from(const std::string& path) { return path.empty() ? parse_run_config("{}") : load_run_config(path); }

fs::path out_or_default(const std::string& out, const std::string& command) {
    return out.empty() ? runs_root() / command : fs::path(out);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"imageflow: latent flow-field forecasting of longitudinal images"};
    app.require_subcommand(1);
    int threads = 1;
    bool verbose = false;
    app.add_option("--threads", threads, "intra-op threads (1 = serial, reproducible)")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", verbose, "echo the run log to stderr");

    std::string config, data, out, checkpoint, image, series, axis, methods_arg;
    std::vector<std::string> checkpoint_specs;
    double t_i = 0.0, t_j = 0.0, lr = 1e-4;
    int iters = 1, n = 4, seeds = 0;
    std::uint64_t seed = 0;
    bool allow_backward = false;

    auto* synth = app.add_subcommand("synth", "generate and split a synthetic dataset");
    synth->add_option("--config", config, "run config (JSON)");
    synth->add_option("--out", out, "dataset directory");

    auto* reg = app.add_subcommand("register", "affine-register every series onto its first visit");
    reg->add_option("--config", config, "run config (JSON)");
    reg->add_option("--in,--data", data, "dataset directory")->required();
    reg->add_option("--out", out, "registered dataset directory");

    auto* tr = app.add_subcommand("train", "train a forecasting model");
    tr->add_option("--config", config, "run config (JSON)");
    tr->add_option("--data", data, "dataset directory")->required();
    tr->add_option("--out", out, "run directory");

    auto* pred = app.add_subcommand("predict", "forecast one image");
    pred->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    pred->add_option("--image", image, "input PNG")->required();
    pred->add_option("--t-i", t_i, "time of the input image")->required();
    pred->add_option("--t-j", t_j, "target time")->required();
    pred->add_option("--out", out, "output PNG")->required();
    pred->add_flag("--allow-backward", allow_backward, "permit t_j < t_i");

    auto* ev = app.add_subcommand("evaluate", "score methods on the test split");
    ev->add_option("--config", config, "run config (JSON)");
    ev->add_option("--data", data, "dataset directory")->required();
    ev->add_option("--methods", methods_arg, "comma list of linear,cubic,tunet,ode,sde");
    ev->add_option("--checkpoint", checkpoint_specs, "method=file (repeat for several seeds)");
    ev->add_option("--seeds", seeds, "independent training runs per learned method");
    ev->add_option("--out", out, "run directory");

    auto* tto = app.add_subcommand("tto", "test-time optimization on one series");
    tto->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    tto->add_option("--series", series, "series directory")->required();
    tto->add_option("--iters", iters, "optimizer iterations");
    tto->add_option("--lr", lr, "learning rate");
    tto->add_option("--out", out, "run directory");

    auto* sample = app.add_subcommand("sample", "several SDE forecasts and their dispersion");
    sample->add_option("--checkpoint", checkpoint, "sde checkpoint file")->required();
    sample->add_option("--image", image, "input PNG")->required();
    sample->add_option("--t-i", t_i, "time of the input image")->required();
    sample->add_option("--t-j", t_j, "target time")->required();
    sample->add_option("-n", n, "number of trajectories");
    sample->add_option("--seed", seed, "base seed");
    sample->add_option("--out", out, "run directory");

    auto* abl = app.add_subcommand("ablate", "train and score one ablation axis");
    abl->add_option("--config", config, "run config (JSON)");
    abl->add_option("--data", data, "dataset directory")->required();
    abl->add_option("--axis", axis, "field_param | latent_scope | lambda_v | lambda_c | lambda_s")->required();
    abl->add_option("--out", out, "run directory");

    auto* lat = app.add_subcommand("latents", "export pooled bottleneck latents with 2-D PCA");
    lat->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    lat->add_option("--data", data, "dataset directory")->required();
    lat->add_option("--out", out, "output directory");

    CLI11_PARSE(app, argc, argv);
    torch::set_num_threads(threads);

    try {
        if (synth->parsed()) {
            auto ds = cmd_synth(config_from(config), out_or_default(out, "synth"));
            std::cout << "wrote " << ds.series.size() << " series\n";
        } else if (reg->parsed()) {
            cmd_register(config_from(config), data, out_or_default(out, "register"));
        } else if (tr->parsed()) {
            auto r = cmd_train(config_from(config), data, out_or_default(out, "train"), verbose);
            std::cout << "best epoch " << r.history.best_epoch << ", val psnr " << r.history.best_val_psnr << "\n";
        } else if (pred->parsed()) {
            cmd_predict(checkpoint, image, t_i, t_j, out, allow_backward);
        } else if (ev->parsed()) {
            auto cfg = config_from(config);
            if (seeds > 0) cfg.evaluation.seeds = seeds;
            auto methods = methods_arg.empty() ? cfg.evaluation.methods : split_list(methods_arg);
            std::map<std::string, std::vector<fs::path>> cks;
            for (const auto& spec : checkpoint_specs) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos) throw ConfigError("--checkpoint expects method=file, got '" + spec + "'");
                cks[spec.substr(0, eq)].push_back(spec.substr(eq + 1));
            }
            auto dir = out_or_default(out, "evaluate");
            auto report = cmd_evaluate(cfg, data, methods, cks, dir, verbose);
            std::cout << report.to_csv() << "\n" << report.ranks_csv();
        } else if (tto->parsed()) {
            auto r = cmd_tto(checkpoint, series, iters, lr, out_or_default(out, "tto"));
            std::cout << "psnr " << r.psnr_before << " -> " << r.psnr_after << "\n";
        } else if (sample->parsed()) {
            cmd_sample(checkpoint, image, t_i, t_j, n, seed, out_or_default(out, "sample"));
        } else if (abl->parsed()) {
            auto rows = cmd_ablate(config_from(config), data, ablation_axis_from_string(axis),
                                   out_or_default(out, "ablate"), verbose);
            std::cout << ablation_csv(rows);
        } else if (lat->parsed()) {
            auto r = cmd_latents(checkpoint, data, out_or_default(out, "latents"));
            std::cout << "exported " << r.size() << " latents\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
