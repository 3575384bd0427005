#include "imageflow/config.hpp"

#include "imageflow/error.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace imageflow {

using nlohmann::json;

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(name_ + "." + key + ": " + e.what());
        }
    }

    template <typename E>
    void get_enum(const std::string& key, E& out, E (*parse)(const std::string&)) {
        std::string s;
        used_.insert(key);
        if (!j_.contains(key)) return;
        get(key, s);
        out = parse(s);
    }

    Section sub(const std::string& key) {
        used_.insert(key);
        static const json empty = json::object();
        auto it = j_.find(key);
        return Section(it == j_.end() ? empty : *it, name_.empty() ? key : name_ + "." + key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key()))
                throw ConfigError("unknown config key '" + (name_.empty() ? "" : name_ + ".") + it.key() + "'");
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> used_;
};

void read_model(Section& backbone, Section& dynamics, Section& objectives, ModelConfig& m) {
    auto& bb = m.backbone;
    backbone.get("in_channels", bb.in_channels);
    backbone.get("base_channels", bb.base_channels);
    backbone.get("channel_multipliers", bb.channel_multipliers);
    backbone.get("blocks_per_resolution", bb.blocks_per_resolution);
    backbone.get("image_size", bb.image_size);
    backbone.get("input_noise_std", m.input_noise_std);
    backbone.get("time_embedding_dim", m.time_embedding_dim);
    backbone.get("time_embedding_scale", m.time_embedding_scale);

    dynamics.get_enum("variant", m.variant, &variant_from_string);
    dynamics.get_enum("parameterization", m.flow.parameterization, &parameterization_from_string);
    dynamics.get_enum("sharing", m.flow.sharing, &sharing_from_string);
    dynamics.get("output_init_scale", m.flow.output_init_scale);
    dynamics.get_enum("solver", m.solver.method, &solver_from_string);
    dynamics.get("steps_per_unit_time", m.solver.steps_per_unit_time);
    dynamics.get("diffusion_init", m.diffusion_init);

    objectives.get("projection_dim", m.projection_dim);
    objectives.get("feature_encoder_seed", m.feature_encoder_seed);
    objectives.get("feature_encoder_weights", m.feature_encoder_weights);
    objectives.get_enum("smoothness", m.smoothness, &smoothness_from_string);
}

json write_model_sections(const ModelConfig& m, json& root) {
    const auto& bb = m.backbone;
    root["backbone"] = {{"in_channels", bb.in_channels},
                        {"base_channels", bb.base_channels},
                        {"channel_multipliers", bb.channel_multipliers},
                        {"blocks_per_resolution", bb.blocks_per_resolution},
                        {"image_size", bb.image_size},
                        {"input_noise_std", m.input_noise_std},
                        {"time_embedding_dim", m.time_embedding_dim},
                        {"time_embedding_scale", m.time_embedding_scale}};
    root["dynamics"] = {{"variant", to_string(m.variant)},
                        {"parameterization", to_string(m.flow.parameterization)},
                        {"sharing", to_string(m.flow.sharing)},
                        {"output_init_scale", m.flow.output_init_scale},
                        {"solver", to_string(m.solver.method)},
                        {"steps_per_unit_time", m.solver.steps_per_unit_time},
                        {"diffusion_init", m.diffusion_init}};
    root["objectives"]["projection_dim"] = m.projection_dim;
    root["objectives"]["feature_encoder_seed"] = m.feature_encoder_seed;
    root["objectives"]["feature_encoder_weights"] = m.feature_encoder_weights;
    root["objectives"]["smoothness"] = to_string(m.smoothness);
    return root;
}

json parse_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

}  // namespace

void RunConfig::validate() const {
    dataset.validate();
    for (double r : split_ratios)
        if (!(r > 0.0)) throw ConfigError("dataset.split_ratios must be positive");
    const double sum = split_ratios[0] + split_ratios[1] + split_ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset.split_ratios must sum to 1");
    if (model.backbone.image_size != dataset.image_size)
        throw ConfigError("backbone.image_size must equal dataset.image_size");
    model.validate();
    training.validate();
    evaluation.metrics.validate();
    evaluation.segmenter.validate();
    if (evaluation.seeds < 1) throw ConfigError("evaluation.seeds must be >= 1");
    for (const auto& m : evaluation.methods)
        if (m != "linear" && m != "cubic" && m != "tunet" && m != "ode" && m != "sde")
            throw ConfigError("evaluation.methods: unknown method '" + m + "'");
}

RunConfig parse_run_config(const std::string& text) {
    const json root = parse_text(text);
    RunConfig c;
    Section top(root, "");
    top.get("seed", c.seed);

    auto ds = top.sub("dataset");
    ds.get("num_series", c.dataset.num_series);
    ds.get("image_size", c.dataset.image_size);
    ds.get("visits_min", c.dataset.visits_min);
    ds.get("visits_max", c.dataset.visits_max);
    ds.get("horizon", c.dataset.horizon);
    ds.get("lesion_base_radius", c.dataset.lesion_base_radius);
    ds.get("growth_rate_range", c.dataset.growth_rate_range);
    ds.get("texture_noise_std", c.dataset.texture_noise_std);
    ds.get("background_structure_seed", c.dataset.background_structure_seed);
    ds.get("split_ratios", c.split_ratios);
    ds.finish();

    auto reg = top.sub("registration");
    reg.get("pyramid_levels", c.registration.pyramid_levels);
    reg.get("iterations", c.registration.iterations);
    reg.get("learning_rate", c.registration.learning_rate);
    reg.get("patience", c.registration.patience);
    reg.get("stall_tolerance", c.registration.stall_tolerance);
    reg.get("smoothing_sigma", c.registration.smoothing_sigma);
    reg.finish();

    c.model.backbone.image_size = c.dataset.image_size;
    auto bb = top.sub("backbone");
    auto dyn = top.sub("dynamics");
    auto obj = top.sub("objectives");
    read_model(bb, dyn, obj, c.model);
    obj.get("lambda_v", c.training.weights.lambda_v);
    obj.get("lambda_c", c.training.weights.lambda_c);
    obj.get("lambda_s", c.training.weights.lambda_s);
    bb.finish();
    dyn.finish();
    obj.finish();

    auto tr = top.sub("training");
    auto& t = c.training;
    tr.get("learning_rate", t.learning_rate);
    tr.get("epochs", t.epochs);
    tr.get("actual_batch", t.actual_batch);
    tr.get("effective_batch", t.effective_batch);
    tr.get("grad_accumulation", t.grad_accumulation);
    tr.get("ema_decay", t.ema_decay);
    tr.get("warmup_fraction", t.warmup_fraction);
    tr.get("weight_decay", t.weight_decay);
    tr.get("regularizers_on", t.regularizers_on);
    tr.get("augment", t.augment);
    tr.get("max_val_pairs", t.max_val_pairs);
    auto aug = tr.sub("augmentation");
    aug.get("flip_prob", t.augment_policy.flip_prob);
    aug.get("max_rotation_deg", t.augment_policy.max_rotation_deg);
    aug.get("max_shift_px", t.augment_policy.max_shift_px);
    aug.get("max_scale_delta", t.augment_policy.max_scale_delta);
    aug.get("max_brightness", t.augment_policy.max_brightness);
    aug.get("max_contrast_delta", t.augment_policy.max_contrast_delta);
    aug.get("noise_std", t.augment_policy.noise_std);
    aug.finish();
    tr.finish();
    t.seed = c.seed;

    auto ev = top.sub("evaluation");
    auto& e = c.evaluation;
    ev.get("dynamic_range", e.metrics.dynamic_range);
    ev.get("ssim_window", e.metrics.ssim_window);
    ev.get("psnr_cap_db", e.metrics.psnr_cap_db);
    ev.get_enum("hd_empty_policy", e.metrics.hd_empty_policy, &hd_policy_from_string);
    ev.get("seeds", e.seeds);
    ev.get("methods", e.methods);
    auto seg = ev.sub("segmenter");
    seg.get("base_channels", e.segmenter.base_channels);
    seg.get("channel_multipliers", e.segmenter.channel_multipliers);
    seg.get("epochs", e.segmenter.epochs);
    seg.get("batch_size", e.segmenter.batch_size);
    seg.get("learning_rate", e.segmenter.learning_rate);
    seg.finish();
    auto tto = ev.sub("tto");
    tto.get("iterations", e.tto.iterations);
    tto.get("learning_rate", e.tto.learning_rate);
    tto.get("full_model", e.tto.full_model);
    tto.finish();
    ev.finish();
    e.segmenter.seed = c.seed;
    e.tto.weights = t.weights;

    top.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
    json root;
    root["seed"] = c.seed;
    const auto& d = c.dataset;
    root["dataset"] = {{"num_series", d.num_series},
                       {"image_size", d.image_size},
                       {"visits_min", d.visits_min},
                       {"visits_max", d.visits_max},
                       {"horizon", d.horizon},
                       {"lesion_base_radius", d.lesion_base_radius},
                       {"growth_rate_range", d.growth_rate_range},
                       {"texture_noise_std", d.texture_noise_std},
                       {"background_structure_seed", d.background_structure_seed},
                       {"split_ratios", c.split_ratios}};
    const auto& r = c.registration;
    root["registration"] = {{"pyramid_levels", r.pyramid_levels},
                            {"iterations", r.iterations},
                            {"learning_rate", r.learning_rate},
                            {"patience", r.patience},
                            {"stall_tolerance", r.stall_tolerance},
                            {"smoothing_sigma", r.smoothing_sigma}};
    write_model_sections(c.model, root);
    root["objectives"]["lambda_v"] = c.training.weights.lambda_v;
    root["objectives"]["lambda_c"] = c.training.weights.lambda_c;
    root["objectives"]["lambda_s"] = c.training.weights.lambda_s;
    const auto& t = c.training;
    const auto& a = t.augment_policy;
    root["training"] = {{"learning_rate", t.learning_rate},
                        {"epochs", t.epochs},
                        {"actual_batch", t.actual_batch},
                        {"effective_batch", t.effective_batch},
                        {"grad_accumulation", t.grad_accumulation},
                        {"ema_decay", t.ema_decay},
                        {"warmup_fraction", t.warmup_fraction},
                        {"weight_decay", t.weight_decay},
                        {"regularizers_on", t.regularizers_on},
                        {"augment", t.augment},
                        {"max_val_pairs", t.max_val_pairs},
                        {"augmentation",
                         {{"flip_prob", a.flip_prob},
                          {"max_rotation_deg", a.max_rotation_deg},
                          {"max_shift_px", a.max_shift_px},
                          {"max_scale_delta", a.max_scale_delta},
                          {"max_brightness", a.max_brightness},
                          {"max_contrast_delta", a.max_contrast_delta},
                          {"noise_std", a.noise_std}}}};
    const auto& e = c.evaluation;
    root["evaluation"] = {{"dynamic_range", e.metrics.dynamic_range},
                          {"ssim_window", e.metrics.ssim_window},
                          {"psnr_cap_db", e.metrics.psnr_cap_db},
                          {"hd_empty_policy", to_string(e.metrics.hd_empty_policy)},
                          {"seeds", e.seeds},
                          {"methods", e.methods},
                          {"segmenter",
                           {{"base_channels", e.segmenter.base_channels},
                            {"channel_multipliers", e.segmenter.channel_multipliers},
                            {"epochs", e.segmenter.epochs},
                            {"batch_size", e.segmenter.batch_size},
                            {"learning_rate", e.segmenter.learning_rate}}},
                          {"tto",
                           {{"iterations", e.tto.iterations},
                            {"learning_rate", e.tto.learning_rate},
                            {"full_model", e.tto.full_model}}}};
    return root.dump(2) + "\n";
}

std::string model_config_to_json(const ModelConfig& m) {
    json root;
    write_model_sections(m, root);
    return root.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text) {
    const json root = parse_text(text);
    ModelConfig m;
    Section top(root, "");
    auto bb = top.sub("backbone");
    auto dyn = top.sub("dynamics");
    auto obj = top.sub("objectives");
    read_model(bb, dyn, obj, m);
    bb.finish();
    dyn.finish();
    obj.finish();
    top.finish();
    m.validate();
    return m;
}

}  // namespace imageflow
