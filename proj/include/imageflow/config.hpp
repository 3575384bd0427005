#pragma once

#include "imageflow/datasets.hpp"
#include "imageflow/evaluation.hpp"
#include "imageflow/metrics.hpp"
#include "imageflow/model.hpp"
#include "imageflow/registration.hpp"
#include "imageflow/training.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace imageflow {

struct EvaluationSettings {
    MetricConfig metrics;
    SegmenterConfig segmenter;
    int seeds = 1;
    std::vector<std::string> methods{"linear", "cubic", "tunet", "ode", "sde"};
    TtoConfig tto;
};

/// Everything a run needs. Sections: dataset, registration, backbone,
/// dynamics, objectives, training, evaluation; `seed` at top level.
struct RunConfig {
    std::uint64_t seed = 0;
    SynthConfig dataset;
    std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
    RegistrationConfig registration;
    ModelConfig model;
    TrainConfig training;
    EvaluationSettings evaluation;

    void validate() const;
};

/// Parses a JSON document; missing fields keep their defaults, unknown keys throw ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved config as JSON (round-trips through parse_run_config).
std::string to_json(const RunConfig& config);

/// Model-only subset stored next to checkpoints.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace imageflow
