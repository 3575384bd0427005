#pragma once

#include "imageflow/datasets.hpp"
#include "imageflow/geometry.hpp"
#include "imageflow/model.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace imageflow {

namespace fs = std::filesystem;

/// (C,H,W) or (H,W) image in [0,1] with C in {1, 3}; bit_depth 8 or 16.
void write_png(const fs::path& path, const Image& image, int bit_depth = 8);
/// Gray or RGB PNG (8/16-bit) as float (C,H,W) in [0,1]; alpha is dropped.
Image read_png(const fs::path& path);
void write_mask_png(const fs::path& path, const Mask& mask);
Mask read_mask_png(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Directory layout: manifest.json plus one folder per series holding
/// times.csv, img_KKK.png and (optionally) mask_KKK.png.
void save_dataset(const Dataset& dataset, const fs::path& dir);
Dataset load_dataset(const fs::path& dir);
/// One series folder (times.csv, img_KKK.png, optional mask_KKK.png).
LongitudinalSeries load_series(const fs::path& dir, const std::string& series_id = {});
void save_series(const LongitudinalSeries& series, const fs::path& dir);

/// One series' registration transforms (one per visit), stored as
/// {"transforms": [{"visit", "matrix", "translation"}, ...]}.
void save_transforms(const std::vector<AffineTransform>& transforms, const fs::path& path);
std::vector<AffineTransform> load_transforms(const fs::path& path);

struct Checkpoint {
    ForecastNet model{nullptr};
    double time_scale = 1.0;
};

/// One tensor archive: metadata {"model": config echo, "time_scale"} and every
/// parameter and buffer by name.
void save_checkpoint(ForecastNet& model, double time_scale, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

}  // namespace imageflow
