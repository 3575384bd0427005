#include "imageflow/io.hpp"

#include "imageflow/archive.hpp"
#include "imageflow/config.hpp"
#include "imageflow/error.hpp"

#include <json.hpp>
#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace imageflow {

using nlohmann::json;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const fs::path& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    (void)png;
    throw IoError(std::string("libpng: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

void write_png_raw(const fs::path& path, int width, int height, int channels, int depth,
                   const std::vector<std::uint8_t>& rows) {
    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!png) throw IoError("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
                     channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t stride = static_cast<std::size_t>(width) * channels * (depth / 8);
        for (int y = 0; y < height; ++y)
            png_write_row(png, const_cast<png_bytep>(rows.data() + static_cast<std::size_t>(y) * stride));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const fs::path& path, const Image& image, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw IoError("write_png: bit depth must be 8 or 16");
    auto x = image.detach().to(torch::kFloat64);
    if (x.dim() == 2) x = x.unsqueeze(0);
    if (x.dim() != 3 || (x.size(0) != 1 && x.size(0) != 3))
        throw ShapeError("write_png: expected (H,W), (1,H,W) or (3,H,W)");
    const int c = static_cast<int>(x.size(0)), h = static_cast<int>(x.size(1)), w = static_cast<int>(x.size(2));
    const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
    auto q = (x.clamp(0.0, 1.0) * maxv).round().permute({1, 2, 0}).contiguous().to(torch::kInt32);
    const auto* v = q.data_ptr<std::int32_t>();
    const std::size_t n = static_cast<std::size_t>(c) * h * w;
    std::vector<std::uint8_t> rows(n * (bit_depth / 8));
    for (std::size_t k = 0; k < n; ++k) {
        if (bit_depth == 8) {
            rows[k] = static_cast<std::uint8_t>(v[k]);
        } else {  // PNG stores 16-bit samples big-endian
            rows[2 * k] = static_cast<std::uint8_t>(v[k] >> 8);
            rows[2 * k + 1] = static_cast<std::uint8_t>(v[k] & 0xff);
        }
    }
    write_png_raw(path, w, h, c, bit_depth, rows);
}

Image read_png(const fs::path& path) {
    auto f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!png) throw IoError("libpng: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    torch::Tensor out;
    try {
        png_init_io(png, f.get());
        png_read_info(png, info);
        const auto color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (depth == 16) png_set_swap(png);  // native little-endian 16-bit samples
        png_read_update_info(png, info);
        const int w = static_cast<int>(png_get_image_width(png, info));
        const int h = static_cast<int>(png_get_image_height(png, info));
        const int c = png_get_channels(png, info);
        const int d = png_get_bit_depth(png, info);
        const std::size_t stride = png_get_rowbytes(png, info);
        std::vector<std::uint8_t> buf(stride * static_cast<std::size_t>(h));
        std::vector<png_bytep> rows(static_cast<std::size_t>(h));
        for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * stride;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
        torch::Tensor t;
        if (d == 16) {
            t = torch::from_blob(buf.data(), {h, w, c}, torch::kInt16).to(torch::kInt32).bitwise_and(0xffff)
                    .to(torch::kFloat32) / 65535.0f;
        } else {
            t = torch::from_blob(buf.data(), {h, w, c}, torch::kUInt8).to(torch::kFloat32) / 255.0f;
        }
        out = t.permute({2, 0, 1}).contiguous();
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_mask_png(const fs::path& path, const Mask& mask) {
    check_mask(mask, "write_mask_png");
    write_png(path, mask.to(torch::kFloat32), 8);
}

Mask read_mask_png(const fs::path& path) {
    auto x = read_png(path);
    return x[0] > 0.5;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::string visit_name(const char* prefix, std::size_t k) {
    std::ostringstream os;
    os << prefix << std::setw(3) << std::setfill('0') << k << ".png";
    return os.str();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void save_series(const LongitudinalSeries& s, const fs::path& sdir) {
    s.validate();
    fs::create_directories(sdir);
    std::ostringstream times;
    times << "visit,time\n";
    for (std::size_t k = 0; k < s.size(); ++k) {
        times << k << ',' << fmt(s.times[k]) << '\n';
        write_png(sdir / visit_name("img_", k), s.images[k]);
        if (s.masks) write_mask_png(sdir / visit_name("mask_", k), (*s.masks)[k]);
    }
    write_text(sdir / "times.csv", times.str());
}

LongitudinalSeries load_series(const fs::path& sdir, const std::string& series_id) {
    LongitudinalSeries s;
    s.series_id = series_id.empty() ? sdir.filename().string() : series_id;
    std::istringstream times(read_text(sdir / "times.csv"));
    std::string line;
    std::getline(times, line);  // header
    while (std::getline(times, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError("malformed times.csv in " + sdir.string());
        s.times.push_back(std::stod(line.substr(comma + 1)));
    }
    const bool has_masks = !s.times.empty() && fs::exists(sdir / visit_name("mask_", 0));
    if (has_masks) s.masks.emplace();
    for (std::size_t k = 0; k < s.times.size(); ++k) {
        s.images.push_back(read_png(sdir / visit_name("img_", k)));
        if (has_masks) s.masks->push_back(read_mask_png(sdir / visit_name("mask_", k)));
    }
    s.validate();
    return s;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
    dataset.validate();
    fs::create_directories(dir);
    json manifest;
    manifest["time_scale"] = dataset.time_scale;
    manifest["series"] = json::array();
    for (const auto& s : dataset.series) {
        save_series(s, dir / s.series_id);
        json entry{{"series_id", s.series_id}, {"visits", s.size()}, {"has_masks", s.masks.has_value()}};
        auto it = dataset.split_assignment.find(s.series_id);
        if (it != dataset.split_assignment.end()) entry["split"] = to_string(it->second);
        manifest["series"].push_back(entry);
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) throw IoError("no manifest.json in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError("manifest.json: " + std::string(e.what()));
    }
    Dataset ds;
    ds.time_scale = manifest.value("time_scale", 1.0);
    for (const auto& entry : manifest.at("series")) {
        const auto id = entry.at("series_id").get<std::string>();
        auto s = load_series(dir / id, id);
        if (entry.contains("split")) ds.split_assignment[id] = split_from_string(entry["split"].get<std::string>());
        ds.series.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

void save_transforms(const std::vector<AffineTransform>& transforms, const fs::path& path) {
    json arr = json::array();
    for (std::size_t k = 0; k < transforms.size(); ++k)
        arr.push_back({{"visit", k}, {"matrix", transforms[k].matrix}, {"translation", transforms[k].translation}});
    write_text(path, json{{"transforms", arr}}.dump(2) + "\n");
}

std::vector<AffineTransform> load_transforms(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    std::vector<AffineTransform> out;
    for (const auto& t : j.at("transforms")) {
        AffineTransform a;
        a.matrix = t.at("matrix").get<decltype(a.matrix)>();
        a.translation = t.at("translation").get<decltype(a.translation)>();
        out.push_back(a);
    }
    return out;
}

void save_checkpoint(ForecastNet& model, double time_scale, const fs::path& path) {
    TensorArchive archive;
    json meta;
    meta["model"] = json::parse(model_config_to_json(model->config()));
    meta["time_scale"] = time_scale;
    archive.metadata_json = meta.dump();
    for (const auto& item : model->named_parameters()) archive.tensors.emplace_back(item.key(), item.value());
    for (const auto& item : model->named_buffers()) archive.tensors.emplace_back(item.key(), item.value());
    write_tensor_archive(path, archive);
}

Checkpoint load_checkpoint(const fs::path& path) {
    auto archive = read_tensor_archive(path);
    auto meta = json::parse(archive.metadata_json);
    if (!meta.contains("model")) throw IoError(path.string() + " is not a model checkpoint");
    Checkpoint c;
    c.time_scale = meta.value("time_scale", 1.0);
    auto config = model_config_from_json(meta["model"].dump());
    config.feature_encoder_weights.clear();  // the archive already holds the encoder weights
    c.model = ForecastNet(config);
    std::map<std::string, torch::Tensor> by_name(archive.tensors.begin(), archive.tensors.end());
    torch::NoGradGuard guard;
    auto restore = [&](const std::string& name, torch::Tensor& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError(path.string() + ": missing tensor '" + name + "'");
        if (it->second.sizes() != dst.sizes()) throw IoError(path.string() + ": shape mismatch for '" + name + "'");
        dst.copy_(it->second);
    };
    for (auto& item : c.model->named_parameters()) restore(item.key(), item.value());
    for (auto& item : c.model->named_buffers()) restore(item.key(), item.value());
    c.model->eval();
    return c;
}

}  // namespace imageflow
