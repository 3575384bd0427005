#include "imageflow/archive.hpp"
#include "imageflow/baselines.hpp"
#include "imageflow/commands.hpp"
#include "imageflow/error.hpp"
#include "imageflow/latents.hpp"
#include "imageflow/metrics.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace imageflow;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

std::vector<std::int64_t> shape_of(const py::array& a) {
    return {a.shape(), a.shape() + a.ndim()};
}

// Images cross as float32 (C,H,W) or (H,W); a 2-D array gains a channel axis.
Image to_image(const FloatArray& a) {
    auto t = torch::from_blob(const_cast<float*>(a.data()), shape_of(a), torch::kFloat32).clone();
    return t.dim() == 2 ? t.unsqueeze(0) : t;
}

Mask to_mask(const BoolArray& a) {
    return torch::from_blob(const_cast<bool*>(a.data()), shape_of(a), torch::kBool).clone();
}

torch::Tensor to_double(const DoubleArray& a) {
    return torch::from_blob(const_cast<double*>(a.data()), shape_of(a), torch::kFloat64).clone();
}

py::array to_numpy(const torch::Tensor& t) {
    auto c = t.detach().contiguous();
    std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
    if (c.scalar_type() == torch::kFloat64) {
        py::array_t<double> out(shape);
        std::memcpy(out.mutable_data(), c.data_ptr<double>(), c.numel() * sizeof(double));
        return out;
    }
    if (c.scalar_type() == torch::kBool) {
        py::array_t<bool> out(shape);
        std::memcpy(out.mutable_data(), c.data_ptr<bool>(), c.numel());
        return out;
    }
    auto f = c.to(torch::kFloat32);
    py::array_t<float> out(shape);
    std::memcpy(out.mutable_data(), f.data_ptr<float>(), f.numel() * sizeof(float));
    return out;
}

std::vector<Image> to_images(const std::vector<FloatArray>& xs) {
    std::vector<Image> out;
    for (const auto& x : xs) out.push_back(to_image(x));
    return out;
}

MetricConfig metric_config(double dynamic_range, int ssim_window) {
    MetricConfig c;
    c.dynamic_range = dynamic_range;
    c.ssim_window = ssim_window;
    return c;
}

}  // namespace

PYBIND11_MODULE(_imageflow, m) {
    m.doc() = "Latent flow-field forecasting of longitudinal images";

    // translators run newest first, so the base class goes first
    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    // metrics
    m.def("mse", [](const FloatArray& a, const FloatArray& b) { return mse(to_image(a), to_image(b)); });
    m.def("mae", [](const FloatArray& a, const FloatArray& b) { return mae(to_image(a), to_image(b)); });
    m.def(
        "psnr",
        [](const FloatArray& a, const FloatArray& b, double r) {
            return psnr(to_image(a), to_image(b), metric_config(r, 7));
        },
        py::arg("a"), py::arg("b"), py::arg("dynamic_range") = 1.0);
    m.def(
        "ssim",
        [](const FloatArray& a, const FloatArray& b, double r, int window) {
            return ssim(to_image(a), to_image(b), metric_config(r, window));
        },
        py::arg("a"), py::arg("b"), py::arg("dynamic_range") = 1.0, py::arg("window") = 7);
    m.def("dice", [](const BoolArray& x, const BoolArray& y) { return dice(to_mask(x), to_mask(y)); });
    m.def("hausdorff", [](const BoolArray& x, const BoolArray& y) { return hausdorff(to_mask(x), to_mask(y)); });

    // baselines
    m.def(
        "linear_extrapolate",
        [](const std::vector<FloatArray>& images, const std::vector<double>& times, double target) {
            return to_numpy(linear_extrapolate({to_images(images), times, target}));
        },
        py::arg("images"), py::arg("times"), py::arg("target_time"));
    m.def(
        "cubic_spline_extrapolate",
        [](const std::vector<FloatArray>& images, const std::vector<double>& times, double target) {
            return to_numpy(cubic_spline_extrapolate({to_images(images), times, target}));
        },
        py::arg("images"), py::arg("times"), py::arg("target_time"));

    // latents
    m.def(
        "fit_pca",
        [](const DoubleArray& x, int k) {
            auto p = fit_pca(to_double(x), k);
            auto coords = p.transform(to_double(x));
            py::dict out;
            out["mean"] = to_numpy(p.mean);
            out["components"] = to_numpy(p.components);
            out["explained_variance"] = to_numpy(p.explained_variance);
            out["coordinates"] = to_numpy(coords);
            return out;
        },
        py::arg("x"), py::arg("k") = 2);

    // persistence
    m.def(
        "read_tensor_archive",
        [](const fs::path& path) {
            auto a = read_tensor_archive(path);
            py::dict tensors;
            for (const auto& [name, t] : a.tensors) tensors[py::str(name)] = to_numpy(t);
            return py::make_tuple(a.metadata_json, tensors);
        },
        py::arg("path"), "(metadata JSON text, {name: float32 array})");
    m.def("read_png", [](const fs::path& path) { return to_numpy(read_png(path)); });
    m.def(
        "write_png", [](const fs::path& path, const FloatArray& image, int bit_depth) {
            write_png(path, to_image(image), bit_depth);
        },
        py::arg("path"), py::arg("image"), py::arg("bit_depth") = 8);

    // commands; configs are JSON text
    m.def(
        "resolve_config", [](const std::string& json) { return to_json(parse_run_config(json)); },
        py::arg("config_json") = "{}", "Fully resolved config with every default filled in.");
    m.def(
        "synth",
        [](const std::string& json, const fs::path& out) { return cmd_synth(parse_run_config(json), out).series.size(); },
        py::arg("config_json"), py::arg("out_dir"), "Writes a split synthetic dataset; returns the series count.");
    m.def(
        "train",
        [](const std::string& json, const fs::path& data, const fs::path& out) {
            py::gil_scoped_release release;
            auto r = cmd_train(parse_run_config(json), data, out);
            return std::make_pair(r.history.best_epoch, r.history.best_val_psnr);
        },
        py::arg("config_json"), py::arg("data_dir"), py::arg("out_dir"), "Returns (best epoch, best val PSNR).");
    m.def(
        "predict",
        [](const fs::path& checkpoint, const FloatArray& image, double t_i, double t_j, bool allow_backward) {
            auto ck = load_checkpoint(checkpoint);
            return to_numpy(predict(ck.model, to_image(image), t_i / ck.time_scale, t_j / ck.time_scale, allow_backward));
        },
        py::arg("checkpoint"), py::arg("image"), py::arg("t_i"), py::arg("t_j"), py::arg("allow_backward") = false,
        "Forecast at raw times t_i -> t_j.");
    m.def(
        "evaluate",
        [](const std::string& json, const fs::path& data, const std::vector<std::string>& methods,
           const std::map<std::string, std::vector<fs::path>>& checkpoints, const fs::path& out) {
            py::gil_scoped_release release;
            return cmd_evaluate(parse_run_config(json), data, methods, checkpoints, out).to_csv();
        },
        py::arg("config_json"), py::arg("data_dir"), py::arg("methods"),
        py::arg("checkpoints") = std::map<std::string, std::vector<fs::path>>{}, py::arg("out_dir"),
        "Returns report.csv text.");
}
