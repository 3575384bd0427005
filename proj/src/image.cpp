#include "imageflow/image.hpp"

#include "imageflow/error.hpp"

#include <sstream>

namespace imageflow {

namespace {
std::string shape_str(const torch::Tensor& t) {
    std::ostringstream os;
    os << t.sizes();
    return os.str();
}
}  // namespace

void check_image(const Image& x, const std::string& what) {
    if (!x.defined()) throw ShapeError(what + ": undefined image");
    if (x.dim() != 3 && x.dim() != 4)
        throw ShapeError(what + ": expected (C,H,W) or (N,C,H,W), got " + shape_str(x));
    if (!x.is_floating_point()) throw ShapeError(what + ": image must be floating point");
}

void check_mask(const Mask& m, const std::string& what) {
    if (!m.defined() || m.dim() != 2)
        throw ShapeError(what + ": expected (H,W) mask, got " + (m.defined() ? shape_str(m) : "undefined"));
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const std::string& what) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes())
        throw ShapeError(what + ": shape mismatch " + (a.defined() ? shape_str(a) : "undefined") +
                         " vs " + (b.defined() ? shape_str(b) : "undefined"));
}

torch::Tensor luminance(const Image& x) {
    check_image(x, "luminance");
    if (x.dim() != 3) throw ShapeError("luminance: expected (C,H,W)");
    return x.mean(0);
}

torch::Tensor flip_horizontal(const torch::Tensor& x) { return x.flip({-1}); }
torch::Tensor flip_vertical(const torch::Tensor& x) { return x.flip({-2}); }

}  // namespace imageflow
