#pragma once

#include "imageflow/datasets.hpp"
#include "imageflow/geometry.hpp"

#include <vector>

namespace imageflow {

struct RegistrationConfig {
    std::vector<int> pyramid_levels{4, 2, 1};      // downsampling factors, coarse to fine
    std::vector<int> iterations{150, 100, 60};     // per level
    double learning_rate = 0.01;                   // Adam step on normalized parameters
    int patience = 25;                             // window for the stall test
    double stall_tolerance = 1e-5;                 // relative loss improvement over the window
    double smoothing_sigma = 1.0;                  // Gaussian blur (pixels) before every level, finest included
};

struct RegistrationResult {
    AffineTransform transform;   // maps fixed-frame positions to moving-frame samples
    Image warped;                // moving resampled onto the fixed frame
    double loss = 0.0;           // mean-squared intensity error at full resolution
    double initial_loss = 0.0;   // same, for the identity transform
    bool converged = true;       // false: best-so-far returned, see `warning`
    std::string warning;
};

/// Intensity-based affine registration by multi-resolution gradient descent on
/// the mean-squared error. Multi-channel inputs are registered on luminance.
RegistrationResult register_to_anchor(const Image& moving, const Image& fixed,
                                      const RegistrationConfig& config = {});

struct SeriesRegistration {
    LongitudinalSeries series;
    std::vector<AffineTransform> transforms;  // transforms[0] is the identity (anchor)
    std::vector<std::string> warnings;
};

/// Warp every visit onto the first one; masks use nearest-neighbour sampling.
SeriesRegistration register_series(const LongitudinalSeries& series, const RegistrationConfig& config = {});

}  // namespace imageflow
