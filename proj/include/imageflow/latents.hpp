#pragma once

#include "imageflow/datasets.hpp"
#include "imageflow/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace imageflow {

struct Pca {
    torch::Tensor mean;                 // (D)
    torch::Tensor components;           // (k, D), unit rows
    torch::Tensor explained_variance;   // (k)

    torch::Tensor transform(const torch::Tensor& x) const;  // (N, D) -> (N, k)
};

/// Principal components of the rows of x (N, D) in float64. Each component's
/// largest-magnitude entry is made positive.
Pca fit_pca(const torch::Tensor& x, int k);

struct LatentRecord {
    std::string series_id;
    std::size_t visit = 0;
    double normalized_time = 0.0;
    std::vector<double> vector;  // pooled bottleneck latent
    double pc1 = 0.0;
    double pc2 = 0.0;
};

/// Pooled bottleneck vector of every image (all series, or one split) with 2-D PCA coordinates.
std::vector<LatentRecord> export_latents(ForecastNet& model, const Dataset& dataset, double time_scale,
                                         std::optional<Split> split = std::nullopt);

/// series_id,visit,normalized_time,pc1,pc2,z0..z{D-1}
std::string latents_csv(const std::vector<LatentRecord>& records);

/// RGB scatter of (pc1, pc2): dots colored blue (t=0) to red (t=1), arrows between adjacent visits.
Image latent_scatter(const std::vector<LatentRecord>& records, int size = 512);

}  // namespace imageflow
