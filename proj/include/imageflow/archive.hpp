#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace imageflow {

/// Single-file tensor archive:
///   8 bytes   magic "IFNARCH1"
///   8 bytes   header length n (uint64, little-endian)
///   n bytes   UTF-8 JSON {"metadata": ..., "tensors": [{"name", "shape"}, ...]}
///   payload   every tensor in header order as raw little-endian float32, row-major
struct TensorArchive {
    std::string metadata_json = "{}";
    std::vector<std::pair<std::string, torch::Tensor>> tensors;
};

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_tensor_archive(const std::filesystem::path& path);

}  // namespace imageflow
