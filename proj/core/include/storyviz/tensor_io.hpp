#pragma once

// Portable named-tensor archives: a directory holding manifest.json (format
// version, free-form metadata and a name -> {offset, shape} index) and
// tensors.bin (raw little-endian float32 arrays, concatenated).

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace storyviz {

inline constexpr const char* kArchiveFormatVersion = "1";

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
};

struct TensorArchive {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  // Throws Error when absent.
  const torch::Tensor& at(const std::string& name) const;
};

void save_tensor_archive(const std::filesystem::path& dir, const nlohmann::json& meta,
                         const std::vector<NamedTensor>& tensors);

// Throws VersionError on a format mismatch and IoError on missing or
// truncated files.
TensorArchive load_tensor_archive(const std::filesystem::path& dir);

// Parameters and buffers, names prefixed with `prefix`.
std::vector<NamedTensor> module_state(const torch::nn::Module& module, const std::string& prefix);

// Copies archive entries into the module. Every parameter and buffer must be
// present with a matching shape; nothing is modified if any check fails.
void assign_module_state(torch::nn::Module& module, const TensorArchive& archive,
                         const std::string& prefix);

}  // namespace storyviz
