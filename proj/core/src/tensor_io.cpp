#include "storyviz/tensor_io.hpp"

#include <bit>
#include <fstream>
#include <unordered_map>

#include "storyviz/error.hpp"

namespace storyviz {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "tensor archives are written as little-endian float32");

const torch::Tensor& TensorArchive::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw Error("tensor archive has no entry named " + name);
}

void save_tensor_archive(const fs::path& dir, const json& meta, const std::vector<NamedTensor>& tensors) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json index = json::array();
  const fs::path data_path = dir / "tensors.bin";
  std::ofstream data(data_path, std::ios::binary | std::ios::trunc);
  if (!data) throw IoError("cannot open for writing: " + data_path.string());
  std::int64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    const auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const auto bytes = static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(float)));
    data.write(reinterpret_cast<const char*>(t.data_ptr<float>()), bytes);
    index.push_back({{"name", name}, {"offset", offset}, {"shape", t.sizes().vec()}});
    offset += bytes;
  }
  data.close();
  if (!data) throw IoError("write failed: " + data_path.string());

  const json manifest = {{"format_version", kArchiveFormatVersion},
                         {"dtype", "float32-le"},
                         {"data_file", "tensors.bin"},
                         {"data_bytes", offset},
                         {"index", index},
                         {"meta", meta}};
  const fs::path manifest_path = dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  out.close();
  if (!out) throw IoError("write failed: " + manifest_path.string());
}

TensorArchive load_tensor_archive(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open for reading: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("corrupt archive manifest " + manifest_path.string() + ": " + e.what());
  }

  TensorArchive archive;
  try {
    const auto version = manifest.at("format_version").get<std::string>();
    if (version != kArchiveFormatVersion) {
      throw VersionError("archive " + dir.string() + " has format version " + version +
                         ", expected " + kArchiveFormatVersion);
    }
    const fs::path data_path = dir / manifest.at("data_file").get<std::string>();
    const auto data_bytes = manifest.at("data_bytes").get<std::int64_t>();
    std::error_code ec;
    const auto actual = fs::file_size(data_path, ec);
    if (ec) throw IoError("cannot stat " + data_path.string() + ": " + ec.message());
    if (static_cast<std::int64_t>(actual) != data_bytes) {
      throw IoError("archive data " + data_path.string() + " is truncated or corrupt: " +
                    std::to_string(actual) + " bytes, expected " + std::to_string(data_bytes));
    }
    std::ifstream data(data_path, std::ios::binary);
    if (!data) throw IoError("cannot open for reading: " + data_path.string());

    archive.meta = manifest.value("meta", json::object());
    for (const auto& entry : manifest.at("index")) {
      const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::int64_t>();
      auto t = torch::empty(shape, torch::kFloat32);
      const auto bytes = t.numel() * static_cast<std::int64_t>(sizeof(float));
      if (offset < 0 || offset + bytes > data_bytes) {
        throw IoError("archive index entry out of range in " + manifest_path.string());
      }
      data.seekg(offset);
      data.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(bytes));
      if (!data) throw IoError("short read in " + data_path.string());
      archive.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const json::exception& e) {
    throw IoError("corrupt archive manifest " + manifest_path.string() + ": " + e.what());
  }
  return archive;
}

std::vector<NamedTensor> module_state(const torch::nn::Module& module, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    out.push_back({prefix + item.key(), item.value()});
  }
  for (const auto& item : module.named_buffers(/*recurse=*/true)) {
    out.push_back({prefix + item.key(), item.value()});
  }
  return out;
}

void assign_module_state(torch::nn::Module& module, const TensorArchive& archive, const std::string& prefix) {
  std::unordered_map<std::string, const torch::Tensor*> lookup;
  for (const auto& t : archive.tensors) lookup.emplace(t.name, &t.tensor);

  std::vector<std::pair<torch::Tensor, const torch::Tensor*>> plan;
  for (auto& [name, target] : module_state(module, prefix)) {
    auto it = lookup.find(name);
    if (it == lookup.end()) throw Error("archive is missing tensor " + name);
    if (it->second->sizes() != target.sizes()) {
      throw ShapeError("archive tensor " + name + " has a different shape than the model");
    }
    plan.emplace_back(target, it->second);
  }
  torch::NoGradGuard guard;
  for (auto& [target, source] : plan) target.copy_(*source);
}

}  // namespace storyviz
