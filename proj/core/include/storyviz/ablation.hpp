#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyviz/metrics.hpp"
#include "storyviz/training.hpp"

namespace storyviz::ablation {

struct Variant {
  std::string name;
  train::TrainConfig config;
};

// full, no_enriched_sentences, two_way_discriminator, attention_none,
// attention_per_sentence; each differs from `base` in one flag.
std::vector<Variant> default_grid(const train::TrainConfig& base);

// SHA-256 of the canonical JSON of a config; identifies cached runs.
std::string config_digest(const train::TrainConfig& config);

struct Run {
  std::string variant;
  std::uint64_t seed = 0;
  metrics::MetricReport report;  // best checkpoint on the evaluation split
  std::filesystem::path checkpoint;
  bool cached = false;
};

struct Summary {
  std::string variant;
  double fid_mean = 0.0, fid_std = 0.0;
  double fsd_mean = 0.0, fsd_std = 0.0;
  double cosine_mean = 0.0, cosine_std = 0.0;
  double consistency_mean = 0.0, consistency_std = 0.0;
  int runs = 0;
};

struct Table {
  std::vector<Run> runs;
  std::vector<Summary> rows;  // grid order

  const Summary& row(const std::string& variant) const;
  // Per-seed values of one variant, in seed order.
  std::vector<metrics::MetricReport> reports(const std::string& variant) const;
};

Table summarise(std::vector<Run> runs, const std::vector<std::string>& order);
nlohmann::json to_json(const Table& t);
std::string to_markdown(const Table& t);

// Trains and evaluates every (variant, seed) under <out>/<variant>/seed_<s>/.
// A run whose run.json records the same config digest is reused, so an
// interrupted sweep resumes where it stopped. Writes <out>/table.json and
// <out>/table.md.
Table run_grid(const std::vector<Variant>& grid, const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out,
               data::Split eval_split, const train::ProgressFn& progress = nullptr);

// Reads a finished sweep without training; throws IoError for missing runs.
Table load_grid(const std::vector<Variant>& grid, const std::vector<std::uint64_t>& seeds,
                const std::filesystem::path& out);

}  // namespace storyviz::ablation
