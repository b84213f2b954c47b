#include "storyviz/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "storyviz/digest.hpp"
#include "storyviz/error.hpp"

namespace storyviz::ablation {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<Variant> default_grid(const train::TrainConfig& base) {
  std::vector<Variant> grid;
  grid.push_back({"full", base});
  auto v = base;
  v.use_enriched_sentences = false;
  grid.push_back({"no_enriched_sentences", v});
  v = base;
  v.discriminator_mode = disc::DiscriminatorMode::kTwoWayBaseline;
  grid.push_back({"two_way_discriminator", v});
  v = base;
  v.attention_mode = gen::AttentionMode::kNone;
  grid.push_back({"attention_none", v});
  v = base;
  v.attention_mode = gen::AttentionMode::kPerSentence;
  grid.push_back({"attention_per_sentence", v});
  return grid;
}

std::string config_digest(const train::TrainConfig& config) { return sha256_hex(train::to_json(config).dump()); }

const Summary& Table::row(const std::string& variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant) return r;
  }
  throw ConfigError("no ablation row named " + variant);
}

std::vector<metrics::MetricReport> Table::reports(const std::string& variant) const {
  std::vector<const Run*> sel;
  for (const auto& r : runs) {
    if (r.variant == variant) sel.push_back(&r);
  }
  std::sort(sel.begin(), sel.end(), [](const Run* a, const Run* b) { return a->seed < b->seed; });
  std::vector<metrics::MetricReport> out;
  for (const auto* r : sel) out.push_back(r->report);
  return out;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0};
}

json run_json(const Run& r, const std::string& digest) {
  return {{"variant", r.variant},
          {"seed", r.seed},
          {"config_digest", digest},
          {"checkpoint", r.checkpoint.string()},
          {"report", metrics::to_json(r.report)}};
}

}  // namespace

Table summarise(std::vector<Run> runs, const std::vector<std::string>& order) {
  Table t;
  t.runs = std::move(runs);
  for (const auto& name : order) {
    std::vector<double> fid, fsd, cos, kc;
    for (const auto& r : t.runs) {
      if (r.variant != name) continue;
      fid.push_back(r.report.fid);
      fsd.push_back(r.report.fsd);
      cos.push_back(r.report.cosine_x100);
      kc.push_back(r.report.keyword_consistency);
    }
    Summary s;
    s.variant = name;
    s.runs = static_cast<int>(fid.size());
    std::tie(s.fid_mean, s.fid_std) = mean_std(fid);
    std::tie(s.fsd_mean, s.fsd_std) = mean_std(fsd);
    std::tie(s.cosine_mean, s.cosine_std) = mean_std(cos);
    std::tie(s.consistency_mean, s.consistency_std) = mean_std(kc);
    t.rows.push_back(s);
  }
  return t;
}

json to_json(const Table& t) {
  json rows = json::array();
  for (const auto& s : t.rows) {
    rows.push_back({{"variant", s.variant},
                    {"runs", s.runs},
                    {"fid", {{"mean", s.fid_mean}, {"std", s.fid_std}}},
                    {"fsd", {{"mean", s.fsd_mean}, {"std", s.fsd_std}}},
                    {"cosine_x100", {{"mean", s.cosine_mean}, {"std", s.cosine_std}}},
                    {"keyword_consistency", {{"mean", s.consistency_mean}, {"std", s.consistency_std}}}});
  }
  json runs = json::array();
  for (const auto& r : t.runs) {
    runs.push_back({{"variant", r.variant}, {"seed", r.seed}, {"checkpoint", r.checkpoint.string()},
                    {"report", metrics::to_json(r.report)}});
  }
  return {{"rows", rows}, {"runs", runs}};
}

std::string to_markdown(const Table& t) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "| config | FID | FSD | Cosine x100 | keyword consistency |\n";
  out << "|---|---|---|---|---|\n";
  for (const auto& s : t.rows) {
    if (s.runs == 0) {
      out << "| " << s.variant << " | n/a | n/a | n/a | n/a |\n";
      continue;
    }
    out << "| " << s.variant << " | " << s.fid_mean << " ± " << s.fid_std << " | " << s.fsd_mean << " ± " << s.fsd_std
        << " | " << s.cosine_mean << " ± " << s.cosine_std << " | " << s.consistency_mean << " ± " << s.consistency_std
        << " |\n";
  }
  return out.str();
}

namespace {

std::vector<std::string> names(const std::vector<Variant>& grid) {
  std::vector<std::string> out;
  for (const auto& v : grid) out.push_back(v.name);
  return out;
}

void write_table(const Table& t, const fs::path& out) {
  std::ofstream j(out / "table.json");
  j << to_json(t).dump(2) << '\n';
  std::ofstream md(out / "table.md");
  md << to_markdown(t);
  if (!j || !md) throw IoError("cannot write the ablation table under " + out.string());
}

std::optional<Run> cached_run(const fs::path& dir, const std::string& digest) {
  const auto path = dir / "run.json";
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (j.value("config_digest", "") != digest) return std::nullopt;
  Run r;
  r.variant = j.at("variant").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.report = metrics::metric_report_from_json(j.at("report"));
  r.cached = true;
  return r;
}

}  // namespace

Table run_grid(const std::vector<Variant>& grid, const std::vector<std::uint64_t>& seeds, const fs::path& out,
               data::Split eval_split, const train::ProgressFn& progress) {
  fs::create_directories(out);
  std::vector<Run> runs;
  // Seed-major, so every finished seed already compares all variants.
  for (auto seed : seeds) {
    for (const auto& variant : grid) {
      auto config = variant.config;
      config.seed = seed;
      const auto digest = config_digest(config);
      const auto dir = out / variant.name / ("seed_" + std::to_string(seed));
      if (auto cached = cached_run(dir, digest)) {
        if (progress) progress(variant.name + " seed " + std::to_string(seed) + ": cached");
        runs.push_back(*cached);
        continue;
      }
      if (progress) progress(variant.name + " seed " + std::to_string(seed) + ": training");
      const auto result = train::train(config, dir / "train", /*overwrite=*/true, progress);
      auto ckpt = train::load_checkpoint(result.best);
      auto context = train::load_eval_context(config);
      const auto pool = load_story_tensors(config.dataset, eval_split, config.image_size);
      Run r;
      r.variant = variant.name;
      r.seed = seed;
      r.checkpoint = result.best;
      r.report = train::evaluate(ckpt.generator, pool, context, data::splitmix64(seed ^ 0x74657374ULL));
      std::ofstream f(dir / "run.json");
      f << run_json(r, digest).dump(2) << '\n';
      if (!f) throw IoError("cannot write " + (dir / "run.json").string());
      runs.push_back(r);
      write_table(summarise(runs, names(grid)), out);
    }
  }
  auto table = summarise(std::move(runs), names(grid));
  write_table(table, out);
  return table;
}

Table load_grid(const std::vector<Variant>& grid, const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  std::vector<Run> runs;
  // Seed-major, so every finished seed already compares all variants.
  for (auto seed : seeds) {
    for (const auto& variant : grid) {
      auto config = variant.config;
      config.seed = seed;
      const auto dir = out / variant.name / ("seed_" + std::to_string(seed));
      auto cached = cached_run(dir, config_digest(config));
      if (!cached) throw IoError("ablation run " + dir.string() + " is missing or was made with another config");
      runs.push_back(*cached);
    }
  }
  return summarise(std::move(runs), names(grid));
}

}  // namespace storyviz::ablation
