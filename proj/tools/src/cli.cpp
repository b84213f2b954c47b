#include "storyviz/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "storyviz/ablation.hpp"
#include "storyviz/data_synth.hpp"
#include "storyviz/error.hpp"
#include "storyviz/figures.hpp"
#include "storyviz/metrics.hpp"
#include "storyviz/text_encoder.hpp"
#include "storyviz/training.hpp"

namespace storyviz::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

void require_fresh_file(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !overwrite) {
    throw IoError(path.string() + " exists (pass --overwrite to replace it)");
  }
}

void require_fresh_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite) throw IoError("refusing to write into non-empty directory " + dir.string() + " (pass --overwrite)");
    fs::remove_all(dir);
  }
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string split = "test";
  bool overwrite = false;
  std::string dataset;
  std::string grid = "default";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::int64_t story_id = -1;
  std::vector<std::int64_t> story_ids;
  std::string keyword;
};

int gen_data(const Options& o, std::ostream& out) {
  data::DatasetConfig config;
  if (!o.config.empty()) config = data::dataset_config_from_json(read_json(o.config));
  config.validate();
  const auto manifest = data::build_dataset(config, o.seed.value_or(0), o.out, {o.overwrite});
  out << "wrote " << manifest.train.size() << "/" << manifest.val.size() << "/" << manifest.test.size()
      << " stories (train/val/test) to " << o.out << "\n"
      << "digest " << manifest.content_digest << "\n";
  return kExitOk;
}

int pretrain(const Options& o, std::ostream& out) {
  const json cfg = o.config.empty() ? json::object() : read_json(o.config);
  auto encoder = text::pretrain_config_from_json(cfg.value("encoder", json::object()));
  auto extractor = metrics::extractor_train_config_from_json(cfg.value("extractor", json::object()));
  if (cfg.contains("image_size")) {
    encoder.image_size = cfg.at("image_size").get<int>();
    extractor.extractor.image_size = encoder.image_size;
  }
  if (o.seed) encoder.seed = extractor.seed = *o.seed;
  const fs::path dataset = o.dataset.empty() ? fs::path(cfg.value("dataset", std::string())) : fs::path(o.dataset);
  if (dataset.empty() || !fs::exists(dataset / "manifest.json")) {
    throw ConfigError("dataset not found: pass --dataset or set \"dataset\" in the config (run `storyviz gen-data`)");
  }
  require_fresh_dir(o.out, o.overwrite);

  const auto log = [&](const std::string& line) { out << line << std::endl; };
  const auto encoders = text::pretrain_encoders(dataset, encoder, log);
  text::save_encoders(fs::path(o.out) / "encoders", encoders);
  const auto trained = metrics::train_feature_extractor(dataset, extractor, log);
  metrics::save_extractor(fs::path(o.out) / "extractor", trained);

  const json report = {{"dataset", dataset.string()},
                       {"encoder",
                        {{"final_loss", encoders.report.final_loss},
                         {"val_retrieval_accuracy", encoders.report.val_retrieval_accuracy},
                         {"val_matched_over_mismatched", encoders.report.val_matched_over_mismatched},
                         {"steps", encoders.report.steps}}},
                       {"extractor", metrics::to_json(trained.gate)}};
  write_json(fs::path(o.out) / "report.json", report);
  out << report.dump(2) << "\n";
  if (trained.gate.gate_accuracy() < metrics::kGateThreshold) {
    throw NumericError("feature extractor missed the accuracy gate; metrics will refuse it");
  }
  return kExitOk;
}

train::TrainConfig train_config(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  auto config = train::train_config_from_json(read_json(o.config));
  if (o.seed) config.seed = *o.seed;
  return config;
}

int train_cmd(const Options& o, std::ostream& out) {
  const auto config = train_config(o);
  const auto result = train::train(config, o.out, o.overwrite, [&](const std::string& line) { out << line << std::endl; });
  out << "best checkpoint " << result.best.string() << " (FID+FSD " << result.best_score << ")\n";
  return kExitOk;
}

int eval_cmd(const Options& o, std::ostream& out) {
  const auto split = data::parse_split(o.split);
  const fs::path path = o.out.empty() ? fs::path(o.checkpoint) / ("report_" + o.split + ".json") : fs::path(o.out);
  require_fresh_file(path, o.overwrite);
  auto ckpt = train::load_checkpoint(o.checkpoint);
  auto context = train::load_eval_context(ckpt.config);
  const auto pool = load_story_tensors(ckpt.config.dataset, split, ckpt.config.image_size);
  const auto report = train::evaluate(ckpt.generator, pool, context, o.seed.value_or(0));
  json j = metrics::to_json(report);
  j["split"] = o.split;
  j["checkpoint"] = o.checkpoint;
  write_json(path, j);
  out << j.dump(2) << "\n";
  return kExitOk;
}

int ablate(const Options& o, std::ostream& out) {
  if (o.grid != "default") throw ConfigError("unknown grid '" + o.grid + "' (only 'default' exists)");
  const auto base = train_config(o);
  if (o.overwrite && fs::exists(o.out)) fs::remove_all(o.out);
  const auto table = ablation::run_grid(ablation::default_grid(base), o.seeds, o.out, data::parse_split(o.split),
                                        [&](const std::string& line) { out << line << std::endl; });
  out << ablation::to_markdown(table);
  return kExitOk;
}

int heatmap(const Options& o, std::ostream& out) {
  require_fresh_file(o.out, o.overwrite);
  const auto files = figures::emit_heatmap(o.checkpoint, o.story_id, data::parse_split(o.split), o.keyword, o.out,
                                           o.seed.value_or(0));
  out << "wrote " << files.image.string() << " and " << files.sigma.string() << "\n";
  return kExitOk;
}

int story_grid(const Options& o, std::ostream& out) {
  require_fresh_file(o.out, o.overwrite);
  figures::emit_story_grid(o.checkpoint, o.story_ids, data::parse_split(o.split), o.out, o.seed.value_or(0));
  out << "wrote " << o.out << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Word-level story visualisation: data, training, evaluation and figures", "storyviz"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> splits = {"train", "val", "test"};

  auto* gen = app.add_subcommand("gen-data", "Generate, render and caption the synthetic story dataset");
  gen->add_option("--out", o.out, "Dataset directory")->required();
  gen->add_option("--config", o.config, "Dataset config JSON");
  gen->add_option("--seed", o.seed, "Dataset seed");
  gen->add_flag("--overwrite", o.overwrite, "Replace a non-empty output directory");

  auto* pre = app.add_subcommand("pretrain-encoder", "Train the contrastive text/image encoders and the metric extractor");
  pre->add_option("--out", o.out, "Output directory (encoders/, extractor/, report.json)")->required();
  pre->add_option("--config", o.config, "Pretraining config JSON");
  pre->add_option("--dataset", o.dataset, "Dataset directory (overrides the config)");
  pre->add_option("--seed", o.seed, "Seed for both trainings");
  pre->add_flag("--overwrite", o.overwrite, "Replace a non-empty output directory");

  auto* tr = app.add_subcommand("train", "Adversarial training with periodic checkpoints");
  tr->add_option("--config", o.config, "Train config JSON")->required();
  tr->add_option("--out", o.out, "Run directory")->required();
  tr->add_option("--seed", o.seed, "Overrides the config seed");
  tr->add_flag("--overwrite", o.overwrite, "Replace a non-empty run directory");

  auto* ev = app.add_subcommand("eval", "Metric report of a checkpoint on a split");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  ev->add_option("--split", o.split, "Split to evaluate")->check(CLI::IsMember(splits));
  ev->add_option("--out", o.out, "Report path (default <checkpoint>/report_<split>.json)");
  ev->add_option("--seed", o.seed, "Noise seed for generation");
  ev->add_flag("--overwrite", o.overwrite, "Replace an existing report");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation grid over several seeds");
  ab->add_option("--config", o.config, "Base train config JSON")->required();
  ab->add_option("--out", o.out, "Sweep directory; finished runs are reused")->required();
  ab->add_option("--grid", o.grid, "Grid name")->check(CLI::IsMember({"default"}));
  ab->add_option("--seeds", o.seeds, "Seeds")->delimiter(',');
  ab->add_option("--split", o.split, "Evaluation split")->check(CLI::IsMember(splits));
  ab->add_flag("--overwrite", o.overwrite, "Discard cached runs");

  auto* hm = app.add_subcommand("heatmap", "Attention heatmap and sigma table for one story");
  hm->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  hm->add_option("--story-id", o.story_id, "Story id")->required();
  hm->add_option("--out", o.out, "PNG path; the sigma table goes next to it")->required();
  hm->add_option("--split", o.split, "Split holding the story")->check(CLI::IsMember(splits));
  hm->add_option("--keyword", o.keyword, "Word to plot (default: the story's style keyword)");
  hm->add_option("--seed", o.seed, "Noise seed");
  hm->add_flag("--overwrite", o.overwrite, "Replace existing files");

  auto* sg = app.add_subcommand("story-grid", "Real and generated frames of stories as one PNG");
  sg->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  sg->add_option("--story-id", o.story_ids, "Story ids")->required();
  sg->add_option("--out", o.out, "PNG path")->required();
  sg->add_option("--split", o.split, "Split holding the stories")->check(CLI::IsMember(splits));
  sg->add_option("--seed", o.seed, "Noise seed");
  sg->add_flag("--overwrite", o.overwrite, "Replace an existing file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return gen_data(o, out);
    if (*pre) return pretrain(o, out);
    if (*tr) return train_cmd(o, out);
    if (*ev) return eval_cmd(o, out);
    if (*ab) return ablate(o, out);
    if (*hm) return heatmap(o, out);
    if (*sg) return story_grid(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace storyviz::cli
