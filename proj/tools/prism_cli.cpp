// prism: train, evaluate, synthesize, gradient-check, benchmark and export fusion weights.
#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prism/errors.hpp"
#include "prism/eval/complexity.hpp"
#include "prism/numerics/checkpoint.hpp"
#include "prism/prism/gradcheck_suite.hpp"
#include "prism/synthetic/pid.hpp"
#include "prism/training/trainer.hpp"

#ifndef PRISM_VERSION
#define PRISM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prism;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

// Thrown for anything the caller got wrong: bad config, unreadable inputs, mismatched shapes.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

training::TrainConfig load_config(const fs::path& path) {
  try {
    return training::load_train_config(fs::absolute(path));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

training::ExperimentData load_data(training::TrainConfig& cfg) {
  try {
    return training::load_experiment_data(cfg);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

// Points the data section at a directory laid out like `prism synth` output.
void use_data_dir(training::TrainConfig& cfg, const fs::path& dir) {
  const fs::path root = fs::absolute(dir);
  cfg.data.interactions = root / "interactions.tsv";
  const bool image = fs::exists(root / "image.prem");
  const bool text = fs::exists(root / "text.prem");
  cfg.data.image_embeddings = image ? root / "image.prem" : fs::path{};
  cfg.data.text_embeddings = text ? root / "text.prem" : fs::path{};
}

// A checkpoint lives in <run>/checkpoints/; the run's config.json sits next to that folder.
fs::path run_config_for(const fs::path& checkpoint, const std::string& explicit_config) {
  if (!explicit_config.empty()) return explicit_config;
  const fs::path guess = fs::absolute(checkpoint).parent_path().parent_path() / "config.json";
  if (!fs::exists(guess)) throw UsageError("no --config given and no config.json found at " + guess.string());
  return guess;
}

struct CheckpointModel {
  training::TrainConfig cfg;
  training::ExperimentData data;
  std::unique_ptr<core::PrismModel<float>> model;
};

CheckpointModel restore(const fs::path& checkpoint, const std::string& config, const std::string& data_dir) {
  CheckpointModel out;
  out.cfg = load_config(run_config_for(checkpoint, config));
  if (!data_dir.empty()) use_data_dir(out.cfg, data_dir);
  out.data = load_data(out.cfg);
  try {
    out.model = std::make_unique<core::PrismModel<float>>(out.cfg.model, out.data.dataset.content, 0);
    num::load_state(*out.model, num::load_checkpoint(checkpoint));
  } catch (const ConfigError& e) {
    throw UsageError(std::string("checkpoint does not fit the model: ") + e.what());
  } catch (const DataError& e) {
    throw UsageError(e.what());
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  return out;
}

int cmd_train(const std::string& config_path, const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  auto cfg = load_config(config_path);
  if (!seeds.empty()) cfg.train.seeds = seeds;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto data = load_data(cfg);
  const auto report = training::run_experiment(cfg, data, {out});

  json inputs = json::array();
  for (const auto* p : {&cfg.data.interactions, &cfg.data.image_embeddings, &cfg.data.text_embeddings}) {
    if (p->empty()) continue;
    inputs.push_back({{"path", p->generic_string()}, {"sha256", sha256_file(*p)}, {"bytes", fs::file_size(*p)}});
  }
  json outputs = {{"report", "report.json"},         {"config", "config.json"},
                  {"metrics", "metrics.csv"},        {"loss_curves", "loss_curves.csv"},
                  {"timing", "timing.json"},         {"checkpoints", json::array()},
                  {"fusion_traces", json::array()}};
  for (const auto& s : report.seeds) {
    outputs["checkpoints"].push_back(s.checkpoint.generic_string());
    if (!s.fusion_trace.empty()) outputs["fusion_traces"].push_back(s.fusion_trace.generic_string());
  }
  const json manifest = {{"tool", "prism"},
                         {"version", PRISM_VERSION},
                         {"config", training::to_json(cfg)},
                         {"seeds", cfg.train.seeds},
                         {"inputs", inputs},
                         {"outputs", outputs}};
  write_file(out / "run_manifest.json", manifest.dump(2) + "\n");

  for (const auto& row : report.test_summary) {
    std::printf("%s@%zu %.6f +- %.6f (%zu seeds)\n", row.metric.c_str(), row.k, row.mean, row.std, row.n_seeds);
  }
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const std::string& config, const std::string& data_dir,
             std::vector<std::size_t> ks, const std::string& out) {
  auto restored = restore(checkpoint, config, data_dir);
  auto options = restored.cfg.eval;
  if (!ks.empty()) options.ks = std::move(ks);
  try {
    options.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto table = eval::evaluate(training::model_scorer(*restored.model), restored.data.split, eval::Target::test,
                                    restored.cfg.model.backbone.max_len, options);
  const auto rows = eval::summarize({table});
  if (out.empty()) {
    eval::write_metrics_csv(std::cout, rows);
  } else {
    std::ofstream f(out, std::ios::binary);
    eval::write_metrics_csv(f, rows);
    if (!f) throw DataError("cannot write " + out);
  }
  return kOk;
}

int cmd_synth(const std::string& scenario, const fs::path& out, std::uint64_t seed, std::size_t users,
              std::size_t items, double epsilon) {
  synthetic::PidScenario s;
  try {
    s.variant = synthetic::parse_variant(scenario);
    s.seed = seed;
    s.num_users = users;
    s.num_items = items;
    s.epsilon = epsilon;
    s.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto d = synthetic::generate_pid_dataset(s);
  synthetic::write_pid_dataset(out, d);
  const auto mi = synthetic::discrete_mi(synthetic::transition_samples(d));
  std::printf("I(T;X_img) = %.4f bits\nI(T;X_txt) = %.4f bits\nI(T;X_img,X_txt) = %.4f bits\n", mi.x1, mi.x2,
              mi.joint);
  std::printf("interaction: %s (%zu transitions)\n",
              synthetic::to_string(synthetic::classify_interaction(mi, 0.05)).c_str(), mi.samples);
  return kOk;
}

int cmd_gradcheck(std::size_t seeds, double eps, double tolerance) {
  bool ok = true;
  for (const auto& row : core::gradient_check_suite(seeds, eps)) {
    const bool pass = row.max_relative_error < tolerance;
    ok = ok && pass;
    std::printf("%s %-20s max_rel_err %.3e (seeds %zu, worst %llu)\n", pass ? "PASS" : "FAIL", row.layer.c_str(),
                row.max_relative_error, row.seeds, static_cast<unsigned long long>(row.worst_seed));
  }
  return ok ? kOk : kRuntime;
}

int cmd_bench(const std::string& config_path, const std::string& data_dir, bool off_vs_off,
              const eval::ComplexityOptions& options, const std::string& out) {
  auto cfg = load_config(config_path);
  if (!data_dir.empty()) use_data_dir(cfg, data_dir);
  const auto data = load_data(cfg);
  try {
    options.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  eval::ComplexityReport report;
  if (off_vs_off) {
    auto off = cfg;
    off.model.prism_enabled = false;
    report.prism_off = eval::time_epochs(off, data, options);
    report.prism_on = eval::time_epochs(off, data, options);
    report.ratio = report.prism_on.median_seconds / report.prism_off.median_seconds;
  } else {
    report = eval::measure_complexity(cfg, data, options);
  }
  const std::string text = report.to_json().dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return kOk;
}

int cmd_weights(const fs::path& checkpoint, const std::string& config, const std::string& data_dir,
                const std::string& out) {
  auto restored = restore(checkpoint, config, data_dir);
  if (!restored.cfg.model.prism_enabled) throw UsageError("checkpoint was trained with prism disabled");
  const auto trace = training::build_fusion_trace(*restored.model, restored.data.dataset, restored.data.split,
                                                  restored.cfg.eval.batch_size);
  if (out.empty()) {
    core::write_fusion_trace(std::cout, trace);
  } else {
    core::write_fusion_trace(out, trace);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interaction-expert sequential recommendation toolkit", "prism"};
  app.set_version_flag("--version", PRISM_VERSION);
  app.require_subcommand(1);

  std::string config, data_dir, out_file, scenario = "synergy_xor";
  fs::path out_dir, checkpoint;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> ks;
  std::uint64_t seed = 0;
  std::size_t users = 5000, items = 200, gc_seeds = 20;
  double epsilon = 0.05, gc_eps = 1e-6, gc_tol = 1e-5;
  bool off_vs_off = false;
  eval::ComplexityOptions bench;

  auto* train = app.add_subcommand("train", "Train one model per seed and write the run directory");
  train->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seeds, "Seeds, overriding train.seeds");
  train->add_option("--out", out_dir, "Output directory")->required();

  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  evalc->add_option("--checkpoint", checkpoint, "Checkpoint (.prck)")->required()->check(CLI::ExistingFile);
  evalc->add_option("--config", config, "Run config; defaults to the run's config.json");
  evalc->add_option("--data", data_dir, "Data directory (interactions.tsv, image.prem, text.prem)");
  evalc->add_option("--k", ks, "Cutoffs, repeatable");
  evalc->add_option("--out", out_file, "CSV path; stdout when omitted");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic interaction scenario");
  synth->add_option("--scenario", scenario, "unique_img, unique_txt, redundant or synergy_xor");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--users", users, "Number of users");
  synth->add_option("--items", items, "Number of items");
  synth->add_option("--epsilon", epsilon, "Class flip probability");

  auto* gradcheck = app.add_subcommand("gradcheck", "Central-difference check of every layer type");
  gradcheck->add_option("--seeds", gc_seeds, "Random instances per layer");
  gradcheck->add_option("--eps", gc_eps, "Finite-difference step");
  gradcheck->add_option("--tolerance", gc_tol, "Maximum relative error");

  auto* benchc = app.add_subcommand("bench", "Per-epoch time and memory with PRISM off and on");
  benchc->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  benchc->add_option("--data", data_dir, "Data directory overriding the config");
  benchc->add_option("--warmup", bench.warmup_epochs, "Untimed epochs");
  benchc->add_option("--epochs", bench.timed_epochs, "Timed epochs");
  benchc->add_option("--seed", bench.seed, "Seed");
  benchc->add_flag("--off-vs-off", off_vs_off, "Time PRISM off against itself");
  benchc->add_option("--out", out_file, "JSON path; stdout when omitted");

  auto* weights = app.add_subcommand("weights", "Export per-position fusion weights as CSV");
  weights->add_option("--checkpoint", checkpoint, "Checkpoint (.prck)")->required()->check(CLI::ExistingFile);
  weights->add_option("--config", config, "Run config; defaults to the run's config.json");
  weights->add_option("--data", data_dir, "Data directory (interactions.tsv, image.prem, text.prem)");
  weights->add_option("--out", out_file, "CSV path; stdout when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train) return cmd_train(config, seeds, out_dir);
    if (*evalc) return cmd_eval(checkpoint, config, data_dir, ks, out_file);
    if (*synth) return cmd_synth(scenario, out_dir, seed, users, items, epsilon);
    if (*gradcheck) return cmd_gradcheck(gc_seeds, gc_eps, gc_tol);
    if (*benchc) return cmd_bench(config, data_dir, off_vs_off, bench, out_file);
    if (*weights) return cmd_weights(checkpoint, config, data_dir, out_file);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
