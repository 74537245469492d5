#include "prism/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "prism/errors.hpp"
#include "prism/numerics/checkpoint.hpp"
#include "prism/numerics/rng.hpp"
#include "prism/sysinfo.hpp"

namespace prism::training {

using nlohmann::json;

double total_loss(double rec, double exp) { return rec + exp; }

StepRngs StepRngs::for_seed(std::uint64_t seed) {
  return {num::make_rng(seed, num::SeedStream::dropout), num::make_rng(seed, num::SeedStream::masking)};
}

namespace {

void require_finite(double value, const char* term, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss term " + std::string(term) + " = " + std::to_string(value) + " at epoch " +
                       std::to_string(epoch) + ", step " + std::to_string(step));
  }
}

}  // namespace

LossReport train_epoch(core::PrismModel<float>& model, const std::vector<data::Batch>& batches,
                       num::Adam<float>& optimizer, bool staged_updates, StepRngs& rngs, std::size_t epoch) {
  const auto start = std::chrono::steady_clock::now();
  const bool staged = staged_updates && model.experts() != nullptr;
  num::ParameterList<float> experts;
  if (staged) experts = model.expert_parameters();
  std::vector<num::Tensor<float>> expert_grads;
  LossReport report;
  report.epoch = epoch;
  for (std::size_t step = 0; step < batches.size(); ++step) {
    const auto losses = model.training_losses(batches[step], &rngs.dropout, rngs.masking);
    const double rec = losses.rec.item(), exp = losses.exp.item(), total = losses.total.item();
    require_finite(rec, "L_rec", epoch, step);
    static constexpr const char* kNames[] = {"L_uni-i", "L_uni-t", "L_syn", "L_rdn"};
    for (std::size_t j = 0; j < core::kNumExpertTypes; ++j) require_finite(losses.components[j], kNames[j], epoch, step);
    require_finite(exp, "L_exp", epoch, step);
    require_finite(total, "L", epoch, step);

    optimizer.zero_grad();
    if (staged) {
      num::backward(losses.exp);
      expert_grads.clear();
      for (auto& p : experts) expert_grads.push_back(p.var.grad());
      optimizer.zero_grad();
      num::backward(losses.rec);
      for (std::size_t i = 0; i < experts.size(); ++i) {
        auto& g = experts[i].var.grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += expert_grads[i][k];
      }
    } else {
      num::backward(losses.total);
    }
    optimizer.step();

    report.rec += rec;
    for (std::size_t j = 0; j < core::kNumExpertTypes; ++j) report.components[j] += losses.components[j];
    report.exp += exp;
    report.total += total;
  }
  report.steps = batches.size();
  if (report.steps > 0) {
    const double n = static_cast<double>(report.steps);
    report.rec /= n;
    for (auto& c : report.components) c /= n;
    report.exp /= n;
    report.total /= n;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.peak_memory_bytes = peak_rss_bytes();
  return report;
}

void bind_dataset(TrainConfig& cfg, const data::InteractionDataset& ds) {
  cfg.model.backbone.num_items = ds.num_items();
  cfg.model.image_dim = ds.content.image_dim();
  cfg.model.text_dim = ds.content.text_dim();
}

ExperimentData in_memory_data(data::InteractionDataset dataset) {
  ExperimentData out;
  out.dataset = std::move(dataset);
  out.split = data::leave_one_out_split(out.dataset);
  return out;
}

ExperimentData load_experiment_data(TrainConfig& cfg) {
  if (cfg.model.prism_enabled && cfg.data.image_embeddings.empty()) {
    throw ConfigError("data.image_embeddings: required when prism.enabled is true");
  }
  ExperimentData out;
  out.dataset = data::load_interactions(cfg.data.interactions);
  if (cfg.data.min_interactions > 0) out.dataset = data::five_core_filter(out.dataset, cfg.data.min_interactions);
  if (!cfg.data.image_embeddings.empty()) {
    const auto image = data::read_modality_embeddings(cfg.data.image_embeddings);
    const auto text = data::read_modality_embeddings(cfg.data.text_embeddings);
    data::attach_modalities(out.dataset, image, text);
  }
  out.split = data::leave_one_out_split(out.dataset);
  bind_dataset(cfg, out.dataset);
  return out;
}

std::vector<data::Batch> epoch_batches(const data::SplitView& split, const TrainConfig& cfg, std::uint64_t seed,
                                       std::size_t epoch) {
  return data::make_batches(split, cfg.model.backbone.max_len, cfg.train.batch_size,
                            num::derive_seed(seed, num::SeedStream::batching, epoch));
}

core::FusionTrace build_fusion_trace(const core::PrismModel<float>& model, const data::InteractionDataset& ds,
                                     const data::SplitView& split, std::size_t batch_size) {
  core::FusionTrace trace;
  if (!model.experts()) return trace;
  const std::size_t len = model.config().backbone.max_len;
  const auto users = split.evaluable_users();
  for (std::size_t start = 0; start < users.size(); start += batch_size) {
    const std::size_t end = std::min(users.size(), start + batch_size);
    std::vector<std::vector<data::ItemId>> contexts;
    for (std::size_t i = start; i < end; ++i) contexts.push_back(split.test_context(users[i]));
    const auto batch = data::make_context_batch(contexts, len);
    const auto w = model.type_weights(batch);
    for (std::size_t b = 0; b < contexts.size(); ++b) {
      const std::size_t n = contexts[b].size();
      const std::size_t window = std::min(n, len);
      for (std::size_t t = len - window; t < len; ++t) {
        const std::size_t position = n - window + (t - (len - window));
        core::FusionTraceRow row;
        row.user_id = ds.user_keys[users[start + b]];
        row.position = position;
        row.item_id = ds.item_keys[static_cast<std::size_t>(contexts[b][position])];
        for (std::size_t j = 0; j < core::kNumExpertTypes; ++j) row.weights[j] = w.at(b * len + t, j);
        trace.push_back(row);
      }
    }
  }
  return trace;
}

eval::Scorer model_scorer(const core::PrismModel<float>& model) {
  return [&model](const data::Batch& batch) { return model.score_all(batch); };
}

namespace {

json metrics_json(const eval::MetricsTable& t) {
  json j = json::object();
  for (std::size_t i = 0; i < t.ks.size(); ++i) {
    j["recall@" + std::to_string(t.ks[i])] = t.recall[i];
    j["ndcg@" + std::to_string(t.ks[i])] = t.ndcg[i];
  }
  j["users"] = t.users();
  return j;
}

json weights_json(const std::array<double, core::kNumExpertTypes>& w) {
  json j = json::object();
  for (Expert e : core::kAllExperts) j[core::expert_name(e)] = w[static_cast<std::size_t>(e)];
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

json ExperimentReport::to_json() const {
  json seeds_json = json::array();
  for (const auto& s : seeds) {
    json losses = json::array();
    for (const auto& l : s.losses) {
      losses.push_back({{"epoch", l.epoch},
                        {"rec", l.rec},
                        {"uni_i", l.components[0]},
                        {"uni_t", l.components[1]},
                        {"syn", l.components[2]},
                        {"rdn", l.components[3]},
                        {"exp", l.exp},
                        {"total", l.total},
                        {"steps", l.steps}});
    }
    json entry = {{"seed", s.seed},
                  {"best_epoch", s.best_epoch},
                  {"epochs_run", s.epochs_run},
                  {"valid", metrics_json(s.valid)},
                  {"test", metrics_json(s.test)},
                  {"mean_fusion_weights", weights_json(s.mean_fusion_weights)},
                  {"losses", losses}};
    if (!s.checkpoint.empty()) entry["checkpoint"] = s.checkpoint.generic_string();
    if (!s.fusion_trace.empty()) entry["fusion_trace"] = s.fusion_trace.generic_string();
    seeds_json.push_back(entry);
  }
  json summary = json::array();
  for (const auto& r : test_summary) {
    summary.push_back({{"metric", r.metric}, {"K", r.k}, {"mean", r.mean}, {"std", r.std}, {"n_seeds", r.n_seeds}});
  }
  return {{"config", training::to_json(config)},
          {"dataset", {{"users", num_users}, {"items", num_items}, {"interactions", num_interactions}}},
          {"seeds", seeds_json},
          {"test_summary", summary}};
}

json ExperimentReport::timing_json() const {
  json out = json::array();
  for (const auto& s : seeds) {
    json epochs = json::array();
    for (const auto& l : s.losses) {
      epochs.push_back({{"epoch", l.epoch}, {"seconds", l.seconds}, {"peak_memory_bytes", l.peak_memory_bytes}});
    }
    out.push_back({{"seed", s.seed}, {"epochs", epochs}});
  }
  return out;
}

ExperimentReport run_experiment(const TrainConfig& cfg, const ExperimentData& data, const RunOutputs& outputs) {
  cfg.validate();
  if (cfg.train.seeds.empty()) throw ConfigError("train.seeds: must list at least one seed");
  ExperimentReport report;
  report.config = cfg;
  report.num_users = data.dataset.num_users();
  report.num_items = data.dataset.num_items();
  report.num_interactions = data.dataset.num_interactions();

  const bool write = !outputs.dir.empty();
  if (write) std::filesystem::create_directories(outputs.dir / "checkpoints");

  std::vector<eval::MetricsTable> test_tables;
  for (std::uint64_t seed : cfg.train.seeds) {
    core::PrismModel<float> model(cfg.model, data.dataset.content, seed);
    num::Adam<float> optimizer(model.parameters(), cfg.train.adam);
    StepRngs rngs = StepRngs::for_seed(seed);
    const auto scorer = model_scorer(model);

    SeedResult result;
    result.seed = seed;
    double best = -1.0;
    num::StateDict<float> best_state;
    for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
      const auto batches = epoch_batches(data.split, cfg, seed, epoch);
      result.losses.push_back(train_epoch(model, batches, optimizer, cfg.train.staged_updates, rngs, epoch));
      result.epochs_run = epoch;
      auto valid = eval::evaluate(scorer, data.split, eval::Target::valid, cfg.model.backbone.max_len, cfg.eval);
      const double score = valid.ndcg_at(cfg.selection_k);
      if (score > best) {
        best = score;
        result.best_epoch = epoch;
        result.valid = std::move(valid);
        best_state = num::state(model);
      } else if (cfg.train.patience > 0 && epoch - result.best_epoch >= cfg.train.patience) {
        break;
      }
    }
    num::load_state(model, best_state);
    result.test = eval::evaluate(scorer, data.split, eval::Target::test, cfg.model.backbone.max_len, cfg.eval);

    const auto trace = build_fusion_trace(model, data.dataset, data.split, cfg.eval.batch_size);
    if (!trace.empty()) result.mean_fusion_weights = core::mean_weights(trace);
    if (write) {
      const std::string tag = "seed_" + std::to_string(seed);
      result.checkpoint = std::filesystem::path("checkpoints") / (tag + ".prck");
      num::save_checkpoint(outputs.dir / result.checkpoint, model);
      if (!trace.empty()) {
        result.fusion_trace = "fusion_trace_" + tag + ".csv";
        core::write_fusion_trace(outputs.dir / result.fusion_trace, trace);
      }
    }
    test_tables.push_back(result.test);
    report.seeds.push_back(std::move(result));
  }
  report.test_summary = eval::summarize(test_tables);

  if (write) {
    write_text(outputs.dir / "report.json", report.to_json().dump(2) + "\n");
    write_text(outputs.dir / "timing.json", report.timing_json().dump(2) + "\n");
    write_text(outputs.dir / "config.json", training::to_json(cfg).dump(2) + "\n");
    std::ofstream metrics(outputs.dir / "metrics.csv", std::ios::binary);
    eval::write_metrics_csv(metrics, report.test_summary);
    std::ofstream curves(outputs.dir / "loss_curves.csv", std::ios::binary);
    curves << "seed,epoch,rec,uni_i,uni_t,syn,rdn,exp,total\n";
    char buf[512];
    for (const auto& s : report.seeds) {
      for (const auto& l : s.losses) {
        std::snprintf(buf, sizeof buf, "%llu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      static_cast<unsigned long long>(s.seed), l.epoch, l.rec, l.components[0], l.components[1],
                      l.components[2], l.components[3], l.exp, l.total);
        curves << buf;
      }
    }
  }
  return report;
}

std::vector<TrainConfig> lambda_grid(const TrainConfig& base) {
  std::vector<TrainConfig> out{base};
  for (Expert e : core::kAllExperts) {
    for (double v : kLambdaGrid) {
      if (v == base.model.lambdas[e]) continue;
      TrainConfig c = base;
      c.model.lambdas[e] = v;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace prism::training
