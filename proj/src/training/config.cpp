#include "prism/training/config.hpp"

#include <fstream>
#include <set>

#include "prism/errors.hpp"

namespace prism::training {

using nlohmann::json;

namespace {

/// Typed reader over one JSON object that remembers which keys were consumed.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) fail("", "expected an object");
  }

  bool has(const std::string& key) const { return j_ && j_->contains(key); }

  Section sub(const std::string& key) {
    used_.insert(key);
    return Section(has(key) ? &j_->at(key) : nullptr, name(key));
  }

  void read(const std::string& key, std::size_t& out, std::size_t min = 0) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < static_cast<std::int64_t>(min)) {
        fail(key, min == 0 ? "expected a non-negative integer" : "expected an integer >= " + std::to_string(min));
      }
      out = v->get<std::size_t>();
    }
  }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::filesystem::path& out) {
    std::string s;
    read(key, s);
    if (has(key)) out = s;
  }

  template <class T>
  void read_list(const std::string& key, std::vector<T>& out, bool allow_zero) {
    if (const json* v = take(key)) {
      if (!v->is_array() || v->empty()) fail(key, "expected a non-empty array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer() || e.get<std::int64_t>() < (allow_zero ? 0 : 1)) {
          fail(key, allow_zero ? "expected non-negative integers" : "expected positive integers");
        }
        out.push_back(e.get<T>());
      }
    }
  }

  template <class Parse, class T>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    read(key, s);
    if (!has(key)) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  void require(const std::string& key) const {
    if (!has(key)) fail(key, "required field is missing");
  }

  /// Rejects keys that no reader asked for.
  void finish() const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items()) {
      if (!used_.count(k)) fail(k, "unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(name(key) + ": " + msg);
  }

  std::string name(const std::string& key) const {
    if (key.empty()) return path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    return has(key) ? &j_->at(key) : nullptr;
  }

  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

void check(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError(field + ": " + msg);
}

}  // namespace

void TrainConfig::validate() const {
  const auto& bb = model.backbone;
  check(bb.dim > 0, "model.dim", "must be positive");
  check(bb.heads > 0 && bb.dim % bb.heads == 0, "model.heads", "must divide model.dim");
  check(bb.blocks > 0, "model.blocks", "must be positive");
  check(bb.max_len >= 2, "model.max_len", "must be at least 2");
  check(bb.dropout >= 0.0 && bb.dropout < 1.0, "model.dropout", "must lie in [0, 1)");
  for (Expert e : core::kAllExperts) {
    const double v = model.lambdas[e];
    check(v >= 0.0 && v <= 1.0, std::string("prism.lambdas.") + core::expert_name(e), "must lie in [0, 1]");
  }
  check(model.margin > 0.0, "prism.margin", "must be positive");
  check(std::count(model.drop.begin(), model.drop.end(), true) <= 3, "prism.ablation",
        "at most three of the four experts may be dropped");
  check(model.expert_output_scale > 0.0, "model.expert_output_scale", "must be positive");
  check(!model.per_expert_encoder || model.expert_head == core::ExpertHead::encoder, "model.per_expert_encoder",
        "needs model.expert_head = \"encoder\"");
  check(train.adam.learning_rate > 0.0, "train.learning_rate", "must be positive");
  check(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0, "train.beta1", "must lie in [0, 1)");
  check(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0, "train.beta2", "must lie in [0, 1)");
  check(train.adam.epsilon > 0.0, "train.epsilon", "must be positive");
  check(!train.seeds.empty(), "train.seeds", "must list at least one seed");
  check(data.image_embeddings.empty() == data.text_embeddings.empty(), "data",
        "image_embeddings and text_embeddings must be given together");
  check(std::find(eval.ks.begin(), eval.ks.end(), selection_k) != eval.ks.end(), "eval.selection_k",
        "must be one of eval.ks");
}

TrainConfig parse_train_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  TrainConfig cfg;
  Section root(&j, "");

  Section data = root.sub("data");
  if (!root.has("data")) throw ConfigError("data: required section is missing");
  data.require("interactions");
  data.read("interactions", cfg.data.interactions);
  data.read("image_embeddings", cfg.data.image_embeddings);
  data.read("text_embeddings", cfg.data.text_embeddings);
  data.read("min_interactions", cfg.data.min_interactions);
  data.finish();

  auto& m = cfg.model;
  Section model = root.sub("model");
  model.read_enum("encoder", m.backbone.encoder, backbone::parse_encoder_kind);
  model.read_enum("rec_loss", m.rec_loss, backbone::parse_rec_loss);
  model.read("dim", m.backbone.dim, 1);
  model.read("blocks", m.backbone.blocks, 1);
  model.read("heads", m.backbone.heads, 1);
  model.read("max_len", m.backbone.max_len, 2);
  model.read("dropout", m.backbone.dropout);
  model.read("expert_hidden", m.expert_hidden, 1);
  model.read("reweight_hidden", m.reweight_hidden, 1);
  model.read("experts_per_type", m.experts_per_type, 1);
  model.read_enum("expert_head", m.expert_head, core::parse_expert_head);
  model.read("per_expert_encoder", m.per_expert_encoder);
  model.read("shared_expert_init", m.shared_expert_init);
  model.read("expert_output_scale", m.expert_output_scale);
  model.finish();

  Section prism = root.sub("prism");
  prism.read("enabled", m.prism_enabled);
  Section lambdas = prism.sub("lambdas");
  for (Expert e : core::kAllExperts) lambdas.read(core::expert_name(e), m.lambdas[e]);
  lambdas.finish();
  prism.read("margin", m.margin);
  prism.read_enum("mask_strategy", m.mask, core::parse_mask_strategy);
  Section ablation = prism.sub("ablation");
  for (Expert e : core::kAllExperts) {
    ablation.read(std::string("drop_") + core::expert_name(e), m.drop[static_cast<std::size_t>(e)]);
  }
  ablation.read("drop_afl", m.drop_afl);
  ablation.finish();
  prism.finish();

  Section train = root.sub("train");
  train.read("batch_size", cfg.train.batch_size, 1);
  train.read("epochs", cfg.train.epochs, 1);
  train.read("patience", cfg.train.patience);
  train.read("learning_rate", cfg.train.adam.learning_rate);
  train.read("beta1", cfg.train.adam.beta1);
  train.read("beta2", cfg.train.adam.beta2);
  train.read("epsilon", cfg.train.adam.epsilon);
  train.read("staged_updates", cfg.train.staged_updates);
  train.read_list("seeds", cfg.train.seeds, true);
  train.finish();

  Section ev = root.sub("eval");
  ev.read_list("ks", cfg.eval.ks, false);
  ev.read("exclude_seen", cfg.eval.exclude_seen);
  ev.read("batch_size", cfg.eval.batch_size, 1);
  ev.read("selection_k", cfg.selection_k, 1);
  ev.finish();

  root.finish();
  cfg.validate();
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  const auto& m = cfg.model;
  json lambdas = json::object(), ablation = json::object();
  for (Expert e : core::kAllExperts) {
    lambdas[core::expert_name(e)] = m.lambdas[e];
    ablation[std::string("drop_") + core::expert_name(e)] = m.drop[static_cast<std::size_t>(e)];
  }
  ablation["drop_afl"] = m.drop_afl;
  json data = {{"interactions", cfg.data.interactions.generic_string()},
               {"min_interactions", cfg.data.min_interactions}};
  if (!cfg.data.image_embeddings.empty()) {
    data["image_embeddings"] = cfg.data.image_embeddings.generic_string();
    data["text_embeddings"] = cfg.data.text_embeddings.generic_string();
  }
  return json{
      {"data", data},
      {"model",
       {{"encoder", backbone::to_string(m.backbone.encoder)},
        {"rec_loss", backbone::to_string(m.rec_loss)},
        {"dim", m.backbone.dim},
        {"blocks", m.backbone.blocks},
        {"heads", m.backbone.heads},
        {"max_len", m.backbone.max_len},
        {"dropout", m.backbone.dropout},
        {"expert_hidden", m.expert_hidden},
        {"reweight_hidden", m.reweight_hidden},
        {"experts_per_type", m.experts_per_type},
        {"expert_head", core::to_string(m.expert_head)},
        {"per_expert_encoder", m.per_expert_encoder},
        {"shared_expert_init", m.shared_expert_init},
        {"expert_output_scale", m.expert_output_scale}}},
      {"prism",
       {{"enabled", m.prism_enabled},
        {"lambdas", lambdas},
        {"margin", m.margin},
        {"mask_strategy", core::to_string(m.mask)},
        {"ablation", ablation}}},
      {"train",
       {{"batch_size", cfg.train.batch_size},
        {"epochs", cfg.train.epochs},
        {"patience", cfg.train.patience},
        {"learning_rate", cfg.train.adam.learning_rate},
        {"beta1", cfg.train.adam.beta1},
        {"beta2", cfg.train.adam.beta2},
        {"epsilon", cfg.train.adam.epsilon},
        {"staged_updates", cfg.train.staged_updates},
        {"seeds", cfg.train.seeds}}},
      {"eval",
       {{"ks", cfg.eval.ks},
        {"exclude_seen", cfg.eval.exclude_seen},
        {"batch_size", cfg.eval.batch_size},
        {"selection_k", cfg.selection_k}}},
  };
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  TrainConfig cfg = parse_train_config(j);
  const auto base = path.parent_path();
  for (auto* p : {&cfg.data.interactions, &cfg.data.image_embeddings, &cfg.data.text_embeddings}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return cfg;
}

}  // namespace prism::training
