#include "prism/prism/experts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "prism/errors.hpp"
#include "prism/numerics/rng.hpp"

namespace prism::core {

const char* expert_name(Expert e) {
  switch (e) {
    case Expert::uni_i: return "uni_i";
    case Expert::uni_t: return "uni_t";
    case Expert::syn: return "syn";
    case Expert::rdn: return "rdn";
  }
  return "?";
}

Expert parse_expert(const std::string& name) {
  for (Expert e : kAllExperts) {
    if (name == expert_name(e)) return e;
  }
  throw ConfigError("unknown expert '" + name + "' (expected uni_i, uni_t, syn or rdn)");
}

MaskStrategy parse_mask_strategy(const std::string& name) {
  if (name == "random") return MaskStrategy::random;
  if (name == "mean") return MaskStrategy::mean;
  if (name == "zero") return MaskStrategy::zero;
  throw ConfigError("unknown mask strategy '" + name + "' (expected random, mean or zero)");
}

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::random: return "random";
    case MaskStrategy::mean: return "mean";
    case MaskStrategy::zero: return "zero";
  }
  return "?";
}

void LambdaWeights::validate() const {
  for (Expert e : kAllExperts) {
    const double v = (*this)[e];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string("lambda ") + expert_name(e) + " = " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

template <class Real>
Tensor<Real> mask_modality(const Tensor<Real>& e, MaskStrategy strategy, std::mt19937_64& rng, const RowMask* valid) {
  const std::size_t rows = e.rows();
  const std::size_t cols = e.cols();
  if (valid != nullptr && valid->size() != rows) throw ConfigError("mask_modality: mask size does not match rows");
  auto is_valid = [&](std::size_t r) { return valid == nullptr || (*valid)[r] != 0; };
  Tensor<Real> out(e.shape(), Real{0});
  std::size_t n_valid = 0;
  for (std::size_t r = 0; r < rows; ++r) n_valid += is_valid(r) ? 1 : 0;
  if (strategy == MaskStrategy::zero || n_valid == 0) return out;

  if (strategy == MaskStrategy::mean) {
    std::vector<double> mean(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!is_valid(r)) continue;
      for (std::size_t c = 0; c < cols; ++c) mean[c] += static_cast<double>(e.at(r, c));
    }
    for (auto& m : mean) m /= static_cast<double>(n_valid);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!is_valid(r)) continue;
      for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = static_cast<Real>(mean[c]);
    }
    return out;
  }

  std::vector<std::size_t> pool;
  pool.reserve(n_valid);
  for (std::size_t r = 0; r < rows; ++r)
    if (is_valid(r)) pool.push_back(r);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!is_valid(r)) continue;
    const std::size_t src = pool[num::uniform_index(rng, pool.size())];
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = e.at(src, c);
  }
  return out;
}

template <class Real>
ExpertBank<Real>::ExpertBank(std::size_t image_dim, std::size_t text_dim, std::size_t hidden, std::size_t out_dim,
                             std::vector<Expert> slot_types, const std::vector<std::uint64_t>& init_seeds,
                             Real output_scale)
    : types_(std::move(slot_types)), out_dim_(out_dim) {
  if (init_seeds.size() != types_.size()) throw ConfigError("one init seed per expert slot required");
  if (image_dim == 0 || text_dim == 0) throw ConfigError("expert inputs need both modalities");
  for (std::size_t s = 0; s < types_.size(); ++s) {
    std::mt19937_64 rng(init_seeds[s]);
    slots_.push_back(std::make_unique<num::Mlp<Real>>(image_dim + text_dim, hidden, out_dim, rng, output_scale));
  }
}

template <class Real>
Var<Real> ExpertBank<Real>::forward(std::size_t slot, const Var<Real>& image, const Var<Real>& text) const {
  ++forward_count_;
  return slots_.at(slot)->forward(num::concat_cols<Real>({image, text}));
}

template <class Real>
void ExpertBank<Real>::collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const {
  std::vector<std::size_t> seen(kNumExpertTypes, 0);
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    const auto t = static_cast<std::size_t>(types_[s]);
    std::string name = prefix + expert_name(types_[s]);
    if (seen[t]++ > 0) name += "#" + std::to_string(seen[t] - 1);
    slots_[s]->collect_parameters(name + ".", out);
  }
}

namespace {

template <class Real>
Var<Real> reduce_rows(const Var<Real>& values, const Tensor<Real>* row_weights) {
  if (row_weights == nullptr) return num::mean(values);
  if (row_weights->size() != values.value().size()) throw ConfigError("row weights do not match the prediction rows");
  Tensor<Real> w(values.shape(), Real{0});
  std::copy(row_weights->values().begin(), row_weights->values().end(), w.values().begin());
  return num::sum(num::mul(values, Var<Real>::constant(std::move(w))));
}

}  // namespace

template <class Real>
Var<Real> uniqueness_loss(const Var<Real>& anchor, const Var<Real>& positive, const Var<Real>& negative, Real margin,
                          const Tensor<Real>* row_weights) {
  if (!(margin > Real{0})) throw ConfigError("triplet margin must be positive");
  // m + (1 - cos(a,p)) - (1 - cos(a,n)) = m - cos(a,p) + cos(a,n)
  const Var<Real> gap = num::sub(num::cosine_rows(anchor, negative), num::cosine_rows(anchor, positive));
  return reduce_rows(num::relu(num::affine(gap, Real{1}, margin)), row_weights);
}

template <class Real>
Var<Real> synergy_loss(const Var<Real>& y, const Var<Real>& y_img, const Var<Real>& y_txt,
                       const Tensor<Real>* row_weights) {
  const Var<Real> both = num::add(num::cosine_rows(y, y_img), num::cosine_rows(y, y_txt));
  return num::affine(reduce_rows(both, row_weights), Real(0.5), Real{0});
}

template <class Real>
Var<Real> redundancy_loss(const Var<Real>& y, const Var<Real>& y_img, const Var<Real>& y_txt,
                          const Tensor<Real>* row_weights) {
  return num::affine(synergy_loss(y, y_img, y_txt, row_weights), Real{-1}, Real{1});
}

template <class Real>
Var<Real> expert_loss(Expert type, const Var<Real>& y, const Var<Real>& y_img, const Var<Real>& y_txt, Real margin,
                      const Tensor<Real>* row_weights) {
  switch (type) {
    case Expert::uni_i: return uniqueness_loss(y, y_img, y_txt, margin, row_weights);
    case Expert::uni_t: return uniqueness_loss(y, y_txt, y_img, margin, row_weights);
    case Expert::syn: return synergy_loss(y, y_img, y_txt, row_weights);
    case Expert::rdn: return redundancy_loss(y, y_img, y_txt, row_weights);
  }
  throw ConfigError("unknown expert type");
}

template <class Real>
Var<Real> interaction_loss(const std::vector<Var<Real>>& losses, const std::vector<Expert>& types,
                           const LambdaWeights& lambdas) {
  if (losses.size() != types.size()) throw ConfigError("interaction_loss: one type per loss term required");
  std::vector<Var<Real>> terms;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    terms.push_back(num::affine(losses[i], static_cast<Real>(lambdas[types[i]]), Real{0}));
  }
  if (terms.empty()) return Var<Real>::constant(Tensor<Real>::scalar(Real{0}));
  return num::add_n(terms);
}

template <class Real>
ReweightNet<Real>::ReweightNet(std::size_t num_experts, std::size_t dim, std::size_t hidden, std::mt19937_64& rng,
                               Real output_scale)
    : num_experts_(num_experts), mlp_((num_experts + 1) * dim, hidden, num_experts, rng, output_scale) {
  if (num_experts < 1) throw ConfigError("reweighting needs at least one expert");
}

template <class Real>
Var<Real> ReweightNet<Real>::logits(const std::vector<Var<Real>>& expert_embeddings,
                                    const Var<Real>& id_embedding) const {
  if (expert_embeddings.size() != num_experts_) throw ConfigError("reweighting net expects one input per expert");
  std::vector<Var<Real>> parts = expert_embeddings;
  parts.push_back(id_embedding);
  return mlp_.forward(num::concat_cols(parts));
}

template <class Real>
void ReweightNet<Real>::collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const {
  mlp_.collect_parameters(prefix, out);
}

template <class Real>
FusionResult<Real> adaptive_fusion(const std::vector<Var<Real>>& expert_embeddings, const Var<Real>& id_embedding,
                                   const ReweightNet<Real>& net) {
  FusionResult<Real> out;
  out.weights = num::softmax_rows(net.logits(expert_embeddings, id_embedding));
  out.fused = num::weighted_sum(out.weights, expert_embeddings);
  return out;
}

template <class Real>
FusionResult<Real> uniform_fusion(const std::vector<Var<Real>>& expert_embeddings) {
  if (expert_embeddings.empty()) throw ConfigError("fusion needs at least one expert");
  const std::size_t n = expert_embeddings.front().rows();
  const std::size_t j = expert_embeddings.size();
  FusionResult<Real> out;
  out.weights = Var<Real>::constant(Tensor<Real>({n, j}, Real{1} / static_cast<Real>(j)));
  out.fused = num::weighted_sum(out.weights, expert_embeddings);
  return out;
}

void write_fusion_trace(std::ostream& out, const FusionTrace& trace) {
  out << kFusionTraceHeader << '\n';
  char buf[64];
  for (const auto& row : trace) {
    out << row.user_id << ',' << row.position << ',' << row.item_id;
    for (double w : row.weights) {
      std::snprintf(buf, sizeof buf, ",%.6f", w);
      out << buf;
    }
    out << '\n';
  }
}

void write_fusion_trace(const std::filesystem::path& path, const FusionTrace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write fusion trace " + path.string());
  write_fusion_trace(out, trace);
  if (!out) throw DataError("failed writing fusion trace " + path.string());
}

FusionTrace read_fusion_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fusion trace " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kFusionTraceHeader) {
    throw ParseError("fusion trace header must be '" + std::string(kFusionTraceHeader) + "'", 1);
  }
  FusionTrace trace;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    FusionTraceRow row;
    char c1 = 0, c2 = 0;
    fields >> row.user_id >> c1 >> row.position >> c2 >> row.item_id;
    for (double& w : row.weights) {
      char sep = 0;
      fields >> sep >> w;
      if (sep != ',') throw ParseError("malformed fusion trace row", line_no);
    }
    if (!fields || c1 != ',' || c2 != ',') throw ParseError("malformed fusion trace row", line_no);
    trace.push_back(row);
  }
  return trace;
}

std::array<double, kNumExpertTypes> mean_weights(const FusionTrace& trace) {
  std::array<double, kNumExpertTypes> m{};
  if (trace.empty()) return m;
  for (const auto& row : trace)
    for (std::size_t j = 0; j < kNumExpertTypes; ++j) m[j] += row.weights[j];
  for (auto& v : m) v /= static_cast<double>(trace.size());
  return m;
}

#define PRISM_INSTANTIATE_EXPERTS(Real)                                                                         \
  template Tensor<Real> mask_modality<Real>(const Tensor<Real>&, MaskStrategy, std::mt19937_64&, const RowMask*); \
  template class ExpertBank<Real>;                                                                              \
  template class ReweightNet<Real>;                                                                             \
  template Var<Real> uniqueness_loss<Real>(const Var<Real>&, const Var<Real>&, const Var<Real>&, Real,         \
                                           const Tensor<Real>*);                                                \
  template Var<Real> synergy_loss<Real>(const Var<Real>&, const Var<Real>&, const Var<Real>&,                  \
                                        const Tensor<Real>*);                                                   \
  template Var<Real> redundancy_loss<Real>(const Var<Real>&, const Var<Real>&, const Var<Real>&,               \
                                           const Tensor<Real>*);                                                \
  template Var<Real> expert_loss<Real>(Expert, const Var<Real>&, const Var<Real>&, const Var<Real>&, Real,     \
                                       const Tensor<Real>*);                                                    \
  template Var<Real> interaction_loss<Real>(const std::vector<Var<Real>>&, const std::vector<Expert>&,         \
                                            const LambdaWeights&);                                              \
  template FusionResult<Real> adaptive_fusion<Real>(const std::vector<Var<Real>>&, const Var<Real>&,            \
                                                    const ReweightNet<Real>&);                                  \
  template FusionResult<Real> uniform_fusion<Real>(const std::vector<Var<Real>>&);

PRISM_INSTANTIATE_EXPERTS(float)
PRISM_INSTANTIATE_EXPERTS(double)

}  // namespace prism::core
