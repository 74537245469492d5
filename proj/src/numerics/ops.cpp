#include "prism/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "prism/numerics/rng.hpp"

namespace prism::num {

namespace {

template <class Real>
using MatrixMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Real>
using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class Real>
ConstMatrixMap<Real> as_matrix(const Tensor<Real>& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap<Real>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class Real>
MatrixMap<Real> as_matrix(Tensor<Real>& t, std::size_t rows, std::size_t cols) {
  return MatrixMap<Real>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ConfigError(std::string(op) + ": shape mismatch " + detail);
}

template <class Real>
void require_same(const Var<Real>& a, const Var<Real>& b, const char* op) {
  require(a.shape() == b.shape(), op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <class Real>
Node<Real>& parent(Node<Real>& n, std::size_t i) {
  return *n.parents[i];
}

}  // namespace

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "add");
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<Real>(std::move(out), {a, b}, [](Node<Real>& n) {
    accumulate_grad(parent(n, 0), n.grad);
    accumulate_grad(parent(n, 1), n.grad);
  });
}

template <class Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "sub");
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<Real>(std::move(out), {a, b}, [](Node<Real>& n) {
    accumulate_grad(parent(n, 0), n.grad);
    Tensor<Real> neg = n.grad;
    for (auto& v : neg.values()) v = -v;
    accumulate_grad(parent(n, 1), neg);
  });
}

template <class Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "mul");
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<Real>(std::move(out), {a, b}, [](Node<Real>& n) {
    const auto& av = parent(n, 0).value;
    const auto& bv = parent(n, 1).value;
    Tensor<Real> da(av.shape()), db(bv.shape());
    for (std::size_t i = 0; i < da.size(); ++i) {
      da[i] = n.grad[i] * bv[i];
      db[i] = n.grad[i] * av[i];
    }
    accumulate_grad(parent(n, 0), da);
    accumulate_grad(parent(n, 1), db);
  });
}

template <class Real>
Var<Real> add_n(const std::vector<Var<Real>>& terms) {
  require(!terms.empty(), "add_n", "(no terms)");
  Tensor<Real> out = terms[0].value();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    require_same(terms[0], terms[t], "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += terms[t].value()[i];
  }
  return make_result<Real>(std::move(out), terms, [](Node<Real>& n) {
    for (auto& p : n.parents) accumulate_grad(*p, n.grad);
  });
}

template <class Real>
Var<Real> affine(const Var<Real>& x, Real a, Real b) {
  Tensor<Real> out = x.value();
  for (auto& v : out.values()) v = a * v + b;
  return make_result<Real>(std::move(out), {x}, [a](Node<Real>& n) {
    Tensor<Real> d = n.grad;
    for (auto& v : d.values()) v *= a;
    accumulate_grad(parent(n, 0), d);
  });
}

template <class Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
  Tensor<Real> out = x.value().reshaped(std::move(shape));
  return make_result<Real>(std::move(out), {x}, [](Node<Real>& n) {
    accumulate_grad(parent(n, 0), n.grad.reshaped(parent(n, 0).value.shape()));
  });
}

template <class Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  const std::size_t n_rows = a.rows(), inner = a.cols(), n_cols = b.cols();
  require(b.rows() == inner, "matmul", shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor<Real> out({n_rows, n_cols});
  as_matrix(out, n_rows, n_cols).noalias() =
      as_matrix(a.value(), n_rows, inner) * as_matrix(b.value(), inner, n_cols);
  return make_result<Real>(std::move(out), {a, b}, [n_rows, inner, n_cols](Node<Real>& n) {
    auto g = as_matrix(static_cast<const Tensor<Real>&>(n.grad), n_rows, n_cols);
    Node<Real>& pa = parent(n, 0);
    Node<Real>& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor<Real> da(pa.value.shape());
      as_matrix(da, n_rows, inner).noalias() = g * as_matrix(pb.value, inner, n_cols).transpose();
      accumulate_grad(pa, da);
    }
    if (pb.requires_grad) {
      Tensor<Real> db(pb.value.shape());
      as_matrix(db, inner, n_cols).noalias() = as_matrix(pa.value, n_rows, inner).transpose() * g;
      accumulate_grad(pb, db);
    }
  });
}

template <class Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b) {
  const std::size_t n_rows = a.rows(), inner = a.cols(), n_cols = b.rows();
  require(b.cols() == inner, "matmul_nt", shape_string(a.shape()) + " * T" + shape_string(b.shape()));
  Tensor<Real> out({n_rows, n_cols});
  as_matrix(out, n_rows, n_cols).noalias() =
      as_matrix(a.value(), n_rows, inner) * as_matrix(b.value(), n_cols, inner).transpose();
  return make_result<Real>(std::move(out), {a, b}, [n_rows, inner, n_cols](Node<Real>& n) {
    auto g = as_matrix(static_cast<const Tensor<Real>&>(n.grad), n_rows, n_cols);
    Node<Real>& pa = parent(n, 0);
    Node<Real>& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor<Real> da(pa.value.shape());
      as_matrix(da, n_rows, inner).noalias() = g * as_matrix(pb.value, n_cols, inner);
      accumulate_grad(pa, da);
    }
    if (pb.requires_grad) {
      Tensor<Real> db(pb.value.shape());
      as_matrix(db, n_cols, inner).noalias() = g.transpose() * as_matrix(pa.value, n_rows, inner);
      accumulate_grad(pb, db);
    }
  });
}

template <class Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& weight, const Var<Real>& bias) {
  const std::size_t n_rows = x.rows(), in = x.cols();
  require(weight.rows() == in && weight.value().rank() == 2, "linear",
          "x " + shape_string(x.shape()) + " weight " + shape_string(weight.shape()));
  const std::size_t out_dim = weight.cols();
  require(bias.size() == out_dim, "linear", "bias " + shape_string(bias.shape()));
  Tensor<Real> out({n_rows, out_dim});
  auto y = as_matrix(out, n_rows, out_dim);
  y.noalias() = as_matrix(x.value(), n_rows, in) * as_matrix(weight.value(), in, out_dim);
  y.rowwise() += as_matrix(bias.value(), 1, out_dim).row(0);
  return make_result<Real>(std::move(out), {x, weight, bias}, [n_rows, in, out_dim](Node<Real>& n) {
    auto g = as_matrix(static_cast<const Tensor<Real>&>(n.grad), n_rows, out_dim);
    Node<Real>& px = parent(n, 0);
    Node<Real>& pw = parent(n, 1);
    Node<Real>& pb = parent(n, 2);
    if (px.requires_grad) {
      Tensor<Real> dx(px.value.shape());
      as_matrix(dx, n_rows, in).noalias() = g * as_matrix(pw.value, in, out_dim).transpose();
      accumulate_grad(px, dx);
    }
    if (pw.requires_grad) {
      Tensor<Real> dw(pw.value.shape());
      as_matrix(dw, in, out_dim).noalias() = as_matrix(px.value, n_rows, in).transpose() * g;
      accumulate_grad(pw, dw);
    }
    if (pb.requires_grad) {
      Tensor<Real> db(pb.value.shape());
      as_matrix(db, 1, out_dim) = g.colwise().sum();
      accumulate_grad(pb, db);
    }
  });
}

template <class Real>
Var<Real> relu(const Var<Real>& x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.values()) v = v > Real{0} ? v : Real{0};
  return make_result<Real>(std::move(out), {x}, [](Node<Real>& n) {
    Tensor<Real> d = n.grad;
    const auto& xv = parent(n, 0).value;
    // Subgradient 0 at exactly zero.
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!(xv[i] > Real{0})) d[i] = Real{0};
    }
    accumulate_grad(parent(n, 0), d);
  });
}

template <class Real>
Var<Real> softplus(const Var<Real>& x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.values()) {
    v = v > Real{0} ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  return make_result<Real>(std::move(out), {x}, [](Node<Real>& n) {
    Tensor<Real> d = n.grad;
    const auto& xv = parent(n, 0).value;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Real z = xv[i];
      const Real sig = z >= Real{0} ? Real{1} / (Real{1} + std::exp(-z)) : std::exp(z) / (Real{1} + std::exp(z));
      d[i] *= sig;
    }
    accumulate_grad(parent(n, 0), d);
  });
}

template <class Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta, Real eps) {
  const std::size_t n_rows = x.rows(), dim = x.cols();
  require(gamma.size() == dim && beta.size() == dim, "layer_norm", shape_string(x.shape()));
  Tensor<Real> out({n_rows, dim});
  Tensor<Real> normalized({n_rows, dim});
  std::vector<Real> inv_std(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    auto row = x.value().row(r);
    Real mu = 0;
    for (Real v : row) mu += v;
    mu /= static_cast<Real>(dim);
    Real var = 0;
    for (Real v : row) var += (v - mu) * (v - mu);
    var /= static_cast<Real>(dim);
    inv_std[r] = Real{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < dim; ++c) {
      const Real xh = (row[c] - mu) * inv_std[r];
      normalized.at(r, c) = xh;
      out.at(r, c) = xh * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_result<Real>(
      std::move(out), {x, gamma, beta},
      [normalized = std::move(normalized), inv_std = std::move(inv_std), n_rows, dim](Node<Real>& n) {
        Node<Real>& px = parent(n, 0);
        Node<Real>& pg = parent(n, 1);
        Node<Real>& pb = parent(n, 2);
        Tensor<Real> dg(pg.value.shape()), db(pb.value.shape());
        Tensor<Real> dx(px.value.shape());
        std::vector<Real> dxh(dim);
        for (std::size_t r = 0; r < n_rows; ++r) {
          Real mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < dim; ++c) {
            const Real g = n.grad.at(r, c);
            dg[c] += g * normalized.at(r, c);
            db[c] += g;
            dxh[c] = g * pg.value[c];
            mean_d += dxh[c];
            mean_dx += dxh[c] * normalized.at(r, c);
          }
          mean_d /= static_cast<Real>(dim);
          mean_dx /= static_cast<Real>(dim);
          for (std::size_t c = 0; c < dim; ++c) {
            dx.at(r, c) = inv_std[r] * (dxh[c] - mean_d - normalized.at(r, c) * mean_dx);
          }
        }
        accumulate_grad(px, dx);
        accumulate_grad(pg, dg);
        accumulate_grad(pb, db);
      });
}

template <class Real>
Var<Real> softmax_rows(const Var<Real>& x) {
  const std::size_t n_rows = x.rows(), dim = x.cols();
  Tensor<Real> out({n_rows, dim});
  for (std::size_t r = 0; r < n_rows; ++r) {
    auto row = x.value().row(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real total = 0;
    for (std::size_t c = 0; c < dim; ++c) {
      out.at(r, c) = std::exp(row[c] - mx);
      total += out.at(r, c);
    }
    for (std::size_t c = 0; c < dim; ++c) out.at(r, c) /= total;
  }
  Tensor<Real> saved = out;
  return make_result<Real>(std::move(out), {x}, [s = std::move(saved), n_rows, dim](Node<Real>& n) {
    Tensor<Real> dx(s.shape());
    for (std::size_t r = 0; r < n_rows; ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < dim; ++c) dot += n.grad.at(r, c) * s.at(r, c);
      for (std::size_t c = 0; c < dim; ++c) dx.at(r, c) = s.at(r, c) * (n.grad.at(r, c) - dot);
    }
    accumulate_grad(parent(n, 0), dx);
  });
}

template <class Real>
Var<Real> gather_rows(const Var<Real>& table, std::span<const std::int64_t> ids, std::int64_t frozen_row) {
  const std::size_t n_table = table.rows(), dim = table.cols();
  Tensor<Real> out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n_table) {
      throw ConfigError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                        std::to_string(n_table) + " rows");
    }
    std::copy_n(table.value().data() + ids[i] * dim, dim, out.data() + i * dim);
  }
  std::vector<std::int64_t> index(ids.begin(), ids.end());
  return make_result<Real>(std::move(out), {table}, [index = std::move(index), dim, frozen_row](Node<Real>& n) {
    Node<Real>& pt = parent(n, 0);
    if (pt.grad.size() != pt.value.size()) pt.grad = Tensor<Real>(pt.value.shape());
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] == frozen_row) continue;
      Real* dst = pt.grad.data() + index[i] * dim;
      const Real* src = n.grad.data() + i * dim;
      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
    }
  });
}

template <class Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  require(!parts.empty(), "concat_cols", "(no parts)");
  const std::size_t n_rows = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == n_rows, "concat_cols", shape_string(p.shape()));
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor<Real> out({n_rows, total});
  for (std::size_t r = 0; r < n_rows; ++r) {
    std::size_t offset = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
      std::copy_n(parts[j].value().data() + r * widths[j], widths[j], out.data() + r * total + offset);
      offset += widths[j];
    }
  }
  return make_result<Real>(std::move(out), parts, [widths, n_rows, total](Node<Real>& n) {
    std::size_t offset = 0;
    for (std::size_t j = 0; j < widths.size(); ++j) {
      Node<Real>& p = *n.parents[j];
      if (p.requires_grad) {
        Tensor<Real> d(p.value.shape());
        for (std::size_t r = 0; r < n_rows; ++r) {
          std::copy_n(n.grad.data() + r * total + offset, widths[j], d.data() + r * widths[j]);
        }
        accumulate_grad(p, d);
      }
      offset += widths[j];
    }
  });
}

template <class Real>
Var<Real> mask_rows(const Var<Real>& x, const RowMask& mask) {
  require(mask.size() == x.rows(), "mask_rows", shape_string(x.shape()));
  const std::size_t dim = x.cols();
  Tensor<Real> out = x.value();
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) std::fill_n(out.data() + r * dim, dim, Real{0});
  }
  return make_result<Real>(std::move(out), {x}, [mask, dim](Node<Real>& n) {
    Tensor<Real> d = n.grad;
    for (std::size_t r = 0; r < mask.size(); ++r) {
      if (!mask[r]) std::fill_n(d.data() + r * dim, dim, Real{0});
    }
    accumulate_grad(parent(n, 0), d);
  });
}

template <class Real>
Var<Real> causal_attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v, std::size_t batch,
                           std::size_t len, std::size_t heads, const RowMask& valid) {
  const std::size_t dim = q.cols();
  require(q.rows() == batch * len && k.shape() == q.shape() && v.shape() == q.shape(), "causal_attention",
          shape_string(q.shape()));
  require(heads > 0 && dim % heads == 0, "causal_attention", "dim not divisible by heads");
  require(valid.size() == batch * len, "causal_attention", "mask length");
  const std::size_t head_dim = dim / heads;
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(head_dim));

  // probs[((b*heads + h)*len + t)*len + s], zero for s > t or invalid keys.
  std::vector<Real> probs(batch * heads * len * len, Real{0});
  Tensor<Real> out({batch * len, dim});
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * head_dim;
      for (std::size_t t = 0; t < len; ++t) {
        Real* p = probs.data() + ((b * heads + h) * len + t) * len;
        const Real* qr = qv.data() + (b * len + t) * dim + off;
        Real mx = -std::numeric_limits<Real>::infinity();
        bool any = false;
        for (std::size_t s = 0; s <= t; ++s) {
          if (!valid[b * len + s]) continue;
          const Real* kr = kv.data() + (b * len + s) * dim + off;
          Real dot = 0;
          for (std::size_t c = 0; c < head_dim; ++c) dot += qr[c] * kr[c];
          p[s] = dot * scale;
          mx = std::max(mx, p[s]);
          any = true;
        }
        if (!any) continue;
        Real total = 0;
        for (std::size_t s = 0; s <= t; ++s) {
          if (!valid[b * len + s]) continue;
          p[s] = std::exp(p[s] - mx);
          total += p[s];
        }
        Real* o = out.data() + (b * len + t) * dim + off;
        for (std::size_t s = 0; s <= t; ++s) {
          if (!valid[b * len + s]) continue;
          p[s] /= total;
          const Real* vr = vv.data() + (b * len + s) * dim + off;
          for (std::size_t c = 0; c < head_dim; ++c) o[c] += p[s] * vr[c];
        }
      }
    }
  }
  return make_result<Real>(
      std::move(out), {q, k, v},
      [probs = std::move(probs), valid, batch, len, heads, head_dim, dim, scale](Node<Real>& n) {
        Node<Real>& pq = parent(n, 0);
        Node<Real>& pk = parent(n, 1);
        Node<Real>& pv = parent(n, 2);
        Tensor<Real> dq(pq.value.shape()), dk(pk.value.shape()), dv(pv.value.shape());
        std::vector<Real> dp(len);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * head_dim;
            for (std::size_t t = 0; t < len; ++t) {
              const Real* p = probs.data() + ((b * heads + h) * len + t) * len;
              const Real* g = n.grad.data() + (b * len + t) * dim + off;
              Real weighted = 0;
              for (std::size_t s = 0; s <= t; ++s) {
                if (!valid[b * len + s] || p[s] == Real{0}) {
                  dp[s] = 0;
                  continue;
                }
                const Real* vr = pv.value.data() + (b * len + s) * dim + off;
                Real* dvr = dv.data() + (b * len + s) * dim + off;
                Real d = 0;
                for (std::size_t c = 0; c < head_dim; ++c) {
                  d += g[c] * vr[c];
                  dvr[c] += p[s] * g[c];
                }
                dp[s] = d;
                weighted += p[s] * d;
              }
              const Real* qr = pq.value.data() + (b * len + t) * dim + off;
              Real* dqr = dq.data() + (b * len + t) * dim + off;
              for (std::size_t s = 0; s <= t; ++s) {
                if (!valid[b * len + s] || p[s] == Real{0}) continue;
                const Real ds = p[s] * (dp[s] - weighted) * scale;
                const Real* kr = pk.value.data() + (b * len + s) * dim + off;
                Real* dkr = dk.data() + (b * len + s) * dim + off;
                for (std::size_t c = 0; c < head_dim; ++c) {
                  dqr[c] += ds * kr[c];
                  dkr[c] += ds * qr[c];
                }
              }
            }
          }
        }
        accumulate_grad(pq, dq);
        accumulate_grad(pk, dk);
        accumulate_grad(pv, dv);
      });
}

template <class Real>
Var<Real> causal_mean(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid) {
  const std::size_t dim = x.cols();
  require(x.rows() == batch * len && valid.size() == batch * len, "causal_mean", shape_string(x.shape()));
  Tensor<Real> out({batch * len, dim});
  std::vector<Real> counts(batch * len, Real{0});
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Real> running(dim, Real{0});
    std::size_t count = 0;
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t r = b * len + t;
      if (valid[r]) {
        ++count;
        const Real* xr = x.value().data() + r * dim;
        for (std::size_t c = 0; c < dim; ++c) running[c] += xr[c];
      }
      counts[r] = static_cast<Real>(count);
      if (count == 0) continue;
      for (std::size_t c = 0; c < dim; ++c) out.at(r, c) = running[c] / counts[r];
    }
  }
  return make_result<Real>(std::move(out), {x}, [counts = std::move(counts), valid, batch, len, dim](Node<Real>& n) {
    Tensor<Real> dx(parent(n, 0).value.shape());
    for (std::size_t b = 0; b < batch; ++b) {
      // Reverse cumulative sum of g_t / count_t.
      std::vector<Real> suffix(dim, Real{0});
      for (std::size_t t = len; t-- > 0;) {
        const std::size_t r = b * len + t;
        if (counts[r] > Real{0}) {
          for (std::size_t c = 0; c < dim; ++c) suffix[c] += n.grad.at(r, c) / counts[r];
        }
        if (valid[r]) {
          for (std::size_t c = 0; c < dim; ++c) dx.at(r, c) = suffix[c];
        }
      }
    }
    accumulate_grad(parent(n, 0), dx);
  });
}

template <class Real>
Var<Real> masked_mean_rows(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid) {
  const std::size_t dim = x.cols();
  require(x.rows() == batch * len && valid.size() == batch * len, "masked_mean_rows", shape_string(x.shape()));
  Tensor<Real> out({batch, dim});
  std::vector<Real> counts(batch, Real{0});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t r = b * len + t;
      if (!valid[r]) continue;
      counts[b] += Real{1};
      for (std::size_t c = 0; c < dim; ++c) out.at(b, c) += x.value().at(r, c);
    }
    if (counts[b] > Real{0}) {
      for (std::size_t c = 0; c < dim; ++c) out.at(b, c) /= counts[b];
    }
  }
  return make_result<Real>(std::move(out), {x}, [counts = std::move(counts), valid, batch, len, dim](Node<Real>& n) {
    Tensor<Real> dx(parent(n, 0).value.shape());
    for (std::size_t b = 0; b < batch; ++b) {
      if (counts[b] == Real{0}) continue;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t r = b * len + t;
        if (!valid[r]) continue;
        for (std::size_t c = 0; c < dim; ++c) dx.at(r, c) = n.grad.at(b, c) / counts[b];
      }
    }
    accumulate_grad(parent(n, 0), dx);
  });
}

template <class Real>
Var<Real> row_dot(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "row_dot");
  const std::size_t n_rows = a.rows(), dim = a.cols();
  Tensor<Real> out({n_rows});
  for (std::size_t r = 0; r < n_rows; ++r) {
    Real d = 0;
    for (std::size_t c = 0; c < dim; ++c) d += a.value().at(r, c) * b.value().at(r, c);
    out[r] = d;
  }
  return make_result<Real>(std::move(out), {a, b}, [n_rows, dim](Node<Real>& n) {
    Node<Real>& pa = parent(n, 0);
    Node<Real>& pb = parent(n, 1);
    Tensor<Real> da(pa.value.shape()), db(pb.value.shape());
    for (std::size_t r = 0; r < n_rows; ++r) {
      for (std::size_t c = 0; c < dim; ++c) {
        da.at(r, c) = n.grad[r] * pb.value.at(r, c);
        db.at(r, c) = n.grad[r] * pa.value.at(r, c);
      }
    }
    accumulate_grad(pa, da);
    accumulate_grad(pb, db);
  });
}

template <class Real>
Var<Real> cosine_rows(const Var<Real>& a, const Var<Real>& b, Real zero_norm) {
  require_same(a, b, "cosine_rows");
  const std::size_t n_rows = a.rows(), dim = a.cols();
  Tensor<Real> out({n_rows});
  std::vector<Real> norm_a(n_rows), norm_b(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    Real d = 0, na = 0, nb = 0;
    for (std::size_t c = 0; c < dim; ++c) {
      const Real x = a.value().at(r, c), y = b.value().at(r, c);
      d += x * y;
      na += x * x;
      nb += y * y;
    }
    norm_a[r] = std::sqrt(na);
    norm_b[r] = std::sqrt(nb);
    out[r] = (norm_a[r] < zero_norm || norm_b[r] < zero_norm) ? Real{0} : d / (norm_a[r] * norm_b[r]);
  }
  Tensor<Real> cos = out;
  return make_result<Real>(
      std::move(out), {a, b},
      [cos = std::move(cos), norm_a = std::move(norm_a), norm_b = std::move(norm_b), n_rows, dim,
       zero_norm](Node<Real>& n) {
        Node<Real>& pa = parent(n, 0);
        Node<Real>& pb = parent(n, 1);
        Tensor<Real> da(pa.value.shape()), db(pb.value.shape());
        for (std::size_t r = 0; r < n_rows; ++r) {
          if (norm_a[r] < zero_norm || norm_b[r] < zero_norm) continue;
          const Real g = n.grad[r];
          const Real inv = Real{1} / (norm_a[r] * norm_b[r]);
          const Real ca = cos[r] / (norm_a[r] * norm_a[r]);
          const Real cb = cos[r] / (norm_b[r] * norm_b[r]);
          for (std::size_t c = 0; c < dim; ++c) {
            const Real x = pa.value.at(r, c), y = pb.value.at(r, c);
            da.at(r, c) = g * (y * inv - ca * x);
            db.at(r, c) = g * (x * inv - cb * y);
          }
        }
        accumulate_grad(pa, da);
        accumulate_grad(pb, db);
      });
}

template <class Real>
Var<Real> sum(const Var<Real>& x) {
  Real total = 0;
  for (Real v : x.value().values()) total += v;
  return make_result<Real>(Tensor<Real>::scalar(total), {x}, [](Node<Real>& n) {
    Tensor<Real> d(parent(n, 0).value.shape(), n.grad[0]);
    accumulate_grad(parent(n, 0), d);
  });
}

template <class Real>
Var<Real> mean(const Var<Real>& x) {
  const Real count = static_cast<Real>(x.size());
  return affine(sum(x), Real{1} / count, Real{0});
}

template <class Real>
Var<Real> masked_mean(const Var<Real>& x, const RowMask& mask) {
  require(mask.size() == x.size(), "masked_mean", shape_string(x.shape()));
  Real total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    total += x.value()[i];
    ++count;
  }
  const Real inv = count ? Real{1} / static_cast<Real>(count) : Real{0};
  return make_result<Real>(Tensor<Real>::scalar(total * inv), {x}, [mask, inv](Node<Real>& n) {
    Tensor<Real> d(parent(n, 0).value.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) d[i] = n.grad[0] * inv;
    }
    accumulate_grad(parent(n, 0), d);
  });
}

template <class Real>
Var<Real> weighted_sum(const Var<Real>& weights, const std::vector<Var<Real>>& parts) {
  const std::size_t n_parts = parts.size();
  require(n_parts > 0 && weights.cols() == n_parts, "weighted_sum", shape_string(weights.shape()));
  const std::size_t n_rows = weights.rows(), dim = parts[0].cols();
  for (const auto& p : parts) require(p.rows() == n_rows && p.cols() == dim, "weighted_sum", shape_string(p.shape()));
  Tensor<Real> out({n_rows, dim});
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t j = 0; j < n_parts; ++j) {
      const Real w = weights.value().at(r, j);
      const Real* src = parts[j].value().data() + r * dim;
      Real* dst = out.data() + r * dim;
      for (std::size_t c = 0; c < dim; ++c) dst[c] += w * src[c];
    }
  }
  std::vector<Var<Real>> all;
  all.reserve(n_parts + 1);
  all.push_back(weights);
  all.insert(all.end(), parts.begin(), parts.end());
  return make_result<Real>(std::move(out), all, [n_parts, n_rows, dim](Node<Real>& n) {
    Node<Real>& pw = parent(n, 0);
    Tensor<Real> dw(pw.value.shape());
    for (std::size_t j = 0; j < n_parts; ++j) {
      Node<Real>& pj = *n.parents[j + 1];
      Tensor<Real> dp(pj.value.shape());
      for (std::size_t r = 0; r < n_rows; ++r) {
        const Real w = pw.value.at(r, j);
        Real dot = 0;
        for (std::size_t c = 0; c < dim; ++c) {
          const Real g = n.grad.at(r, c);
          dot += g * pj.value.at(r, c);
          dp.at(r, c) = w * g;
        }
        dw.at(r, j) = dot;
      }
      accumulate_grad(pj, dp);
    }
    accumulate_grad(pw, dw);
  });
}

template <class Real>
Var<Real> dropout(const Var<Real>& x, Real p, std::mt19937_64& rng) {
  if (p <= Real{0}) return x;
  if (p >= Real{1}) throw ConfigError("dropout probability must be < 1");
  const Real keep_scale = Real{1} / (Real{1} - p);
  Tensor<Real> factor(x.shape());
  for (auto& f : factor.values()) f = uniform01(rng) >= static_cast<double>(p) ? keep_scale : Real{0};
  Tensor<Real> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return make_result<Real>(std::move(out), {x}, [factor = std::move(factor)](Node<Real>& n) {
    Tensor<Real> d = n.grad;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= factor[i];
    accumulate_grad(parent(n, 0), d);
  });
}

#define PRISM_INSTANTIATE_OPS(Real)                                                                        \
  template Var<Real> add(const Var<Real>&, const Var<Real>&);                                               \
  template Var<Real> sub(const Var<Real>&, const Var<Real>&);                                               \
  template Var<Real> mul(const Var<Real>&, const Var<Real>&);                                               \
  template Var<Real> add_n(const std::vector<Var<Real>>&);                                                  \
  template Var<Real> affine(const Var<Real>&, Real, Real);                                                  \
  template Var<Real> reshape(const Var<Real>&, Shape);                                                      \
  template Var<Real> matmul(const Var<Real>&, const Var<Real>&);                                            \
  template Var<Real> matmul_nt(const Var<Real>&, const Var<Real>&);                                         \
  template Var<Real> linear(const Var<Real>&, const Var<Real>&, const Var<Real>&);                          \
  template Var<Real> relu(const Var<Real>&);                                                                \
  template Var<Real> softplus(const Var<Real>&);                                                            \
  template Var<Real> layer_norm(const Var<Real>&, const Var<Real>&, const Var<Real>&, Real);                \
  template Var<Real> softmax_rows(const Var<Real>&);                                                        \
  template Var<Real> gather_rows(const Var<Real>&, std::span<const std::int64_t>, std::int64_t);            \
  template Var<Real> concat_cols(const std::vector<Var<Real>>&);                                            \
  template Var<Real> mask_rows(const Var<Real>&, const RowMask&);                                           \
  template Var<Real> causal_attention(const Var<Real>&, const Var<Real>&, const Var<Real>&, std::size_t,    \
                                      std::size_t, std::size_t, const RowMask&);                            \
  template Var<Real> causal_mean(const Var<Real>&, std::size_t, std::size_t, const RowMask&);               \
  template Var<Real> masked_mean_rows(const Var<Real>&, std::size_t, std::size_t, const RowMask&);          \
  template Var<Real> row_dot(const Var<Real>&, const Var<Real>&);                                           \
  template Var<Real> cosine_rows(const Var<Real>&, const Var<Real>&, Real);                                 \
  template Var<Real> sum(const Var<Real>&);                                                                 \
  template Var<Real> mean(const Var<Real>&);                                                                \
  template Var<Real> masked_mean(const Var<Real>&, const RowMask&);                                         \
  template Var<Real> weighted_sum(const Var<Real>&, const std::vector<Var<Real>>&);                         \
  template Var<Real> dropout(const Var<Real>&, Real, std::mt19937_64&);

PRISM_INSTANTIATE_OPS(float)
PRISM_INSTANTIATE_OPS(double)

#undef PRISM_INSTANTIATE_OPS

}  // namespace prism::num
