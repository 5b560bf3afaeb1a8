#include "fairgrpo/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/kernels/kernels.hpp"

namespace fairgrpo::num {
namespace {

using BackwardFn = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   BackwardFn backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// Parent gradient buffer, or nullptr when that parent takes no gradient.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
  std::vector<double> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    double* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * df(x[i], self.value[i]);
    }
  });
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  if (rank == 0) throw DimensionError(std::string(op) + ": scalar input");
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) {
    throw DimensionError(std::string(op) + ": axis out of range for " + shape_to_string(shape));
  }
  AxisSplit s{1, shape[static_cast<std::size_t>(ax)], 1};
  for (int i = 0; i < ax; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  if (s.n == 0) throw DimensionError(std::string(op) + ": empty axis");
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.values().data(), b.values().data(), out.data(), m, n, k);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const Node& pa = *self.parents[0];
    const Node& pb = *self.parents[1];
    if (double* ga = grad_of(self, 0)) {
      kernels::gemm_nt(self.grad.data(), pb.value.data(), ga, m, k, n, true);
    }
    if (double* gb = grad_of(self, 1)) {
      kernels::gemm_tn(pa.value.data(), self.grad.data(), gb, k, n, m, true);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n);
  kernels::gemm_nt(a.values().data(), b.values().data(), out.data(), m, n, k);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const Node& pa = *self.parents[0];
    const Node& pb = *self.parents[1];
    if (double* ga = grad_of(self, 0)) {
      kernels::gemm_nn(self.grad.data(), pb.value.data(), ga, m, k, n, true);
    }
    if (double* gb = grad_of(self, 1)) {
      kernels::gemm_tn(self.grad.data(), pa.value.data(), gb, n, k, m, true);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank(a, 2, "add_row");
  require_rank(row, 1, "add_row");
  if (a.dim(1) != row.dim(0)) {
    throw DimensionError("add_row: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(row.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto r = row.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  }
  return make_result(a.shape(), std::move(out), {a, row}, [m, n](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + k * x * x * x);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * k * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same(a, b, "minimum");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(av[i], bv[i]);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x[i] <= y[i]) {
        if (ga) ga[i] += self.grad[i];
      } else if (gb) {
        gb[i] += self.grad[i];
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_result({}, {total}, {a}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.n * s.inner + r;
      double mx = in[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const std::size_t base = o * s.n * s.inner + r;
        double dotp = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          dotp += self.grad[idx] * self.value[idx];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dotp);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.n * s.inner + r;
      double mx = in[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) z += std::exp(in[base + j * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = in[base + j * s.inner] - lse;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const std::size_t base = o * s.n * s.inner + r;
        double total = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) total += self.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          g[idx] += self.grad[idx] - std::exp(self.value[idx]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: affine shape mismatch " + shape_to_string(x.shape()) +
                         " vs " + shape_to_string(gamma.shape()) + "/" +
                         shape_to_string(beta.shape()));
  }
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  std::vector<double> out(m * n);
  const auto in = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = gv[j] * h + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, [m, n, xhat, inv_std](Node& self) {
    const auto& gv = self.parents[1]->value;
    double* gx = grad_of(self, 0);
    double* gg = grad_of(self, 1);
    double* gb = grad_of(self, 2);
    std::vector<double> dh(n);
    for (std::size_t i = 0; i < m; ++i) {
      const double* dy = self.grad.data() + i * n;
      const double* h = xhat->data() + i * n;
      if (gg || gb) {
        for (std::size_t j = 0; j < n; ++j) {
          if (gg) gg[j] += dy[j] * h[j];
          if (gb) gb[j] += dy[j];
        }
      }
      if (!gx) continue;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dh[j] = dy[j] * gv[j];
        mean_dh += dh[j];
        mean_dh_h += dh[j] * h[j];
      }
      mean_dh /= static_cast<double>(n);
      mean_dh_h /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += (*inv_std)[i] * (dh[j] - mean_dh - h[j] * mean_dh_h);
      }
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  auto index = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  std::vector<double> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table " +
                           shape_to_string(table.shape()));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {table}, [index, d](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < index->size(); ++i) {
      double* dst = g + static_cast<std::size_t>((*index)[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "select_rows");
  const std::size_t m = x.dim(0), d = x.dim(1);
  auto index = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  std::vector<double> out(rows.size() * d);
  const auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m) {
      throw DimensionError("select_rows: row " + std::to_string(rows[i]) + " outside " +
                           shape_to_string(x.shape()));
    }
    std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);
  }
  return make_result({rows.size(), d}, std::move(out), {x}, [index, d](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < index->size(); ++i) {
      double* dst = g + (*index)[i] * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor pick(const Tensor& x, std::span<const std::int32_t> cols) {
  require_rank(x, 2, "pick");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (cols.size() != m) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " +
                         shape_to_string(x.shape()));
  }
  auto index = std::make_shared<std::vector<std::int32_t>>(cols.begin(), cols.end());
  std::vector<double> out(m);
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= n) {
      throw DimensionError("pick: column " + std::to_string(cols[i]) + " outside " +
                           shape_to_string(x.shape()));
    }
    out[i] = xv[i * n + static_cast<std::size_t>(cols[i])];
  }
  return make_result({m}, std::move(out), {x}, [index, n](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < index->size(); ++i) {
      g[i * n + static_cast<std::size_t>((*index)[i])] += self.grad[i];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_to_string(logits.shape()));
  }
  auto probs = std::make_shared<std::vector<double>>(m * n);
  auto tgt = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
  const auto lv = logits.values();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = lv.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[i * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] /= z;
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= n) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) + " outside " +
                           shape_to_string(logits.shape()));
    }
    total -= row[targets[i]] - mx - std::log(z);
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  return make_result({}, {total / denom}, {logits}, [probs, tgt, m, n, denom](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const double s = self.grad[0] / denom;
    for (std::size_t i = 0; i < m; ++i) {
      if ((*tgt)[i] < 0) continue;
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += s * (*probs)[i * n + j];
      g[i * n + static_cast<std::size_t>((*tgt)[i])] -= s;
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> key_mask) {
  require_rank(q, 2, "attention");
  require_same(q, k, "attention");
  require_same(q, v, "attention");
  const std::size_t B = shape.batch, T = shape.seq, H = shape.heads;
  const std::size_t d = q.dim(1);
  if (q.dim(0) != B * T || key_mask.size() != B * T) {
    throw DimensionError("attention: " + shape_to_string(q.shape()) + " does not match batch " +
                         std::to_string(B) + " x seq " + std::to_string(T));
  }
  if (H == 0 || d % H != 0) throw DimensionError("attention: width not divisible by heads");
  const std::size_t hd = d / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool causal = shape.causal;

  auto probs = std::make_shared<std::vector<double>>(B * H * T * T, 0.0);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(key_mask.begin(), key_mask.end());
  std::vector<double> out(B * T * d, 0.0);
  const auto qv = q.values();
  const auto kv = k.values();
  const auto vv = v.values();
  std::vector<double> qh(T * hd), kh(T * hd), scores(T * T);

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t row = (b * T + t) * d + h * hd;
        std::copy_n(qv.data() + row, hd, qh.data() + t * hd);
        std::copy_n(kv.data() + row, hd, kh.data() + t * hd);
      }
      kernels::gemm_nt(qh.data(), kh.data(), scores.data(), T, T, hd);
      double* P = probs->data() + (b * H + h) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        const std::size_t jmax = causal ? i + 1 : T;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < jmax; ++j) {
          if ((*mask)[b * T + j]) mx = std::max(mx, scores[i * T + j] * inv_sqrt);
        }
        if (mx == -INFINITY) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) {
          if (!(*mask)[b * T + j]) continue;
          const double e = std::exp(scores[i * T + j] * inv_sqrt - mx);
          P[i * T + j] = e;
          z += e;
        }
        double* orow = out.data() + (b * T + i) * d + h * hd;
        for (std::size_t j = 0; j < jmax; ++j) {
          if (P[i * T + j] == 0.0) continue;
          P[i * T + j] /= z;
          const double* vrow = vv.data() + (b * T + j) * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) orow[c] += P[i * T + j] * vrow[c];
        }
      }
    }
  }

  return make_result(q.shape(), std::move(out), {q, k, v},
                     [probs, B, T, H, d, hd, inv_sqrt](Node& self) {
    const auto& qv = self.parents[0]->value;
    const auto& kv = self.parents[1]->value;
    const auto& vv = self.parents[2]->value;
    double* gq = grad_of(self, 0);
    double* gk = grad_of(self, 1);
    double* gv = grad_of(self, 2);
    std::vector<double> dp(T), ds(T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const double* P = probs->data() + (b * H + h) * T * T;
        for (std::size_t i = 0; i < T; ++i) {
          const double* dout = self.grad.data() + (b * T + i) * d + h * hd;
          double rowdot = 0.0;
          for (std::size_t j = 0; j < T; ++j) {
            const double p = P[i * T + j];
            if (p == 0.0) {
              dp[j] = 0.0;
              continue;
            }
            const double* vrow = vv.data() + (b * T + j) * d + h * hd;
            double acc = 0.0;
            for (std::size_t c = 0; c < hd; ++c) acc += dout[c] * vrow[c];
            dp[j] = acc;
            rowdot += p * acc;
            if (gv) {
              double* gvrow = gv + (b * T + j) * d + h * hd;
              for (std::size_t c = 0; c < hd; ++c) gvrow[c] += p * dout[c];
            }
          }
          const double* qrow = qv.data() + (b * T + i) * d + h * hd;
          for (std::size_t j = 0; j < T; ++j) {
            const double p = P[i * T + j];
            if (p == 0.0) continue;
            const double s = p * (dp[j] - rowdot) * inv_sqrt;
            const double* krow = kv.data() + (b * T + j) * d + h * hd;
            if (gq) {
              double* gqrow = gq + (b * T + i) * d + h * hd;
              for (std::size_t c = 0; c < hd; ++c) gqrow[c] += s * krow[c];
            }
            if (gk) {
              double* gkrow = gk + (b * T + j) * d + h * hd;
              for (std::size_t c = 0; c < hd; ++c) gkrow[c] += s * qrow[c];
            }
          }
        }
      }
    }
  });
}

Tensor mean_pool(const Tensor& x, std::size_t batch, std::size_t seq,
                 std::span<const std::uint8_t> mask) {
  require_rank(x, 2, "mean_pool");
  if (x.dim(0) != batch * seq || mask.size() != batch * seq) {
    throw DimensionError("mean_pool: " + shape_to_string(x.shape()) + " does not match batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  const std::size_t d = x.dim(1);
  auto weights = std::make_shared<std::vector<double>>(batch * seq, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < seq; ++t) count += mask[b * seq + t] ? 1 : 0;
    if (count == 0) continue;
    for (std::size_t t = 0; t < seq; ++t) {
      if (mask[b * seq + t]) (*weights)[b * seq + t] = 1.0 / static_cast<double>(count);
    }
  }
  std::vector<double> out(batch * d, 0.0);
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq; ++t) {
      const double w = (*weights)[b * seq + t];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += w * xv[(b * seq + t) * d + j];
    }
  }
  return make_result({batch, d}, std::move(out), {x}, [weights, batch, seq, d](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < seq; ++t) {
        const double w = (*weights)[b * seq + t];
        if (w == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) g[(b * seq + t) * d + j] += w * self.grad[b * d + j];
      }
    }
  });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (p == 0.0) return x;
  auto keep = std::make_shared<std::vector<double>>(x.size());
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution drop(p);
  const double s = 1.0 / (1.0 - p);
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*keep)[i] = drop(rng) ? 0.0 : s;
    out[i] = xv[i] * (*keep)[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [keep](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*keep)[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace fairgrpo::num
