#include "dhhqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dhhqa {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
  ss << ']';
  return ss.str();
}

[[noreturn]] void shape_fail(const char* op, const std::vector<std::size_t>& a,
                             const std::vector<std::size_t>& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

std::size_t numel_of(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::NodePtr make_node(std::vector<std::size_t> shape, bool requires_grad,
                          std::vector<Tensor::NodePtr> parents = {}) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->data.resize(numel_of(n->shape));
  n->requires_grad = requires_grad;
  n->parents = std::move(parents);
  return n;
}

bool any_grad(const std::vector<Tensor::NodePtr>& parents) {
  return std::any_of(parents.begin(), parents.end(),
                     [](const Tensor::NodePtr& p) { return p->requires_grad; });
}

// C[m,n] += A[m,k] * B[k,n], ikj order for contiguous inner loops; the k-loop
// is unrolled 4-wide with a left-to-right sum so each C element sees additions
// in the same order as the plain loop (results stay bit-identical)
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = ai[p], a1 = ai[p + 1], a2 = ai[p + 2], a3 = ai[p + 3];
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j)
        ci[j] = ((((ci[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j]);
    }
    for (; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A^T·B where A is [k,m], B [k,n]; materializing Aᵀ reuses the
// saxpy kernel and keeps the per-element accumulation order of the naive loop
void gemm_at_b_acc(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                   std::size_t n) {
  std::vector<double> at(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  gemm_acc(at.data(), b, c, m, k, n);
}

// C[m,k] += A[m,n] * Bᵀ where B is [k,n]; materializing Bᵀ keeps the inner
// loop a contiguous saxpy (the dot-product form defeats vectorization) while
// accumulating each output element in the same order as the naive version
void gemm_a_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_acc(a, bt.data(), c, m, n, k);
}

}  // namespace

namespace detail {

void sgemm_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* ci = c + i * n;
    const float* ai = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const float a0 = ai[p], a1 = ai[p + 1], a2 = ai[p + 2], a3 = ai[p + 3];
      const float* b0 = b + p * n;
      const float* b1 = b0 + n;
      const float* b2 = b1 + n;
      const float* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j)
        ci[j] = ((((ci[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j]);
    }
    for (; p < k; ++p) {
      const float av = ai[p];
      const float* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void sgemm_at_b_acc(const float* a, const float* b, float* c, std::size_t k, std::size_t m,
                    std::size_t n) {
  thread_local std::vector<float> at;
  at.resize(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  sgemm_acc(at.data(), b, c, m, k, n);
}

void sgemm_a_bt_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  thread_local std::vector<float> bt;
  bt.resize(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  sgemm_acc(a, bt.data(), c, m, n, k);
}

}  // namespace detail

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
  if (numel_of(shape) != data.size())
    throw std::invalid_argument("Tensor: data length does not match shape " + shape_str(shape));
  node_ = make_node(std::move(shape), requires_grad);
  node_->data = std::move(data);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return Tensor(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  Tensor t(make_node(std::move(shape), requires_grad));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return node_->data[0];
}

void Tensor::backward() const {
  if (numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  // topological order via iterative DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

namespace {

Tensor elementwise2(const char* name, const Tensor& a, const Tensor& b,
                    double (*fwd)(double, double), void (*bwd)(const Tensor::Node&, Tensor::Node&,
                                                               Tensor::Node&)) {
  if (a.shape() != b.shape()) shape_fail(name, a.shape(), b.shape());
  auto out = make_node(a.shape(), a.requires_grad() || b.requires_grad(), {a.node(), b.node()});
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = fwd(a.data()[i], b.data()[i]);
  if (out->requires_grad) {
    out->backward_fn = [bwd](Tensor::Node& self) {
      self.parents[0]->ensure_grad();
      self.parents[1]->ensure_grad();
      bwd(self, *self.parents[0], *self.parents[1]);
    };
  }
  return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "add", a, b, [](double x, double y) { return x + y; },
      [](const Tensor::Node& self, Tensor::Node& pa, Tensor::Node& pb) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          pa.grad[i] += self.grad[i];
          pb.grad[i] += self.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](const Tensor::Node& self, Tensor::Node& pa, Tensor::Node& pb) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          pa.grad[i] += self.grad[i];
          pb.grad[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](const Tensor::Node& self, Tensor::Node& pa, Tensor::Node& pb) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          pa.grad[i] += self.grad[i] * pb.data[i];
          pb.grad[i] += self.grad[i] * pa.data[i];
        }
      });
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_node(a.shape(), a.requires_grad(), {a.node()});
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a.data()[i] * s;
  if (out->requires_grad) {
    out->backward_fn = [s](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * s;
    };
  }
  return Tensor(out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_node({m, n}, any_grad({a.node(), b.node()}), {a.node(), b.node()});
  gemm_acc(a.data().data(), b.data().data(), out->data.data(), m, k, n);
  if (out->requires_grad) {
    out->backward_fn = [m, k, n](Tensor::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad || !pa.parents.empty()) {
        pa.ensure_grad();
        gemm_a_bt_acc(self.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
      }
      if (pb.requires_grad || !pb.parents.empty()) {
        pb.ensure_grad();
        gemm_at_b_acc(pa.data.data(), self.grad.data(), pb.grad.data(), m, k, n);
      }
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: expects 2-D, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = make_node({n, m}, a.requires_grad(), {a.node()});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->data[j * m + i] = a.data()[i * n + j];
  if (out->requires_grad) {
    out->backward_fn = [m, n](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j * m + i];
    };
  }
  return Tensor(out);
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
  if (a.ndim() != 2 || row.ndim() != 1 || a.dim(1) != row.dim(0))
    shape_fail("add_rowvec", a.shape(), row.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = make_node({m, n}, any_grad({a.node(), row.node()}), {a.node(), row.node()});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = a.data()[i * n + j] + row.data()[j];
  if (out->requires_grad) {
    out->backward_fn = [m, n](Tensor::Node& self) {
      auto& pa = *self.parents[0];
      auto& pr = *self.parents[1];
      pa.ensure_grad();
      pr.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          pa.grad[i * n + j] += self.grad[i * n + j];
          pr.grad[j] += self.grad[i * n + j];
        }
    };
  }
  return Tensor(out);
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (numel_of(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  auto out = make_node(std::move(shape), a.requires_grad(), {a.node()});
  out->data = a.data();
  if (out->requires_grad) {
    out->backward_fn = [](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor softmax(const Tensor& a) {
  if (a.ndim() == 0) throw std::invalid_argument("softmax: scalar input");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  auto out = make_node(a.shape(), a.requires_grad(), {a.node()});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out->data.data() + r * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
  }
  if (out->requires_grad) {
    out->backward_fn = [rows, n](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * n;
        const double* g = self.grad.data() + r * n;
        double dotgy = 0.0;
        for (std::size_t j = 0; j < n; ++j) dotgy += g[j] * y[j];
        double* gi = p.grad.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) gi[j] += y[j] * (g[j] - dotgy);
      }
    };
  }
  return Tensor(out);
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta) {
  constexpr double kEps = 1e-5;
  const std::size_t n = a.shape().back();
  if (gamma.shape() != std::vector<std::size_t>{n}) shape_fail("layer_norm gamma", a.shape(), gamma.shape());
  if (beta.shape() != std::vector<std::size_t>{n}) shape_fail("layer_norm beta", a.shape(), beta.shape());
  const std::size_t rows = a.numel() / n;
  auto out = make_node(a.shape(), any_grad({a.node(), gamma.node(), beta.node()}),
                       {a.node(), gamma.node(), beta.node()});
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[r] = is;
    double* xh = xhat->data() + r * n;
    double* y = out->data.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (x[j] - mu) * is;
      y[j] = gamma.data()[j] * xh[j] + beta.data()[j];
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [rows, n, xhat, inv_std](Tensor::Node& self) {
      auto& px = *self.parents[0];
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      px.ensure_grad();
      pg.ensure_grad();
      pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = self.grad.data() + r * n;
        const double* xh = xhat->data() + r * n;
        const double is = (*inv_std)[r];
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = g[j] * pg.data[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
          pg.grad[j] += g[j] * xh[j];
          pb.grad[j] += g[j];
        }
        mean_dxhat /= static_cast<double>(n);
        mean_dxhat_xhat /= static_cast<double>(n);
        double* gx = px.grad.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = g[j] * pg.data[j];
          gx[j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      }
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& a) {
  auto out = make_node(a.shape(), a.requires_grad(), {a.node()});
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    const double x = a.data()[i];
    out->data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (out->requires_grad) {
    out->backward_fn = [](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double x = p.data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        p.grad[i] += self.grad[i] * (cdf + x * pdf);
      }
    };
  }
  return Tensor(out);
}

Tensor mean_axis0(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mean_axis0: expects 2-D, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (m == 0) throw std::invalid_argument("mean_axis0: empty axis");
  auto out = make_node({n}, a.requires_grad(), {a.node()});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->data[j] += a.data()[i * n + j];
  for (std::size_t j = 0; j < n; ++j) out->data[j] /= static_cast<double>(m);
  if (out->requires_grad) {
    out->backward_fn = [m, n](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j] * inv;
    };
  }
  return Tensor(out);
}

Tensor sum_all(const Tensor& a) {
  auto out = make_node({}, a.requires_grad(), {a.node()});
  out->data.assign(1, 0.0);
  for (double v : a.data()) out->data[0] += v;
  if (out->requires_grad) {
    out->backward_fn = [](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (double& g : p.grad) g += self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    shape_fail("concat_rows", a.shape(), b.shape());
  const std::size_t m1 = a.dim(0), m2 = b.dim(0), n = a.dim(1);
  auto out = make_node({m1 + m2, n}, any_grad({a.node(), b.node()}), {a.node(), b.node()});
  std::copy(a.data().begin(), a.data().end(), out->data.begin());
  std::copy(b.data().begin(), b.data().end(), out->data.begin() + m1 * n);
  if (out->requires_grad) {
    out->backward_fn = [m1, m2, n](Tensor::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      pa.ensure_grad();
      pb.ensure_grad();
      for (std::size_t i = 0; i < m1 * n; ++i) pa.grad[i] += self.grad[i];
      for (std::size_t i = 0; i < m2 * n; ++i) pb.grad[i] += self.grad[m1 * n + i];
    };
  }
  return Tensor(out);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.ndim() != 2 || begin + count > a.dim(0))
    throw std::invalid_argument("slice_rows: range out of bounds for " + shape_str(a.shape()));
  const std::size_t n = a.dim(1);
  auto out = make_node({count, n}, a.requires_grad(), {a.node()});
  std::copy_n(a.data().begin() + begin * n, count * n, out->data.begin());
  if (out->requires_grad) {
    out->backward_fn = [begin, count, n](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < count * n; ++i) p.grad[begin * n + i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.ndim() != 2 || begin + count > a.dim(1))
    throw std::invalid_argument("slice_cols: range out of bounds for " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = make_node({m, count}, a.requires_grad(), {a.node()});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data().begin() + i * n + begin, count, out->data.begin() + i * count);
  if (out->requires_grad) {
    out->backward_fn = [m, n, begin, count](Tensor::Node& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          p.grad[i * n + begin + j] += self.grad[i * count + j];
    };
  }
  return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t m = parts.front().dim(0);
  std::size_t total = 0;
  std::vector<Tensor::NodePtr> parents;
  for (const Tensor& t : parts) {
    if (t.ndim() != 2 || t.dim(0) != m) shape_fail("concat_cols", parts.front().shape(), t.shape());
    total += t.dim(1);
    parents.push_back(t.node());
  }
  auto out = make_node({m, total}, any_grad(parents), parents);
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    const std::size_t n = t.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(t.data().begin() + i * n, n, out->data.begin() + i * total + off);
    off += n;
  }
  if (out->requires_grad) {
    out->backward_fn = [m, total](Tensor::Node& self) {
      std::size_t off = 0;
      for (auto& pp : self.parents) {
        auto& p = *pp;
        p.ensure_grad();
        const std::size_t n = p.shape[1];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[i * total + off + j];
        off += n;
      }
    };
  }
  return Tensor(out);
}

}  // namespace dhhqa
