#include "colf/tensor.hpp"

#include <Eigen/Core>
#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace colf {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

thread_local Tape* g_active_tape = nullptr;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  throw std::invalid_argument(os.str());
}

bool should_record(const std::vector<TensorPtr>& parents) {
  if (!g_active_tape) return false;
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

// Finalizes an op node: propagates requires_grad and records on the tape.
TensorPtr finish(TensorPtr t, std::vector<TensorPtr> parents, std::function<void(Tensor&)> bp,
                 const char* name) {
  t->op_name = name;
  if (should_record(parents)) {
    t->requires_grad = true;
    t->parents = std::move(parents);
    t->backprop = std::move(bp);
    Tape::active()->record(t);
  }
  return t;
}

void accumulate(const TensorPtr& dst, const std::vector<double>& g) {
  dst->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst->grad[i] += g[i];
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

double Tensor::scalar() const {
  if (!is_scalar()) throw std::invalid_argument("scalar(): tensor has shape " + shape_str(shape));
  return data[0];
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

TensorPtr constant(Shape shape, std::vector<double> data) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("constant: shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  return t;
}

TensorPtr zeros(Shape shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->data.assign(numel(shape), 0.0);
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr scalar_tensor(double value) { return constant({1}, {value}); }

Tape::Tape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const TensorPtr& loss) {
  if (!loss->is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss->shape));

  // Mark the subgraph reachable from the loss.
  std::unordered_set<const Tensor*> reachable;
  std::vector<const Tensor*> stack{loss.get()};
  while (!stack.empty()) {
    const Tensor* t = stack.back();
    stack.pop_back();
    if (!reachable.insert(t).second) continue;
    for (const auto& p : t->parents) stack.push_back(p.get());
  }

  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Tensor& n = **it;
    if (!n.backprop || !reachable.count(&n)) continue;
    n.ensure_grad();
    n.backprop(n);
  }
}

TensorPtr make_node(Shape shape, std::vector<double> data, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backprop, const char* op_name) {
  auto t = constant(std::move(shape), std::move(data));
  return finish(t, std::move(parents), std::move(backprop), op_name);
}

// ---- arithmetic -------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) shape_error("add", a->shape, b->shape);
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
  return make_node(a->shape, std::move(out), {a, b},
                   [a, b](Tensor& self) {
                     accumulate(a, self.grad);
                     accumulate(b, self.grad);
                   },
                   "add");
}

TensorPtr add_bias(const TensorPtr& a, const TensorPtr& bias) {
  const int64_t c = a->shape.empty() ? 0 : a->shape.back();
  if (bias->rank() != 1 || bias->shape[0] != c) shape_error("add_bias", a->shape, bias->shape);
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + bias->data[i % c];
  return make_node(a->shape, std::move(out), {a, bias},
                   [a, bias, c](Tensor& self) {
                     accumulate(a, self.grad);
                     bias->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i)
                       bias->grad[i % c] += self.grad[i];
                   },
                   "add_bias");
}

TensorPtr add_scalar(const TensorPtr& a, double s) {
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + s;
  return make_node(a->shape, std::move(out), {a},
                   [a](Tensor& self) { accumulate(a, self.grad); }, "add_scalar");
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) shape_error("sub", a->shape, b->shape);
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
  return make_node(a->shape, std::move(out), {a, b},
                   [a, b](Tensor& self) {
                     accumulate(a, self.grad);
                     b->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] -= self.grad[i];
                   },
                   "sub");
}

TensorPtr neg(const TensorPtr& a) { return mul_scalar(a, -1.0); }

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) shape_error("mul", a->shape, b->shape);
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
  return make_node(a->shape, std::move(out), {a, b},
                   [a, b](Tensor& self) {
                     a->ensure_grad();
                     b->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       a->grad[i] += self.grad[i] * b->data[i];
                       b->grad[i] += self.grad[i] * a->data[i];
                     }
                   },
                   "mul");
}

TensorPtr mul_scalar(const TensorPtr& a, double s) {
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * s;
  return make_node(a->shape, std::move(out), {a},
                   [a, s](Tensor& self) {
                     a->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * s;
                   },
                   "mul_scalar");
}

// ---- matmul family ----------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0])
    shape_error("matmul", a->shape, b->shape);
  const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  std::vector<double> out(static_cast<size_t>(m * n));
  MMap(out.data(), m, n).noalias() = CMap(a->data.data(), m, k) * CMap(b->data.data(), k, n);
  return make_node({m, n}, std::move(out), {a, b},
                   [a, b, m, k, n](Tensor& self) {
                     CMap g(self.grad.data(), m, n);
                     a->ensure_grad();
                     MMap(a->grad.data(), m, k).noalias() += g * CMap(b->data.data(), k, n).transpose();
                     b->ensure_grad();
                     MMap(b->grad.data(), k, n).noalias() += CMap(a->data.data(), m, k).transpose() * g;
                   },
                   "matmul");
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias) {
  if (x->rank() != 2 || w->rank() != 2 || x->shape[1] != w->shape[0]) shape_error("linear", x->shape, w->shape);
  const int64_t m = x->shape[0], k = x->shape[1], n = w->shape[1];
  if (bias && (bias->rank() != 1 || bias->shape[0] != n)) shape_error("linear", x->shape, bias->shape);
  std::vector<double> out(static_cast<size_t>(m * n));
  MMap om(out.data(), m, n);
  om.noalias() = CMap(x->data.data(), m, k) * CMap(w->data.data(), k, n);
  if (bias) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->data.data(), n);
  std::vector<TensorPtr> parents = bias ? std::vector<TensorPtr>{x, w, bias} : std::vector<TensorPtr>{x, w};
  return make_node({m, n}, std::move(out), std::move(parents),
                   [x, w, bias, m, k, n](Tensor& self) {
                     CMap g(self.grad.data(), m, n);
                     x->ensure_grad();
                     MMap(x->grad.data(), m, k).noalias() += g * CMap(w->data.data(), k, n).transpose();
                     w->ensure_grad();
                     MMap(w->grad.data(), k, n).noalias() += CMap(x->data.data(), m, k).transpose() * g;
                     if (bias) {
                       bias->ensure_grad();
                       Eigen::Map<Eigen::RowVectorXd>(bias->grad.data(), n) += g.colwise().sum();
                     }
                   },
                   "linear");
}

static void check_bmm(const char* op, const TensorPtr& a, const TensorPtr& b, bool transposed) {
  if (a->rank() != 3 || b->rank() != 3 || a->shape[0] != b->shape[0] ||
      a->shape[2] != (transposed ? b->shape[2] : b->shape[1]))
    shape_error(op, a->shape, b->shape);
}

TensorPtr bmm(const TensorPtr& a, const TensorPtr& b) {
  check_bmm("bmm", a, b, false);
  const int64_t bs = a->shape[0], m = a->shape[1], k = a->shape[2], n = b->shape[2];
  std::vector<double> out(static_cast<size_t>(bs * m * n));
  for (int64_t i = 0; i < bs; ++i)
    MMap(out.data() + i * m * n, m, n).noalias() =
        CMap(a->data.data() + i * m * k, m, k) * CMap(b->data.data() + i * k * n, k, n);
  return make_node({bs, m, n}, std::move(out), {a, b},
                   [a, b, bs, m, k, n](Tensor& self) {
                     a->ensure_grad();
                     b->ensure_grad();
                     for (int64_t i = 0; i < bs; ++i) {
                       CMap g(self.grad.data() + i * m * n, m, n);
                       MMap(a->grad.data() + i * m * k, m, k).noalias() +=
                           g * CMap(b->data.data() + i * k * n, k, n).transpose();
                       MMap(b->grad.data() + i * k * n, k, n).noalias() +=
                           CMap(a->data.data() + i * m * k, m, k).transpose() * g;
                     }
                   },
                   "bmm");
}

TensorPtr bmm_nt(const TensorPtr& a, const TensorPtr& b) {
  check_bmm("bmm_nt", a, b, true);
  const int64_t bs = a->shape[0], m = a->shape[1], k = a->shape[2], n = b->shape[1];
  std::vector<double> out(static_cast<size_t>(bs * m * n));
  for (int64_t i = 0; i < bs; ++i)
    MMap(out.data() + i * m * n, m, n).noalias() =
        CMap(a->data.data() + i * m * k, m, k) * CMap(b->data.data() + i * n * k, n, k).transpose();
  return make_node({bs, m, n}, std::move(out), {a, b},
                   [a, b, bs, m, k, n](Tensor& self) {
                     a->ensure_grad();
                     b->ensure_grad();
                     for (int64_t i = 0; i < bs; ++i) {
                       CMap g(self.grad.data() + i * m * n, m, n);
                       MMap(a->grad.data() + i * m * k, m, k).noalias() +=
                           g * CMap(b->data.data() + i * n * k, n, k);
                       MMap(b->grad.data() + i * n * k, n, k).noalias() +=
                           g.transpose() * CMap(a->data.data() + i * m * k, m, k);
                     }
                   },
                   "bmm_nt");
}

// ---- elementwise nonlinearities ----------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
TensorPtr unary(const TensorPtr& a, Fwd fwd, Bwd bwd, const char* name) {
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->data[i]);
  return make_node(a->shape, std::move(out), {a},
                   [a, bwd](Tensor& self) {
                     a->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i)
                       a->grad[i] += self.grad[i] * bwd(a->data[i], self.data[i]);
                   },
                   name);
}

}  // namespace

TensorPtr exp_(const TensorPtr& a) {
  return unary(
      a, [](double x) { return std::exp(std::min(x, 700.0)); },
      [](double x, double y) { return x > 700.0 ? 0.0 : y; }, "exp");
}

TensorPtr log_(const TensorPtr& a, double floor) {
  return unary(
      a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; }, "log");
}

TensorPtr relu(const TensorPtr& a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; }, "relu");
}

TensorPtr elu(const TensorPtr& a) {
  return unary(
      a, [](double x) { return x > 0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; }, "elu");
}

TensorPtr sigmoid(const TensorPtr& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-std::max(-700.0, std::min(700.0, x)))); },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

TensorPtr softplus(const TensorPtr& a) {
  return unary(
      a,
      [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-std::max(-700.0, std::min(700.0, x)))); },
      "softplus");
}

TensorPtr abs_(const TensorPtr& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }, "abs");
}

// ---- softmax ----------------------------------------------------------------

namespace {

TensorPtr softmax_impl(const TensorPtr& a, const TensorPtr& mask, const char* name) {
  if (a->rank() < 1) shape_error(name, a->shape, {});
  const int64_t c = a->shape.back();
  const int64_t rows = a->size() / c;
  int64_t mask_stride = 0;  // per-row offset into mask data
  if (mask) {
    if (mask->shape == a->shape) {
      mask_stride = c;
    } else if (a->rank() == 3 && mask->rank() == 2 && mask->shape[0] == a->shape[0] &&
               mask->shape[1] == a->shape[2]) {
      mask_stride = -1;  // broadcast over axis 1
    } else {
      shape_error(name, a->shape, mask->shape);
    }
  }
  const int64_t queries = a->rank() == 3 ? a->shape[1] : 1;
  auto mask_row = [&](int64_t r) -> const double* {
    if (!mask) return nullptr;
    if (mask_stride == c) return mask->data.data() + r * c;
    return mask->data.data() + (r / queries) * c;
  };

  std::vector<double> out(a->data.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a->data.data() + r * c;
    const double* m = mask_row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < c; ++j)
      if (!m || m[j] != 0.0) mx = std::max(mx, x[j]);
    double denom = 0.0;
    double* y = out.data() + r * c;
    if (!std::isfinite(mx)) {  // fully masked row: defined as all-zero
      std::fill(y, y + c, 0.0);
      continue;
    }
    for (int64_t j = 0; j < c; ++j) {
      y[j] = (!m || m[j] != 0.0) ? std::exp(x[j] - mx) : 0.0;
      denom += y[j];
    }
    for (int64_t j = 0; j < c; ++j) y[j] /= denom;
  }
  std::vector<TensorPtr> parents = mask ? std::vector<TensorPtr>{a, mask} : std::vector<TensorPtr>{a};
  return make_node(a->shape, std::move(out), std::move(parents),
                   [a, c, rows](Tensor& self) {
                     a->ensure_grad();
                     for (int64_t r = 0; r < rows; ++r) {
                       const double* y = self.data.data() + r * c;
                       const double* g = self.grad.data() + r * c;
                       double dot = 0.0;
                       for (int64_t j = 0; j < c; ++j) dot += y[j] * g[j];
                       double* ga = a->grad.data() + r * c;
                       for (int64_t j = 0; j < c; ++j) ga[j] += y[j] * (g[j] - dot);
                     }
                   },
                   name);
}

}  // namespace

TensorPtr softmax_last(const TensorPtr& a) { return softmax_impl(a, nullptr, "softmax"); }

TensorPtr masked_softmax_last(const TensorPtr& a, const TensorPtr& mask) {
  return softmax_impl(a, mask, "masked_softmax");
}

// ---- reductions & structure ---------------------------------------------------

TensorPtr sum_all(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  return make_node({1}, {s}, {a},
                   [a](Tensor& self) {
                     a->ensure_grad();
                     for (auto& g : a->grad) g += self.grad[0];
                   },
                   "sum_all");
}

TensorPtr sum_axis(const TensorPtr& a, int axis) {
  if (axis < 0 || axis >= a->rank())
    throw std::invalid_argument("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(a->shape));
  int64_t outer = 1, inner = 1;
  const int64_t n = a->shape[axis];
  for (int i = 0; i < axis; ++i) outer *= a->shape[i];
  for (int i = axis + 1; i < a->rank(); ++i) inner *= a->shape[i];
  Shape out_shape;
  for (int i = 0; i < a->rank(); ++i)
    if (i != axis) out_shape.push_back(a->shape[i]);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < inner; ++i) out[o * inner + i] += a->data[(o * n + j) * inner + i];
  return make_node(std::move(out_shape), std::move(out), {a},
                   [a, outer, inner, n](Tensor& self) {
                     a->ensure_grad();
                     for (int64_t o = 0; o < outer; ++o)
                       for (int64_t j = 0; j < n; ++j)
                         for (int64_t i = 0; i < inner; ++i)
                           a->grad[(o * n + j) * inner + i] += self.grad[o * inner + i];
                   },
                   "sum_axis");
}

TensorPtr mean_axis(const TensorPtr& a, int axis) {
  return mul_scalar(sum_axis(a, axis), 1.0 / static_cast<double>(a->shape[axis]));
}

TensorPtr concat_last(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != b->rank() || a->rank() < 1) shape_error("concat_last", a->shape, b->shape);
  for (int i = 0; i + 1 < a->rank(); ++i)
    if (a->shape[i] != b->shape[i]) shape_error("concat_last", a->shape, b->shape);
  const int64_t ca = a->shape.back(), cb = b->shape.back();
  const int64_t rows = a->size() / ca;
  Shape out_shape = a->shape;
  out_shape.back() = ca + cb;
  std::vector<double> out(static_cast<size_t>(rows * (ca + cb)));
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(out.data() + r * (ca + cb), a->data.data() + r * ca, ca * sizeof(double));
    std::memcpy(out.data() + r * (ca + cb) + ca, b->data.data() + r * cb, cb * sizeof(double));
  }
  return make_node(std::move(out_shape), std::move(out), {a, b},
                   [a, b, rows, ca, cb](Tensor& self) {
                     a->ensure_grad();
                     b->ensure_grad();
                     for (int64_t r = 0; r < rows; ++r) {
                       const double* g = self.grad.data() + r * (ca + cb);
                       for (int64_t j = 0; j < ca; ++j) a->grad[r * ca + j] += g[j];
                       for (int64_t j = 0; j < cb; ++j) b->grad[r * cb + j] += g[ca + j];
                     }
                   },
                   "concat_last");
}

TensorPtr reshape(const TensorPtr& a, Shape shape) {
  if (numel(shape) != a->size()) shape_error("reshape", a->shape, shape);
  std::vector<double> out = a->data;
  return make_node(std::move(shape), std::move(out), {a},
                   [a](Tensor& self) { accumulate(a, self.grad); }, "reshape");
}

TensorPtr gather_rows(const TensorPtr& a, std::vector<int64_t> idx) {
  if (a->rank() != 2) shape_error("gather_rows", a->shape, {static_cast<int64_t>(idx.size())});
  const int64_t c = a->shape[1], n = a->shape[0];
  const int64_t m = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(m * c), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const int64_t r = idx[i];
    if (r < 0) continue;
    if (r >= n) throw std::invalid_argument("gather_rows: index out of range");
    std::memcpy(out.data() + i * c, a->data.data() + r * c, c * sizeof(double));
  }
  auto idx_ptr = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_node({m, c}, std::move(out), {a},
                   [a, idx_ptr, c](Tensor& self) {
                     a->ensure_grad();
                     for (size_t i = 0; i < idx_ptr->size(); ++i) {
                       const int64_t r = (*idx_ptr)[i];
                       if (r < 0) continue;
                       const double* g = self.grad.data() + i * c;
                       double* ga = a->grad.data() + r * c;
                       for (int64_t j = 0; j < c; ++j) ga[j] += g[j];
                     }
                   },
                   "gather_rows");
}

TensorPtr scatter_rows(const TensorPtr& a, std::vector<int64_t> idx, int64_t out_rows) {
  if (a->rank() != 2 || a->shape[0] != static_cast<int64_t>(idx.size()))
    shape_error("scatter_rows", a->shape, {static_cast<int64_t>(idx.size())});
  const int64_t c = a->shape[1];
  std::vector<double> out(static_cast<size_t>(out_rows * c), 0.0);
  for (size_t i = 0; i < idx.size(); ++i) {
    const int64_t r = idx[i];
    if (r < 0) continue;
    if (r >= out_rows) throw std::invalid_argument("scatter_rows: index out of range");
    const double* src = a->data.data() + i * c;
    double* dst = out.data() + r * c;
    for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
  }
  auto idx_ptr = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_node({out_rows, c}, std::move(out), {a},
                   [a, idx_ptr, c](Tensor& self) {
                     a->ensure_grad();
                     for (size_t i = 0; i < idx_ptr->size(); ++i) {
                       const int64_t r = (*idx_ptr)[i];
                       if (r < 0) continue;
                       const double* g = self.grad.data() + r * c;
                       double* ga = a->grad.data() + i * c;
                       for (int64_t j = 0; j < c; ++j) ga[j] += g[j];
                     }
                   },
                   "scatter_rows");
}

TensorPtr bilinear_gather(const TensorPtr& grid, std::vector<int64_t> idx4, std::vector<double> w4) {
  if (grid->rank() != 3) shape_error("bilinear_gather", grid->shape, {});
  if (idx4.size() != w4.size() || idx4.size() % 4 != 0)
    throw std::invalid_argument("bilinear_gather: idx/weight lengths must match and be multiples of 4");
  const int64_t c = grid->shape[2];
  const int64_t cells = grid->shape[0] * grid->shape[1];
  const int64_t m = static_cast<int64_t>(idx4.size() / 4);
  std::vector<double> out(static_cast<size_t>(m * c), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    double* dst = out.data() + i * c;
    for (int t = 0; t < 4; ++t) {
      const int64_t p = idx4[i * 4 + t];
      const double w = w4[i * 4 + t];
      if (p < 0 || w == 0.0) continue;
      if (p >= cells) throw std::invalid_argument("bilinear_gather: index out of range");
      const double* src = grid->data.data() + p * c;
      for (int64_t j = 0; j < c; ++j) dst[j] += w * src[j];
    }
  }
  auto ip = std::make_shared<std::vector<int64_t>>(std::move(idx4));
  auto wp = std::make_shared<std::vector<double>>(std::move(w4));
  return make_node({m, c}, std::move(out), {grid},
                   [grid, ip, wp, c](Tensor& self) {
                     grid->ensure_grad();
                     const int64_t m2 = static_cast<int64_t>(ip->size() / 4);
                     for (int64_t i = 0; i < m2; ++i) {
                       const double* g = self.grad.data() + i * c;
                       for (int t = 0; t < 4; ++t) {
                         const int64_t p = (*ip)[i * 4 + t];
                         const double w = (*wp)[i * 4 + t];
                         if (p < 0 || w == 0.0) continue;
                         double* gg = grid->grad.data() + p * c;
                         for (int64_t j = 0; j < c; ++j) gg[j] += w * g[j];
                       }
                     }
                   },
                   "bilinear_gather");
}

// ---- convolution ---------------------------------------------------------------

namespace {

struct ConvDims {
  int64_t h, w, ci, co, kh, kw, ho, wo;
  int stride, pad;
};

void im2col(const std::vector<double>& x, const ConvDims& d, std::vector<double>& cols) {
  const int64_t patch = d.ci * d.kh * d.kw;
  cols.assign(static_cast<size_t>(d.ho * d.wo * patch), 0.0);
  for (int64_t oy = 0; oy < d.ho; ++oy)
    for (int64_t ox = 0; ox < d.wo; ++ox) {
      double* dst = cols.data() + (oy * d.wo + ox) * patch;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t iy = oy * d.stride + ky - d.pad;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t ix = ox * d.stride + kx - d.pad;
          if (ix < 0 || ix >= d.w) continue;
          std::memcpy(dst + (ky * d.kw + kx) * d.ci, x.data() + (iy * d.w + ix) * d.ci,
                      d.ci * sizeof(double));
        }
      }
    }
}

void col2im_add(const std::vector<double>& cols, const ConvDims& d, std::vector<double>& gx) {
  const int64_t patch = d.ci * d.kh * d.kw;
  for (int64_t oy = 0; oy < d.ho; ++oy)
    for (int64_t ox = 0; ox < d.wo; ++ox) {
      const double* src = cols.data() + (oy * d.wo + ox) * patch;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t iy = oy * d.stride + ky - d.pad;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t ix = ox * d.stride + kx - d.pad;
          if (ix < 0 || ix >= d.w) continue;
          const double* s = src + (ky * d.kw + kx) * d.ci;
          double* t = gx.data() + (iy * d.w + ix) * d.ci;
          for (int64_t cidx = 0; cidx < d.ci; ++cidx) t[cidx] += s[cidx];
        }
      }
    }
}

}  // namespace

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias, int kh, int kw,
                 int stride, int pad) {
  if (x->rank() != 3 || w->rank() != 2) shape_error("conv2d", x->shape, w->shape);
  ConvDims d;
  d.h = x->shape[0];
  d.w = x->shape[1];
  d.ci = x->shape[2];
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.co = w->shape[1];
  if (w->shape[0] != d.ci * kh * kw) shape_error("conv2d", x->shape, w->shape);
  if (bias && (bias->rank() != 1 || bias->shape[0] != d.co)) shape_error("conv2d", x->shape, bias->shape);
  d.ho = (d.h + 2 * pad - kh) / stride + 1;
  d.wo = (d.w + 2 * pad - kw) / stride + 1;

  const int64_t patch = d.ci * kh * kw;
  auto cols = std::make_shared<std::vector<double>>();
  im2col(x->data, d, *cols);
  std::vector<double> out(static_cast<size_t>(d.ho * d.wo * d.co));
  MMap(out.data(), d.ho * d.wo, d.co).noalias() =
      CMap(cols->data(), d.ho * d.wo, patch) * CMap(w->data.data(), patch, d.co);
  if (bias)
    for (int64_t r = 0; r < d.ho * d.wo; ++r)
      for (int64_t j = 0; j < d.co; ++j) out[r * d.co + j] += bias->data[j];

  std::vector<TensorPtr> parents = bias ? std::vector<TensorPtr>{x, w, bias} : std::vector<TensorPtr>{x, w};
  return make_node({d.ho, d.wo, d.co}, std::move(out), std::move(parents),
                   [x, w, bias, d, cols, patch](Tensor& self) {
                     CMap g(self.grad.data(), d.ho * d.wo, d.co);
                     w->ensure_grad();
                     MMap(w->grad.data(), patch, d.co).noalias() +=
                         CMap(cols->data(), d.ho * d.wo, patch).transpose() * g;
                     if (bias) {
                       bias->ensure_grad();
                       for (int64_t r = 0; r < d.ho * d.wo; ++r)
                         for (int64_t j = 0; j < d.co; ++j) bias->grad[j] += self.grad[r * d.co + j];
                     }
                     x->ensure_grad();
                     std::vector<double> gcols(static_cast<size_t>(d.ho * d.wo * patch));
                     MMap(gcols.data(), d.ho * d.wo, patch).noalias() =
                         g * CMap(w->data.data(), patch, d.co).transpose();
                     col2im_add(gcols, d, x->grad);
                   },
                   "conv2d");
}

std::vector<size_t> canonical_order(const std::vector<TensorPtr>& tensors) {
  std::vector<size_t> order(tensors.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::lexicographical_compare(tensors[a]->data.begin(), tensors[a]->data.end(),
                                        tensors[b]->data.begin(), tensors[b]->data.end());
  });
  return order;
}

TensorPtr add_many_canonical(std::vector<TensorPtr> terms) {
  if (terms.empty()) throw std::invalid_argument("add_many_canonical: empty term list");
  for (const auto& t : terms)
    if (t->shape != terms[0]->shape) shape_error("add_many_canonical", terms[0]->shape, t->shape);
  const auto order = canonical_order(terms);
  TensorPtr acc = terms[order[0]];
  for (size_t i = 1; i < order.size(); ++i) acc = add(acc, terms[order[i]]);
  return acc;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty part list");
  const int64_t c = parts[0]->rank() == 2 ? parts[0]->shape[1] : -1;
  int64_t rows = 0;
  for (const auto& p : parts) {
    if (p->rank() != 2 || p->shape[1] != c) shape_error("concat_rows", parts[0]->shape, p->shape);
    rows += p->shape[0];
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows * c));
  for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
  auto parts_copy = parts;
  return make_node({rows, c}, std::move(out), parts,
                   [parts_copy](Tensor& self) {
                     size_t offset = 0;
                     for (const auto& p : parts_copy) {
                       p->ensure_grad();
                       for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[offset + i];
                       offset += p->grad.size();
                     }
                   },
                   "concat_rows");
}

void tune_allocator_for_tensors() {
  static const bool done = [] {
#ifdef M_MMAP_THRESHOLD
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
    return true;
  }();
  (void)done;
}

std::vector<double> finite_difference_grad(const std::function<double(const std::vector<double>&)>& f,
                                           const std::vector<double>& x, double h) {
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ---- parameters & optimizer -----------------------------------------------------

TensorPtr ParamStore::add_param(const std::string& name, TensorPtr t) {
  if (find(name)) throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
  t->requires_grad = true;
  names_.push_back(name);
  tensors_.push_back(t);
  return t;
}

TensorPtr ParamStore::create(const std::string& name, Shape shape, int64_t fan_in, Rng& rng) {
  auto t = zeros(std::move(shape));
  const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t->data) v = rng.uniform(-s, s);
  return add_param(name, t);
}

TensorPtr ParamStore::create_zeros(const std::string& name, Shape shape) {
  return add_param(name, zeros(std::move(shape)));
}

TensorPtr ParamStore::find(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  return nullptr;
}

void ParamStore::zero_grads() {
  for (auto& t : tensors_) {
    t->ensure_grad();
    t->zero_grad();
  }
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_)
    for (double g : t->grad) s += g * g;
  return std::sqrt(s);
}

void Adam::bind(const ParamStore& store) {
  m_.clear();
  v_.clear();
  for (const auto& t : store.tensors()) {
    m_.emplace_back(t->data.size(), 0.0);
    v_.emplace_back(t->data.size(), 0.0);
  }
  t_ = 0;
}

void Adam::step(ParamStore& store, double clip_norm) {
  if (m_.size() != store.count()) throw std::invalid_argument("Adam: optimizer not bound to this store");
  double scale = 1.0;
  if (clip_norm > 0.0) {
    const double n = store.grad_norm();
    if (n > clip_norm) scale = clip_norm / n;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t p = 0; p < store.count(); ++p) {
    Tensor& t = *store.tensors()[p];
    t.ensure_grad();
    if (t.grad.size() != t.data.size())
      throw std::invalid_argument("Adam: grad/param shape mismatch for parameter " + store.names()[p]);
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < t.data.size(); ++i) {
      const double g = t.grad[i] * scale;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      t.data[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

}  // namespace colf
