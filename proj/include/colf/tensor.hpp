#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "colf/rng.hpp"

namespace colf {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;
using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major f64 tensor. Doubles throughout: desk-scale sizes make the
// precision affordable and it tightens gradient-check tolerances.
//
// A tensor is either a leaf (parameter or constant) or the output of an
// operation recorded on the active Tape. `backprop`, when set, reads
// this->grad and accumulates into the parents' grads.
class Tensor : public std::enable_shared_from_this<Tensor> {
 public:
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation

  // Graph linkage (empty for leaves).
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backprop;
  const char* op_name = nullptr;

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  bool is_scalar() const { return size() == 1; }
  double scalar() const;

  void ensure_grad();  // allocates + zeros grad if absent
  void zero_grad();
};

TensorPtr constant(Shape shape, std::vector<double> data);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar_tensor(double value);

// The recorded computation graph: an ordered sequence of operation records
// in topological order (inputs always precede their consumers).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const TensorPtr& node) { nodes_.push_back(node); }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Reverse-mode sweep from a scalar loss. Every reachable recorded node is
  // visited exactly once, in reverse topological order. Gradients accumulate
  // into `grad` of every requires_grad tensor reachable from `loss`.
  void backward(const TensorPtr& loss);

  static Tape* active();

 private:
  std::vector<TensorPtr> nodes_;
  Tape* previous_ = nullptr;
};

// Generic node constructor for fused domain ops (compositing, normalizers).
// `data` must already hold the forward value.
TensorPtr make_node(Shape shape, std::vector<double> data, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backprop, const char* op_name);

// ---- elementwise & structural ops -----------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr add_bias(const TensorPtr& a, const TensorPtr& bias);  // bias over last dim
TensorPtr add_scalar(const TensorPtr& a, double s);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr neg(const TensorPtr& a);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul_scalar(const TensorPtr& a, double s);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
// matmul with the bias row folded into the same node (bias may be null).
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias);
TensorPtr bmm(const TensorPtr& a, const TensorPtr& b);     // (B,m,k)x(B,k,n)
TensorPtr bmm_nt(const TensorPtr& a, const TensorPtr& b);  // (B,m,k)x(B,n,k)^T

// exp input is clamped to <= 700 so the result stays finite.
TensorPtr exp_(const TensorPtr& a);
// log input is clamped to >= floor (default 1e-12); the clamp keeps the op
// total on finite inputs at the cost of a zero gradient below the floor.
TensorPtr log_(const TensorPtr& a, double floor = 1e-12);
TensorPtr relu(const TensorPtr& a);
TensorPtr elu(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr softplus(const TensorPtr& a);
TensorPtr abs_(const TensorPtr& a);

// Softmax over the last axis; the row max is subtracted before
// exponentiation. Rows sum to 1 within 1e-9.
TensorPtr softmax_last(const TensorPtr& a);
// Masked variant: mask is 0/1, either same shape as `a` or matching `a` with
// the second-to-last axis dropped (broadcast over queries). Masked-out
// entries get exactly zero weight; a row must keep at least one valid entry.
TensorPtr masked_softmax_last(const TensorPtr& a, const TensorPtr& mask);

TensorPtr sum_all(const TensorPtr& a);
TensorPtr sum_axis(const TensorPtr& a, int axis);
TensorPtr mean_axis(const TensorPtr& a, int axis);
TensorPtr concat_last(const TensorPtr& a, const TensorPtr& b);
// Stacks rank-2 tensors with equal column counts along the first axis.
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr reshape(const TensorPtr& a, Shape shape);

// Row gather/scatter over the first axis of a rank-2 tensor. Index -1 reads
// a zero row (gather) or drops the row (scatter).
TensorPtr gather_rows(const TensorPtr& a, std::vector<int64_t> idx);
TensorPtr scatter_rows(const TensorPtr& a, std::vector<int64_t> idx, int64_t out_rows);

// Differentiable 4-neighbor lookup into a (H,W,C) grid: row m blends the 4
// flat positions idx4[m] with weights w4[m]. Gradients scatter-add into the
// grid; the fixed indices/weights carry no gradient.
TensorPtr bilinear_gather(const TensorPtr& grid, std::vector<int64_t> idx4,
                          std::vector<double> w4);

// 3x3/1x1 convolution over an (H,W,Cin) tensor, zero padding. Weights are
// stored pre-flattened as (Cin*kh*kw, Cout) so the forward pass is one
// im2col + matmul.
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias, int kh, int kw,
                 int stride, int pad);

// Sums tensors in an order fixed by their contents (lexicographic on the
// value bytes), so the result is bit-identical under any permutation of the
// inputs. Used wherever an exact permutation-invariance contract exists.
TensorPtr add_many_canonical(std::vector<TensorPtr> terms);

// Content-lexicographic ordering of tensors (the order add_many_canonical
// uses), exposed for callers that stack views and need the same guarantee.
std::vector<size_t> canonical_order(const std::vector<TensorPtr>& tensors);

// Raises the allocator's mmap threshold so the multi-megabyte tensor buffers
// churned by training steps stay on the free list instead of round-tripping
// through mmap page faults. Process-global, idempotent.
void tune_allocator_for_tensors();

// ---- verification oracle ---------------------------------------------------

// Central-difference gradient estimate, (f(x+h e_i) - f(x-h e_i)) / (2h) per
// coordinate. Independent of the reverse-mode path by construction.
std::vector<double> finite_difference_grad(const std::function<double(const std::vector<double>&)>& f,
                                           const std::vector<double>& x, double h);

// ---- parameters & optimizer ------------------------------------------------

class ParamStore {
 public:
  // Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)]; zero bias variant.
  TensorPtr create(const std::string& name, Shape shape, int64_t fan_in, Rng& rng);
  TensorPtr create_zeros(const std::string& name, Shape shape);
  TensorPtr find(const std::string& name) const;

  size_t count() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<TensorPtr>& tensors() const { return tensors_; }

  void zero_grads();
  double grad_norm() const;

 private:
  TensorPtr add_param(const std::string& name, TensorPtr t);
  std::vector<std::string> names_;
  std::vector<TensorPtr> tensors_;
};

// Adam with bias correction; the paper-facing knob is the learning rate, the
// betas/eps are the standard defaults.
class Adam {
 public:
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void bind(const ParamStore& store);
  // Applies one update from the accumulated grads. `clip_norm` <= 0 disables
  // clipping; otherwise grads are rescaled when the global norm exceeds it.
  void step(ParamStore& store, double clip_norm = 0.0);

  int64_t step_count() const { return t_; }
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  const std::vector<std::vector<double>>& moments_m() const { return m_; }
  const std::vector<std::vector<double>>& moments_v() const { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace colf
