#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace bvo {

class Tape;

// Lightweight handle into a Tape. Valid only while the owning tape lives.
// Values are always 64-bit floats; rank 0 (scalar), 1 (vector) or 2 (matrix).
class Tensor {
 public:
  Tensor() = default;

  const std::vector<int>& shape() const;
  size_t size() const;
  int rows() const;  // rank-2 only
  int cols() const;
  bool requires_grad() const;

  std::span<const double> data() const;
  std::span<const double> grad() const;  // zeros until backward touches it
  double value() const;                  // scalar tensors only

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records forward operations and replays their adjoints in reverse. Nodes
// whose inputs are all constants record nothing, so inference-only graphs
// cost no bookkeeping. Evaluation order is fixed by construction order;
// repeated backward passes over the same graph accumulate identically.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaf construction -------------------------------------------------
  Tensor variable(std::vector<double> data, std::vector<int> shape);  // tracked
  Tensor constant(std::vector<double> data, std::vector<int> shape);
  Tensor constant(std::span<const double> data, std::vector<int> shape);
  Tensor scalar(double v);  // constant scalar

  // ---- elementwise -------------------------------------------------------
  // Binary ops accept equal shapes, or a scalar on either side.
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor neg(Tensor a);
  Tensor exp(Tensor a);
  Tensor log(Tensor a);       // domain error if any element < clamp floor
  Tensor sigmoid(Tensor a);
  Tensor tanh(Tensor a);
  Tensor relu(Tensor a);
  Tensor square(Tensor a);
  Tensor scale(Tensor a, double c);
  Tensor add_scalar(Tensor a, double c);

  // ---- linear algebra ----------------------------------------------------
  Tensor matmul(Tensor a, Tensor b);
  // y = x*w + b with b broadcast across rows. x: [n,d], w: [d,h], b: [h].
  Tensor affine(Tensor x, Tensor w, Tensor b);

  // ---- reductions ----------------------------------------------------------
  // axis -1 reduces everything to a scalar; axis 0/1 reduce rank-2 rows/cols.
  Tensor sum(Tensor a, int axis = -1);
  Tensor mean(Tensor a, int axis = -1);
  Tensor logsumexp(Tensor a, int axis = -1);

  // ---- fused model ops -----------------------------------------------------
  // z = mean + exp(log_var/2) * eps, eps held fixed (not differentiated).
  Tensor gaussian_reparam(Tensor mean, Tensor log_var, Tensor eps);
  // Row sums of x*l - softplus(l); numerically safe for any logit magnitude.
  // x must be constant data in [0,1]. Returns rank-1 [n].
  Tensor bernoulli_logit_ll(Tensor logits, Tensor x);
  // Row sums of log N(z_j; mean_j, exp(log_var_j)). Returns rank-1 [n].
  Tensor gaussian_diag_ll(Tensor z, Tensor mean, Tensor log_var);
  // Row sums of 0.5*(exp(lv) + mean^2 - 1 - lv): KL(q || N(0,I)). Rank-1 [n].
  Tensor kl_std_normal(Tensor mean, Tensor log_var);
  // Rows of logsumexp(logits) - logits[label]. labels given out-of-band.
  Tensor cross_entropy_logits(Tensor logits, const std::vector<int>& labels);

  // ---- gradient pass -------------------------------------------------------
  void backward(Tensor out);  // out must be scalar
  void zero_grad();

  size_t node_count() const { return nodes_.size(); }
  size_t op_count() const { return records_.size(); }

  // Throws Err::Numeric naming `what` if any element of t is non-finite.
  void check_finite(Tensor t, const std::string& what) const;

 private:
  friend class Tensor;

  struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized iff requires_grad
    bool requires_grad = false;
  };

  struct Record {
    int out;
    std::function<void()> adjoint;
  };

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  int new_node(std::vector<double> value, std::vector<int> shape, bool requires_grad);
  Tensor unary(Tensor a, const char* name, void (*fwd)(const double*, double*, size_t),
               std::function<void()> (Tape::*mk)(int, int));

  void record(int out, std::function<void()> adjoint);
  static void check_same_shape(const Node& a, const Node& b, const char* op);

  // deque: growth must not invalidate references held across new_node calls
  std::deque<Node> nodes_;
  std::vector<Record> records_;
};

// Elementwise log floor: arguments below this are clamped before log; truly
// negative arguments are a domain error, not a clamp.
inline constexpr double kLogFloor = 1e-12;

double stable_softplus(double x);
double stable_sigmoid(double x);

}  // namespace bvo
