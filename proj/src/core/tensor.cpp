#include "core/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace bvo {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using MapM = Eigen::Map<EMat>;

constexpr double kLn2Pi = 1.8378770664093454835606594728112;

size_t shape_size(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

enum class Bcast { Equal, AScalar, BScalar };

}  // namespace

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// ---- Tensor accessors ------------------------------------------------------

const std::vector<int>& Tensor::shape() const { return tape_->node(id_).shape; }
size_t Tensor::size() const { return tape_->node(id_).value.size(); }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }
std::span<const double> Tensor::data() const { return tape_->node(id_).value; }

std::span<const double> Tensor::grad() const {
  const auto& n = tape_->node(id_);
  if (!n.requires_grad)
    fail(Err::InvalidArgument, "grad() on a tensor that does not require gradients");
  return n.grad;
}

double Tensor::value() const {
  const auto& n = tape_->node(id_);
  if (n.value.size() != 1)
    fail(Err::InvalidArgument, "value() requires a scalar, got shape " + shape_str(n.shape));
  return n.value[0];
}

int Tensor::rows() const {
  const auto& s = shape();
  if (s.size() != 2) fail(Err::Dimension, "rows() on tensor of shape " + shape_str(s));
  return s[0];
}

int Tensor::cols() const {
  const auto& s = shape();
  if (s.size() != 2) fail(Err::Dimension, "cols() on tensor of shape " + shape_str(s));
  return s[1];
}

// ---- Tape internals --------------------------------------------------------

namespace {
thread_local std::vector<std::vector<double>>* g_scratch = nullptr;
}

int Tape::new_node(std::vector<double> value, std::vector<int> shape, bool requires_grad) {
  for (int d : shape)
    if (d < 0) fail(Err::Dimension, "negative dimension in shape " + shape_str(shape));
  if (value.size() != shape_size(shape))
    fail(Err::Dimension, "data length " + std::to_string(value.size()) +
                             " does not match shape " + shape_str(shape));
  if (shape.size() > 2)
    fail(Err::Dimension, "rank > 2 unsupported: shape " + shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad.assign(n.value.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

void Tape::record(int out, std::function<void()> adjoint) {
  records_.push_back({out, std::move(adjoint)});
}

void Tape::check_same_shape(const Node& a, const Node& b, const char* op) {
  if (a.shape != b.shape)
    fail(Err::Dimension, std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
}

namespace {
std::vector<double>& gbuf_for(std::vector<std::vector<double>>& scratch, int id, size_t need) {
  auto& g = scratch[static_cast<size_t>(id)];
  if (g.size() != need) g.assign(need, 0.0);
  return g;
}
}  // namespace

// Scratch gradient buffer for the running backward pass.
#define GBUF(id) gbuf_for(*g_scratch, (id), node(id).value.size())

Tensor Tape::variable(std::vector<double> data, std::vector<int> shape) {
  for (double v : data)
    if (!std::isfinite(v))
      fail(Err::Numeric, "variable holds non-finite value " + fmt_g(v));
  return Tensor(this, new_node(std::move(data), std::move(shape), true));
}

Tensor Tape::constant(std::vector<double> data, std::vector<int> shape) {
  for (double v : data)
    if (!std::isfinite(v))
      fail(Err::Numeric, "constant holds non-finite value " + fmt_g(v));
  return Tensor(this, new_node(std::move(data), std::move(shape), false));
}

Tensor Tape::constant(std::span<const double> data, std::vector<int> shape) {
  return constant(std::vector<double>(data.begin(), data.end()), std::move(shape));
}

Tensor Tape::scalar(double v) { return constant(std::vector<double>{v}, {}); }

void Tape::check_finite(Tensor t, const std::string& what) const {
  const auto& v = node(t.id()).value;
  for (size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      fail(Err::Numeric, what + ": non-finite value " + fmt_g(v[i]) + " at flat index " +
                             std::to_string(i));
}

void Tape::backward(Tensor out) {
  if (out.tape() != this) fail(Err::InvalidArgument, "backward: tensor from another tape");
  const Node& o = node(out.id());
  if (o.value.size() != 1)
    fail(Err::InvalidArgument,
         "backward requires a scalar output, got shape " + shape_str(o.shape));
  std::vector<std::vector<double>> scratch(nodes_.size());
  g_scratch = &scratch;
  gbuf_for(scratch, out.id(), 1)[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->adjoint();
  g_scratch = nullptr;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    if (!n.requires_grad || scratch[i].empty()) continue;
    for (size_t j = 0; j < n.grad.size(); ++j) n.grad[j] += scratch[i][j];
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_)
    if (n.requires_grad) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

// ---- elementwise binary ----------------------------------------------------

namespace {
Bcast bcast_kind(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
  if (a == b) return Bcast::Equal;
  if (shape_size(b) == 1) return Bcast::BScalar;
  if (shape_size(a) == 1) return Bcast::AScalar;
  fail(Err::Dimension, std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " +
                           shape_str(b) + " (equal shapes or a scalar operand required)");
}
}  // namespace

Tensor Tape::add(Tensor a, Tensor b) {
  const Node &na = node(a.id()), &nb = node(b.id());
  Bcast k = bcast_kind(na.shape, nb.shape, "add");
  const auto& big = (k == Bcast::AScalar) ? nb : na;
  std::vector<double> y(big.value.size());
  for (size_t i = 0; i < y.size(); ++i) {
    double av = (k == Bcast::AScalar) ? na.value[0] : na.value[i];
    double bv = (k == Bcast::BScalar) ? nb.value[0] : nb.value[i];
    y[i] = av + bv;
  }
  bool rg = na.requires_grad || nb.requires_grad;
  Tensor out(this, new_node(std::move(y), big.shape, rg));
  if (rg) {
    int ia = a.id(), ib = b.id(), io = out.id();
    record(io, [this, ia, ib, io, k] {
      const auto& g = GBUF(io);
      if (node(ia).requires_grad) {
        auto& ga = GBUF(ia);
        if (k == Bcast::AScalar)
          for (double v : g) ga[0] += v;
        else
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (node(ib).requires_grad) {
        auto& gb = GBUF(ib);
        if (k == Bcast::BScalar)
          for (double v : g) gb[0] += v;
        else
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::sub(Tensor a, Tensor b) {
  const Node &na = node(a.id()), &nb = node(b.id());
  Bcast k = bcast_kind(na.shape, nb.shape, "sub");
  const auto& big = (k == Bcast::AScalar) ? nb : na;
  std::vector<double> y(big.value.size());
  for (size_t i = 0; i < y.size(); ++i) {
    double av = (k == Bcast::AScalar) ? na.value[0] : na.value[i];
    double bv = (k == Bcast::BScalar) ? nb.value[0] : nb.value[i];
    y[i] = av - bv;
  }
  bool rg = na.requires_grad || nb.requires_grad;
  Tensor out(this, new_node(std::move(y), big.shape, rg));
  if (rg) {
    int ia = a.id(), ib = b.id(), io = out.id();
    record(io, [this, ia, ib, io, k] {
      const auto& g = GBUF(io);
      if (node(ia).requires_grad) {
        auto& ga = GBUF(ia);
        if (k == Bcast::AScalar)
          for (double v : g) ga[0] += v;
        else
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (node(ib).requires_grad) {
        auto& gb = GBUF(ib);
        if (k == Bcast::BScalar)
          for (double v : g) gb[0] -= v;
        else
          for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor Tape::mul(Tensor a, Tensor b) {
  const Node &na = node(a.id()), &nb = node(b.id());
  Bcast k = bcast_kind(na.shape, nb.shape, "mul");
  const auto& big = (k == Bcast::AScalar) ? nb : na;
  std::vector<double> y(big.value.size());
  for (size_t i = 0; i < y.size(); ++i) {
    double av = (k == Bcast::AScalar) ? na.value[0] : na.value[i];
    double bv = (k == Bcast::BScalar) ? nb.value[0] : nb.value[i];
    y[i] = av * bv;
  }
  bool rg = na.requires_grad || nb.requires_grad;
  Tensor out(this, new_node(std::move(y), big.shape, rg));
  if (rg) {
    int ia = a.id(), ib = b.id(), io = out.id();
    record(io, [this, ia, ib, io, k] {
      const auto& g = GBUF(io);
      const auto& av = node(ia).value;
      const auto& bv = node(ib).value;
      if (node(ia).requires_grad) {
        auto& ga = GBUF(ia);
        for (size_t i = 0; i < g.size(); ++i) {
          double bb = (k == Bcast::BScalar) ? bv[0] : bv[i];
          if (k == Bcast::AScalar)
            ga[0] += g[i] * bb;
          else
            ga[i] += g[i] * bb;
        }
      }
      if (node(ib).requires_grad) {
        auto& gb = GBUF(ib);
        for (size_t i = 0; i < g.size(); ++i) {
          double aa = (k == Bcast::AScalar) ? av[0] : av[i];
          if (k == Bcast::BScalar)
            gb[0] += g[i] * aa;
          else
            gb[i] += g[i] * aa;
        }
      }
    });
  }
  return out;
}

// ---- elementwise unary -----------------------------------------------------

Tensor Tape::neg(Tensor a) { return scale(a, -1.0); }

Tensor Tape::scale(Tensor a, double c) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = na.value[i] * c;
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io, c] {
      const auto& g = GBUF(io);
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor Tape::add_scalar(Tensor a, double c) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = na.value[i] + c;
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io] {
      const auto& g = GBUF(io);
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::exp(Tensor a) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = std::exp(na.value[i]);
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io] {
      const auto& g = GBUF(io);
      const auto& yv = node(io).value;
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
    });
  }
  return out;
}

Tensor Tape::log(Tensor a) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) {
    double v = na.value[i];
    if (v < 0.0)
      fail(Err::Domain,
           "log of negative value " + fmt_g(v) + " at flat index " + std::to_string(i));
    y[i] = std::log(std::max(v, kLogFloor));
  }
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io] {
      const auto& g = GBUF(io);
      const auto& xv = node(ia).value;
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / std::max(xv[i], kLogFloor);
    });
  }
  return out;
}

Tensor Tape::sigmoid(Tensor a) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(na.value[i]);
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io] {
      const auto& g = GBUF(io);
      const auto& yv = node(io).value;
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return out;
}

Tensor Tape::tanh(Tensor a) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(na.value[i]);
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io] {
      const auto& g = GBUF(io);
      const auto& yv = node(io).value;
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
    });
  }
  return out;
}

Tensor Tape::relu(Tensor a) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = na.value[i] > 0.0 ? na.value[i] : 0.0;
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io] {
      const auto& g = GBUF(io);
      const auto& xv = node(ia).value;
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) ga[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::square(Tensor a) {
  const Node& na = node(a.id());
  std::vector<double> y(na.value.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = na.value[i] * na.value[i];
  Tensor out(this, new_node(std::move(y), na.shape, na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    record(io, [this, ia, io] {
      const auto& g = GBUF(io);
      const auto& xv = node(ia).value;
      auto& ga = GBUF(ia);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * xv[i];
    });
  }
  return out;
}

// ---- linear algebra ----------------------------------------------------------

Tensor Tape::matmul(Tensor a, Tensor b) {
  const Node &na = node(a.id()), &nb = node(b.id());
  if (na.shape.size() != 2 || nb.shape.size() != 2)
    fail(Err::Dimension, "matmul requires rank-2 operands, got " + shape_str(na.shape) +
                             " and " + shape_str(nb.shape));
  if (na.shape[1] != nb.shape[0])
    fail(Err::Dimension, "matmul: inner dimensions disagree, " + shape_str(na.shape) + " x " +
                             shape_str(nb.shape));
  const int m = na.shape[0], k = na.shape[1], n = nb.shape[1];
  std::vector<double> y(static_cast<size_t>(m) * n);
  {
    MapC A(na.value.data(), m, k), B(nb.value.data(), k, n);
    MapM Y(y.data(), m, n);
    Y.noalias() = A * B;
  }
  bool rg = na.requires_grad || nb.requires_grad;
  Tensor out(this, new_node(std::move(y), {m, n}, rg));
  if (rg) {
    int ia = a.id(), ib = b.id(), io = out.id();
    record(io, [this, ia, ib, io, m, k, n] {
      MapC G(GBUF(io).data(), m, n);
      if (node(ia).requires_grad) {
        MapC B(node(ib).value.data(), k, n);
        MapM GA(GBUF(ia).data(), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (node(ib).requires_grad) {
        MapC A(node(ia).value.data(), m, k);
        MapM GB(GBUF(ib).data(), k, n);
        GB.noalias() += A.transpose() * G;
      }
    });
  }
  return out;
}

Tensor Tape::affine(Tensor x, Tensor w, Tensor b) {
  const Node &nx = node(x.id()), &nw = node(w.id()), &nb = node(b.id());
  if (nx.shape.size() != 2 || nw.shape.size() != 2 || nb.shape.size() != 1)
    fail(Err::Dimension, "affine expects x:[n,d] w:[d,h] b:[h], got " + shape_str(nx.shape) +
                             " " + shape_str(nw.shape) + " " + shape_str(nb.shape));
  if (nx.shape[1] != nw.shape[0] || nw.shape[1] != nb.shape[0])
    fail(Err::Dimension, "affine: dimensions disagree, " + shape_str(nx.shape) + " x " +
                             shape_str(nw.shape) + " + " + shape_str(nb.shape));
  const int n = nx.shape[0], d = nx.shape[1], h = nw.shape[1];
  std::vector<double> y(static_cast<size_t>(n) * h);
  {
    MapC X(nx.value.data(), n, d), W(nw.value.data(), d, h);
    MapM Y(y.data(), n, h);
    Y.noalias() = X * W;
    Eigen::Map<const Eigen::RowVectorXd> B(nb.value.data(), h);
    Y.rowwise() += B;
  }
  bool rg = nx.requires_grad || nw.requires_grad || nb.requires_grad;
  Tensor out(this, new_node(std::move(y), {n, h}, rg));
  if (rg) {
    int ix = x.id(), iw = w.id(), ib = b.id(), io = out.id();
    record(io, [this, ix, iw, ib, io, n, d, h] {
      MapC G(GBUF(io).data(), n, h);
      if (node(ix).requires_grad) {
        MapC W(node(iw).value.data(), d, h);
        MapM GX(GBUF(ix).data(), n, d);
        GX.noalias() += G * W.transpose();
      }
      if (node(iw).requires_grad) {
        MapC X(node(ix).value.data(), n, d);
        MapM GW(GBUF(iw).data(), d, h);
        GW.noalias() += X.transpose() * G;
      }
      if (node(ib).requires_grad) {
        Eigen::Map<Eigen::RowVectorXd> GB(GBUF(ib).data(), h);
        GB += G.colwise().sum();
      }
    });
  }
  return out;
}

// ---- reductions --------------------------------------------------------------

namespace {
void reduction_checks(const std::vector<int>& shape, int axis, const char* op) {
  if (axis == -1) {
    if (shape_size(shape) == 0) fail(Err::Domain, std::string(op) + " over an empty tensor");
    return;
  }
  if (shape.size() != 2)
    fail(Err::Dimension,
         std::string(op) + ": axis reduction requires rank 2, got " + shape_str(shape));
  if (axis != 0 && axis != 1)
    fail(Err::Dimension, std::string(op) + ": axis must be 0, 1 or -1, got " + std::to_string(axis));
  if (shape[axis] == 0) fail(Err::Domain, std::string(op) + " over an empty axis");
}
}  // namespace

Tensor Tape::sum(Tensor a, int axis) {
  const Node& na = node(a.id());
  reduction_checks(na.shape, axis, "sum");
  std::vector<double> y;
  std::vector<int> yshape;
  if (axis == -1) {
    double s = 0.0;
    for (double v : na.value) s += v;
    y = {s};
    yshape = {};
  } else {
    const int r = na.shape[0], c = na.shape[1];
    if (axis == 0) {
      y.assign(static_cast<size_t>(c), 0.0);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y[static_cast<size_t>(j)] += na.value[static_cast<size_t>(i) * c + j];
      yshape = {c};
    } else {
      y.assign(static_cast<size_t>(r), 0.0);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y[static_cast<size_t>(i)] += na.value[static_cast<size_t>(i) * c + j];
      yshape = {r};
    }
  }
  Tensor out(this, new_node(std::move(y), std::move(yshape), na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    const int r = na.shape.size() == 2 ? na.shape[0] : 0;
    const int c = na.shape.size() == 2 ? na.shape[1] : 0;
    record(io, [this, ia, io, axis, r, c] {
      const auto& g = GBUF(io);
      auto& ga = GBUF(ia);
      if (axis == -1) {
        for (auto& v : ga) v += g[0];
      } else if (axis == 0) {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j)];
      } else {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

Tensor Tape::mean(Tensor a, int axis) {
  const Node& na = node(a.id());
  reduction_checks(na.shape, axis, "mean");
  if (axis == -1) return scale(sum(a, -1), 1.0 / static_cast<double>(na.value.size()));
  const double inv = 1.0 / static_cast<double>(na.shape[axis]);
  return scale(sum(a, axis), inv);
}

Tensor Tape::logsumexp(Tensor a, int axis) {
  const Node& na = node(a.id());
  reduction_checks(na.shape, axis, "logsumexp");
  auto lse_range = [&](size_t base, size_t stride, size_t count) {
    double m = -std::numeric_limits<double>::infinity();
    for (size_t t = 0; t < count; ++t) m = std::max(m, na.value[base + t * stride]);
    double s = 0.0;
    for (size_t t = 0; t < count; ++t) s += std::exp(na.value[base + t * stride] - m);
    return m + std::log(s);
  };
  std::vector<double> y;
  std::vector<int> yshape;
  if (axis == -1) {
    y = {lse_range(0, 1, na.value.size())};
    yshape = {};
  } else {
    const size_t r = static_cast<size_t>(na.shape[0]), c = static_cast<size_t>(na.shape[1]);
    if (axis == 1) {
      y.resize(r);
      for (size_t i = 0; i < r; ++i) y[i] = lse_range(i * c, 1, c);
      yshape = {static_cast<int>(r)};
    } else {
      y.resize(c);
      for (size_t j = 0; j < c; ++j) y[j] = lse_range(j, c, r);
      yshape = {static_cast<int>(c)};
    }
  }
  Tensor out(this, new_node(std::move(y), std::move(yshape), na.requires_grad));
  if (na.requires_grad) {
    int ia = a.id(), io = out.id();
    const size_t r = na.shape.size() == 2 ? static_cast<size_t>(na.shape[0]) : 0;
    const size_t c = na.shape.size() == 2 ? static_cast<size_t>(na.shape[1]) : 0;
    record(io, [this, ia, io, axis, r, c] {
      const auto& g = GBUF(io);
      const auto& yv = node(io).value;
      const auto& xv = node(ia).value;
      auto& ga = GBUF(ia);
      if (axis == -1) {
        for (size_t i = 0; i < xv.size(); ++i) ga[i] += g[0] * std::exp(xv[i] - yv[0]);
      } else if (axis == 1) {
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * std::exp(xv[i * c + j] - yv[i]);
      } else {
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * std::exp(xv[i * c + j] - yv[j]);
      }
    });
  }
  return out;
}

// ---- fused model ops -----------------------------------------------------------

Tensor Tape::gaussian_reparam(Tensor mean, Tensor log_var, Tensor eps) {
  const Node &nm = node(mean.id()), &nv = node(log_var.id()), &ne = node(eps.id());
  check_same_shape(nm, nv, "gaussian_reparam");
  check_same_shape(nm, ne, "gaussian_reparam");
  if (ne.requires_grad)
    fail(Err::InvalidArgument, "gaussian_reparam: eps must be a constant draw");
  std::vector<double> y(nm.value.size());
  for (size_t i = 0; i < y.size(); ++i)
    y[i] = nm.value[i] + std::exp(0.5 * nv.value[i]) * ne.value[i];
  bool rg = nm.requires_grad || nv.requires_grad;
  Tensor out(this, new_node(std::move(y), nm.shape, rg));
  if (rg) {
    int im = mean.id(), iv = log_var.id(), ie = eps.id(), io = out.id();
    record(io, [this, im, iv, ie, io] {
      const auto& g = GBUF(io);
      if (node(im).requires_grad) {
        auto& gm = GBUF(im);
        for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
      }
      if (node(iv).requires_grad) {
        const auto& lv = node(iv).value;
        const auto& ev = node(ie).value;
        auto& gv = GBUF(iv);
        for (size_t i = 0; i < g.size(); ++i)
          gv[i] += g[i] * 0.5 * std::exp(0.5 * lv[i]) * ev[i];
      }
    });
  }
  return out;
}

Tensor Tape::bernoulli_logit_ll(Tensor logits, Tensor x) {
  const Node &nl = node(logits.id()), &nx = node(x.id());
  if (nl.shape.size() != 2)
    fail(Err::Dimension, "bernoulli_logit_ll expects rank-2 logits, got " + shape_str(nl.shape));
  check_same_shape(nl, nx, "bernoulli_logit_ll");
  if (nx.requires_grad)
    fail(Err::InvalidArgument, "bernoulli_logit_ll: targets must be constants");
  const size_t r = static_cast<size_t>(nl.shape[0]), c = static_cast<size_t>(nl.shape[1]);
  for (size_t i = 0; i < nx.value.size(); ++i) {
    double v = nx.value[i];
    if (v < 0.0 || v > 1.0)
      fail(Err::Domain, "bernoulli_logit_ll: target " + fmt_g(v) + " outside [0,1] at flat index " +
                            std::to_string(i));
  }
  std::vector<double> y(r, 0.0);
  for (size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < c; ++j) {
      double l = nl.value[i * c + j];
      s += nx.value[i * c + j] * l - stable_softplus(l);
    }
    y[i] = s;
  }
  Tensor out(this, new_node(std::move(y), {static_cast<int>(r)}, nl.requires_grad));
  if (nl.requires_grad) {
    int il = logits.id(), ix = x.id(), io = out.id();
    record(io, [this, il, ix, io, r, c] {
      const auto& g = GBUF(io);
      const auto& lv = node(il).value;
      const auto& xv = node(ix).value;
      auto& gl = GBUF(il);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j)
          gl[i * c + j] += g[i] * (xv[i * c + j] - stable_sigmoid(lv[i * c + j]));
    });
  }
  return out;
}

Tensor Tape::gaussian_diag_ll(Tensor z, Tensor mean, Tensor log_var) {
  const Node &nz = node(z.id()), &nm = node(mean.id()), &nv = node(log_var.id());
  if (nz.shape.size() != 2)
    fail(Err::Dimension, "gaussian_diag_ll expects rank-2 inputs, got " + shape_str(nz.shape));
  check_same_shape(nz, nm, "gaussian_diag_ll");
  check_same_shape(nz, nv, "gaussian_diag_ll");
  const size_t r = static_cast<size_t>(nz.shape[0]), c = static_cast<size_t>(nz.shape[1]);
  std::vector<double> y(r, 0.0);
  for (size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < c; ++j) {
      size_t idx = i * c + j;
      double d = nz.value[idx] - nm.value[idx];
      double lv = nv.value[idx];
      s += -0.5 * (d * d * std::exp(-lv) + lv + kLn2Pi);
    }
    y[i] = s;
  }
  bool rg = nz.requires_grad || nm.requires_grad || nv.requires_grad;
  Tensor out(this, new_node(std::move(y), {static_cast<int>(r)}, rg));
  if (rg) {
    int iz = z.id(), im = mean.id(), iv = log_var.id(), io = out.id();
    record(io, [this, iz, im, iv, io, r, c] {
      const auto& g = GBUF(io);
      const auto& zv = node(iz).value;
      const auto& mv = node(im).value;
      const auto& vv = node(iv).value;
      for (size_t i = 0; i < r; ++i) {
        for (size_t j = 0; j < c; ++j) {
          size_t idx = i * c + j;
          double e = std::exp(-vv[idx]);
          double d = zv[idx] - mv[idx];
          if (node(iz).requires_grad) GBUF(iz)[idx] += g[i] * (-d * e);
          if (node(im).requires_grad) GBUF(im)[idx] += g[i] * (d * e);
          if (node(iv).requires_grad) GBUF(iv)[idx] += g[i] * 0.5 * (d * d * e - 1.0);
        }
      }
    });
  }
  return out;
}

Tensor Tape::kl_std_normal(Tensor mean, Tensor log_var) {
  const Node &nm = node(mean.id()), &nv = node(log_var.id());
  if (nm.shape.size() != 2)
    fail(Err::Dimension, "kl_std_normal expects rank-2 inputs, got " + shape_str(nm.shape));
  check_same_shape(nm, nv, "kl_std_normal");
  const size_t r = static_cast<size_t>(nm.shape[0]), c = static_cast<size_t>(nm.shape[1]);
  std::vector<double> y(r, 0.0);
  for (size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < c; ++j) {
      size_t idx = i * c + j;
      double mu = nm.value[idx], lv = nv.value[idx];
      s += 0.5 * (std::exp(lv) + mu * mu - 1.0 - lv);
    }
    y[i] = s;
  }
  bool rg = nm.requires_grad || nv.requires_grad;
  Tensor out(this, new_node(std::move(y), {static_cast<int>(r)}, rg));
  if (rg) {
    int im = mean.id(), iv = log_var.id(), io = out.id();
    record(io, [this, im, iv, io, r, c] {
      const auto& g = GBUF(io);
      const auto& mv = node(im).value;
      const auto& vv = node(iv).value;
      for (size_t i = 0; i < r; ++i) {
        for (size_t j = 0; j < c; ++j) {
          size_t idx = i * c + j;
          if (node(im).requires_grad) GBUF(im)[idx] += g[i] * mv[idx];
          if (node(iv).requires_grad) GBUF(iv)[idx] += g[i] * 0.5 * (std::exp(vv[idx]) - 1.0);
        }
      }
    });
  }
  return out;
}

Tensor Tape::cross_entropy_logits(Tensor logits, const std::vector<int>& labels) {
  const Node& nl = node(logits.id());
  if (nl.shape.size() != 2)
    fail(Err::Dimension, "cross_entropy_logits expects rank-2 logits, got " + shape_str(nl.shape));
  const size_t r = static_cast<size_t>(nl.shape[0]), c = static_cast<size_t>(nl.shape[1]);
  if (labels.size() != r)
    fail(Err::Dimension, "cross_entropy_logits: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(r) + " rows");
  for (size_t i = 0; i < r; ++i)
    if (labels[i] < 0 || static_cast<size_t>(labels[i]) >= c)
      fail(Err::Domain, "cross_entropy_logits: label " + std::to_string(labels[i]) +
                            " outside [0," + std::to_string(c) + ") at row " + std::to_string(i));
  std::vector<double> y(r);
  for (size_t i = 0; i < r; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < c; ++j) m = std::max(m, nl.value[i * c + j]);
    double s = 0.0;
    for (size_t j = 0; j < c; ++j) s += std::exp(nl.value[i * c + j] - m);
    double lse = m + std::log(s);
    y[i] = lse - nl.value[i * c + static_cast<size_t>(labels[i])];
  }
  Tensor out(this, new_node(std::move(y), {static_cast<int>(r)}, nl.requires_grad));
  if (nl.requires_grad) {
    int il = logits.id(), io = out.id();
    auto labs = labels;
    record(io, [this, il, io, r, c, labs = std::move(labs)] {
      const auto& g = GBUF(io);
      const auto& lv = node(il).value;
      auto& gl = GBUF(il);
      for (size_t i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < c; ++j) m = std::max(m, lv[i * c + j]);
        double s = 0.0;
        for (size_t j = 0; j < c; ++j) s += std::exp(lv[i * c + j] - m);
        for (size_t j = 0; j < c; ++j) {
          double p = std::exp(lv[i * c + j] - m) / s;
          gl[i * c + j] += g[i] * (p - (static_cast<size_t>(labs[i]) == j ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

#undef GBUF

}  // namespace bvo
