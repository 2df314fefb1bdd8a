// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include "echomae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace echomae {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape_positive(const Shape& shape, const char* who) {
  for (int d : shape) {
    if (d <= 0) {
      throw DimensionError(std::string(who) + ": non-positive extent in shape " +
                           shape_str(shape));
    }
  }
}

// rows = product of all dims but the last, cols = last dim
std::pair<std::int64_t, std::int64_t> rows_cols(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  std::int64_t cols = shape.back();
  std::int64_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, cols};
}

// leading dim = rows, everything after flattened as the row payload
std::pair<std::int64_t, std::int64_t> lead_rest(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  std::int64_t rows = shape.front();
  std::int64_t rest = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) rest *= shape[i];
  return {rows, rest};
}

std::vector<double> widen(std::span<const float> v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace

// --- numeric kernels, shared between the float32 path and the shadow path ---

namespace kern {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
  std::vector<double> acc(static_cast<std::size_t>(n));
  for (int i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const T* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * brow[j];
    }
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[static_cast<std::size_t>(j)]);
  }
}

template <class T>
void softmax_rows(const T* x, T* y, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x + r * cols;
    T* o = y + r * cols;
    double mx = in[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, static_cast<double>(in[j]));
    double denom = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) denom += std::exp(static_cast<double>(in[j]) - mx);
    for (std::int64_t j = 0; j < cols; ++j) {
      o[j] = static_cast<T>(std::exp(static_cast<double>(in[j]) - mx) / denom);
    }
  }
}

// xhat/rstd sinks may be null when the byproducts are not needed
template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, float* xhat,
                     float* rstd, std::int64_t rows, std::int64_t cols, double eps) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x + r * cols;
    double mean = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) mean += in[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      const double d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    if (rstd) rstd[r] = static_cast<float>(rs);
    for (std::int64_t j = 0; j < cols; ++j) {
      const double xh = (in[j] - mean) * rs;
      if (xhat) xhat[r * cols + j] = static_cast<float>(xh);
      y[r * cols + j] = static_cast<T>(xh * gain[j] + bias[j]);
    }
  }
}

template <class T>
void gelu(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    y[i] = static_cast<T>(0.5 * v * (1.0 + t));
  }
}

template <class T>
double sum_all(const T* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <class T>
double mse(const T* p, const T* t, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    s += d * d;
  }
  return s / static_cast<double>(n);
}

template <class T>
double masked_mse(const T* p, const T* t, const T* w, std::size_t n) {
  double s = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    wsum += w[i];
    s += static_cast<double>(w[i]) * d * d;
  }
  return wsum > 0.0 ? s / wsum : 0.0;
}

}  // namespace kern

Variable::Variable(std::string name_, Shape shape_, bool trainable_)
    : name(std::move(name_)), shape(std::move(shape_)), trainable(trainable_) {
  check_shape_positive(shape, "Variable");
  value.assign(static_cast<std::size_t>(numel(shape)), 0.0f);
  grad.assign(value.size(), 0.0f);
}

// --- DiffTensor --------------------------------------------------------------

const Shape& DiffTensor::shape() const { return tape_->shape_of(id_); }
std::span<const float> DiffTensor::value() const { return tape_->val(id_); }
std::span<const float> DiffTensor::grad() const { return tape_->grad(id_); }
bool DiffTensor::requires_grad() const { return tape_->node_requires_grad(id_); }
std::int64_t DiffTensor::size() const { return numel(shape()); }

float DiffTensor::scalar() const {
  if (size() != 1) {
    throw ContractError("scalar(): tensor has shape " + shape_str(shape()));
  }
  return value()[0];
}

double DiffTensor::scalar_hi() const {
  if (size() != 1) {
    throw ContractError("scalar_hi(): tensor has shape " + shape_str(shape()));
  }
  auto hi = tape_->shadow_val(id_);
  return hi.empty() ? static_cast<double>(value()[0]) : hi[0];
}

// --- Tape ---------------------------------------------------------------------

int Tape::emplace(Shape shape, std::vector<float> v, bool requires_grad, BackFn back) {
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(v);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad.assign(n.val.size(), 0.0f);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::set_back(int id, BackFn back) {
  nodes_[static_cast<std::size_t>(id)].back = std::move(back);
}

void Tape::set_shadow(int id, std::vector<double> hi) {
  nodes_[static_cast<std::size_t>(id)].hi = std::move(hi);
}

DiffTensor Tape::input(const Shape& shape, std::span<const float> data,
                       bool requires_grad) {
  check_shape_positive(shape, "input");
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("input: shape " + shape_str(shape) + " expects " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  std::vector<float> v(data.begin(), data.end());
  const int id = emplace(shape, std::move(v), requires_grad, nullptr);
  if (shadow_) set_shadow(id, widen(data));
  return handle(id);
}

DiffTensor Tape::full(const Shape& shape, float fill, bool requires_grad) {
  check_shape_positive(shape, "full");
  std::vector<float> v(static_cast<std::size_t>(numel(shape)), fill);
  const int id = emplace(shape, std::move(v), requires_grad, nullptr);
  if (shadow_) {
    set_shadow(id, std::vector<double>(static_cast<std::size_t>(numel(shape)),
                                       static_cast<double>(fill)));
  }
  return handle(id);
}

DiffTensor Tape::leaf(Variable& var) {
  std::vector<float> v = var.value;
  const int id = emplace(var.shape, std::move(v), var.trainable, nullptr);
  nodes_[static_cast<std::size_t>(id)].var = &var;
  if (shadow_) set_shadow(id, widen(var.value));
  return handle(id);
}

std::span<const float> Tape::val(int id) const {
  return nodes_[static_cast<std::size_t>(id)].val;
}
std::span<const double> Tape::shadow_val(int id) const {
  return nodes_[static_cast<std::size_t>(id)].hi;
}
const Shape& Tape::shape_of(int id) const {
  return nodes_[static_cast<std::size_t>(id)].shape;
}
bool Tape::node_requires_grad(int id) const {
  return nodes_[static_cast<std::size_t>(id)].requires_grad;
}
std::span<float> Tape::grad_mut(int id) {
  return nodes_[static_cast<std::size_t>(id)].grad;
}
std::span<const float> Tape::grad(int id) const {
  return nodes_[static_cast<std::size_t>(id)].grad;
}

void Tape::backward(const DiffTensor& loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss is not on this tape");
  if (backward_done_) {
    throw ContractError("backward: called twice on the same graph; run a new forward first");
  }
  const Node& loss_node = nodes_[static_cast<std::size_t>(loss.id_)];
  if (numel(loss_node.shape) != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss_node.shape));
  }
  if (!loss_node.requires_grad) {
    throw ContractError("backward: loss does not require grad");
  }
  backward_done_ = true;
  nodes_[static_cast<std::size_t>(loss.id_)].grad[0] = 1.0f;

  // Creation order is topological order, so one reverse sweep suffices.
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) continue;
    if (n.back) n.back(*this);
    if (n.var) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) n.var->grad[i] += n.grad[i];
    }
  }
}

// --- op plumbing ----------------------------------------------------------------

struct OpAccess {
  static Tape* tape(const DiffTensor& t) { return t.tape_; }
  static int id(const DiffTensor& t) { return t.id_; }
};

namespace {

struct Operand {
  Tape* tape;
  int id;
  Shape shape;
  std::span<const float> val;
  std::span<const double> hi;
  bool rg;
};

Operand unpack(const DiffTensor& t, const char* who) {
  if (!t.valid()) throw ContractError(std::string(who) + ": invalid tensor handle");
  Tape* tape = OpAccess::tape(t);
  const int id = OpAccess::id(t);
  return {tape,          id, tape->shape_of(id), tape->val(id), tape->shadow_val(id),
          tape->node_requires_grad(id)};
}

void same_tape(const Operand& a, const Operand& b, const char* who) {
  if (a.tape != b.tape) {
    throw ContractError(std::string(who) + ": operands on different tapes");
  }
}

void check_finite(std::span<const float> v, const char* who) {
  for (float x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(who) + ": non-finite input value");
    }
  }
}

}  // namespace

// --- matmul ---------------------------------------------------------------------

DiffTensor matmul(DiffTensor a, DiffTensor b) {
  Operand A = unpack(a, "matmul");
  Operand B = unpack(b, "matmul");
  same_tape(A, B, "matmul");
  if (A.shape.size() != 2 || B.shape.size() != 2) {
    throw DimensionError("matmul: rank-2 operands required, got " +
                         shape_str(A.shape) + " and " + shape_str(B.shape));
  }
  const int m = A.shape[0], k = A.shape[1];
  const int k2 = B.shape[0], n = B.shape[1];
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(A.shape) +
                         " vs " + shape_str(B.shape));
  }

  std::vector<float> out(static_cast<std::size_t>(m) * n);
  kern::matmul(A.val.data(), B.val.data(), out.data(), m, k, n);

  const bool rg = A.rg || B.rg;
  const int cid = A.tape->emplace({m, n}, std::move(out), rg, nullptr);
  if (A.tape->shadow_precision()) {
    std::vector<double> hi(static_cast<std::size_t>(m) * n);
    kern::matmul(A.hi.data(), B.hi.data(), hi.data(), m, k, n);
    A.tape->set_shadow(cid, std::move(hi));
  }
  if (rg) {
    const int aid = A.id, bid = B.id;
    A.tape->set_back(cid, [aid, bid, cid, m, k, n](Tape& tp) {
      std::span<const float> dC = tp.grad(cid);
      std::span<const float> Av = tp.val(aid);
      std::span<const float> Bv = tp.val(bid);
      if (tp.node_requires_grad(aid)) {
        std::span<float> dA = tp.grad_mut(aid);
        // dA = dC * B^T
        for (int i = 0; i < m; ++i) {
          const float* dcrow = dC.data() + static_cast<std::size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const float* brow = Bv.data() + static_cast<std::size_t>(kk) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += static_cast<double>(dcrow[j]) * brow[j];
            dA[static_cast<std::size_t>(i) * k + kk] += static_cast<float>(s);
          }
        }
      }
      if (tp.node_requires_grad(bid)) {
        std::span<float> dB = tp.grad_mut(bid);
        // dB = A^T * dC, accumulated row-wise for locality
        std::vector<double> acc(static_cast<std::size_t>(n));
        for (int kk = 0; kk < k; ++kk) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int i = 0; i < m; ++i) {
            const double av = Av[static_cast<std::size_t>(i) * k + kk];
            const float* dcrow = dC.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * dcrow[j];
          }
          float* dbrow = dB.data() + static_cast<std::size_t>(kk) * n;
          for (int j = 0; j < n; ++j) {
            dbrow[j] += static_cast<float>(acc[static_cast<std::size_t>(j)]);
          }
        }
      }
    });
  }
  return A.tape->handle(cid);
}

// --- softmax ----------------------------------------------------------------------

DiffTensor softmax_lastdim(DiffTensor x) {
  Operand X = unpack(x, "softmax_lastdim");
  if (X.shape.empty() || X.shape.back() < 1) {
    throw DimensionError("softmax_lastdim: empty last dimension");
  }
  check_finite(X.val, "softmax_lastdim");
  const auto [rows, cols] = rows_cols(X.shape);

  std::vector<float> out(X.val.size());
  kern::softmax_rows(X.val.data(), out.data(), rows, cols);

  const int yid = X.tape->emplace(X.shape, std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(X.val.size());
    kern::softmax_rows(X.hi.data(), hi.data(), rows, cols);
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (X.rg) {
    const int xid = X.id;
    const std::int64_t R = rows, C = cols;
    X.tape->set_back(yid, [xid, yid, R, C](Tape& tp) {
      std::span<const float> y = tp.val(yid);
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      for (std::int64_t r = 0; r < R; ++r) {
        const float* yr = y.data() + r * C;
        const float* dyr = dy.data() + r * C;
        float* dxr = dx.data() + r * C;
        double dot = 0.0;
        for (std::int64_t j = 0; j < C; ++j) dot += static_cast<double>(dyr[j]) * yr[j];
        for (std::int64_t j = 0; j < C; ++j) {
          dxr[j] += static_cast<float>(yr[j] * (static_cast<double>(dyr[j]) - dot));
        }
      }
    });
  }
  return X.tape->handle(yid);
}

// --- layer norm ----------------------------------------------------------------------

DiffTensor layer_norm(DiffTensor x, DiffTensor gain, DiffTensor bias, float eps) {
  Operand X = unpack(x, "layer_norm");
  Operand G = unpack(gain, "layer_norm");
  Operand B = unpack(bias, "layer_norm");
  same_tape(X, G, "layer_norm");
  same_tape(X, B, "layer_norm");
  const auto [rows, cols] = rows_cols(X.shape);
  if (numel(G.shape) != cols || numel(B.shape) != cols) {
    throw DimensionError("layer_norm: gain " + shape_str(G.shape) + " / bias " +
                         shape_str(B.shape) + " must match last dimension " +
                         std::to_string(cols));
  }

  std::vector<float> out(X.val.size());
  std::vector<float> xhat(X.val.size());
  std::vector<float> rstd(static_cast<std::size_t>(rows));
  kern::layer_norm_rows(X.val.data(), G.val.data(), B.val.data(), out.data(),
                        xhat.data(), rstd.data(), rows, cols, eps);

  const bool rg = X.rg || G.rg || B.rg;
  const int yid = X.tape->emplace(X.shape, std::move(out), rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(X.val.size());
    kern::layer_norm_rows(X.hi.data(), G.hi.data(), B.hi.data(), hi.data(),
                          nullptr, nullptr, rows, cols, eps);
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (rg) {
    const int xid = X.id, gid = G.id, bid = B.id;
    const std::int64_t R = rows, C = cols;
    auto xh = std::make_shared<std::vector<float>>(std::move(xhat));
    auto rs = std::make_shared<std::vector<float>>(std::move(rstd));
    X.tape->set_back(yid, [xid, gid, bid, yid, R, C, xh, rs](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<const float> g = tp.val(gid);
      for (std::int64_t r = 0; r < R; ++r) {
        const float* dyr = dy.data() + r * C;
        const float* xhr = xh->data() + r * C;
        if (tp.node_requires_grad(gid)) {
          std::span<float> dg = tp.grad_mut(gid);
          for (std::int64_t j = 0; j < C; ++j) {
            dg[static_cast<std::size_t>(j)] += dyr[j] * xhr[j];
          }
        }
        if (tp.node_requires_grad(bid)) {
          std::span<float> db = tp.grad_mut(bid);
          for (std::int64_t j = 0; j < C; ++j) db[static_cast<std::size_t>(j)] += dyr[j];
        }
        if (tp.node_requires_grad(xid)) {
          std::span<float> dx = tp.grad_mut(xid);
          float* dxr = dx.data() + r * C;
          double m1 = 0.0, m2 = 0.0;  // mean(g*dy), mean(g*dy*xhat)
          for (std::int64_t j = 0; j < C; ++j) {
            const double gd = static_cast<double>(g[static_cast<std::size_t>(j)]) * dyr[j];
            m1 += gd;
            m2 += gd * xhr[j];
          }
          m1 /= static_cast<double>(C);
          m2 /= static_cast<double>(C);
          const double rsr = (*rs)[static_cast<std::size_t>(r)];
          for (std::int64_t j = 0; j < C; ++j) {
            const double gd = static_cast<double>(g[static_cast<std::size_t>(j)]) * dyr[j];
            dxr[j] += static_cast<float>((gd - m1 - xhr[j] * m2) * rsr);
          }
        }
      }
    });
  }
  return X.tape->handle(yid);
}

// --- gelu ---------------------------------------------------------------------------

DiffTensor gelu(DiffTensor x) {
  Operand X = unpack(x, "gelu");
  std::vector<float> out(X.val.size());
  kern::gelu(X.val.data(), out.data(), out.size());
  const int yid = X.tape->emplace(X.shape, std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(X.val.size());
    kern::gelu(X.hi.data(), hi.data(), hi.size());
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (X.rg) {
    const int xid = X.id;
    X.tape->set_back(yid, [xid, yid](Tape& tp) {
      std::span<const float> xv = tp.val(xid);
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double v = xv[i];
        const double u = kern::kGeluC * (v + kern::kGeluA * v * v * v);
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        const double d =
            0.5 * (1.0 + t) + 0.5 * v * sech2 * kern::kGeluC * (1.0 + 3.0 * kern::kGeluA * v * v);
        dx[i] += static_cast<float>(d * dy[i]);
      }
    });
  }
  return X.tape->handle(yid);
}

// --- elementwise / layout -------------------------------------------------------------

DiffTensor add(DiffTensor a, DiffTensor b) {
  Operand A = unpack(a, "add");
  Operand B = unpack(b, "add");
  same_tape(A, B, "add");
  if (A.shape != B.shape) {
    throw DimensionError("add: shapes disagree: " + shape_str(A.shape) + " vs " +
                         shape_str(B.shape));
  }
  std::vector<float> out(A.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.val[i] + B.val[i];
  const bool rg = A.rg || B.rg;
  const int cid = A.tape->emplace(A.shape, std::move(out), rg, nullptr);
  if (A.tape->shadow_precision()) {
    std::vector<double> hi(A.val.size());
    for (std::size_t i = 0; i < hi.size(); ++i) hi[i] = A.hi[i] + B.hi[i];
    A.tape->set_shadow(cid, std::move(hi));
  }
  if (rg) {
    const int aid = A.id, bid = B.id;
    A.tape->set_back(cid, [aid, bid, cid](Tape& tp) {
      std::span<const float> dC = tp.grad(cid);
      if (tp.node_requires_grad(aid)) {
        std::span<float> dA = tp.grad_mut(aid);
        for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += dC[i];
      }
      if (tp.node_requires_grad(bid)) {
        std::span<float> dB = tp.grad_mut(bid);
        for (std::size_t i = 0; i < dB.size(); ++i) dB[i] += dC[i];
      }
    });
  }
  return A.tape->handle(cid);
}

DiffTensor add_rowvec(DiffTensor x, DiffTensor row) {
  Operand X = unpack(x, "add_rowvec");
  Operand R = unpack(row, "add_rowvec");
  same_tape(X, R, "add_rowvec");
  const auto [rows, cols] = rows_cols(X.shape);
  if (numel(R.shape) != cols) {
    throw DimensionError("add_rowvec: row " + shape_str(R.shape) +
                         " must match last dimension " + std::to_string(cols));
  }
  std::vector<float> out(X.val.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < cols; ++j) {
      out[static_cast<std::size_t>(r * cols + j)] =
          X.val[static_cast<std::size_t>(r * cols + j)] + R.val[static_cast<std::size_t>(j)];
    }
  }
  const bool rg = X.rg || R.rg;
  const int cid = X.tape->emplace(X.shape, std::move(out), rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(X.val.size());
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < cols; ++j) {
        hi[static_cast<std::size_t>(r * cols + j)] =
            X.hi[static_cast<std::size_t>(r * cols + j)] + R.hi[static_cast<std::size_t>(j)];
      }
    }
    X.tape->set_shadow(cid, std::move(hi));
  }
  if (rg) {
    const int xid = X.id, rid = R.id;
    const std::int64_t RR = rows, C = cols;
    X.tape->set_back(cid, [xid, rid, cid, RR, C](Tape& tp) {
      std::span<const float> dC = tp.grad(cid);
      if (tp.node_requires_grad(xid)) {
        std::span<float> dX = tp.grad_mut(xid);
        for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += dC[i];
      }
      if (tp.node_requires_grad(rid)) {
        std::span<float> dR = tp.grad_mut(rid);
        for (std::int64_t j = 0; j < C; ++j) {
          double s = 0.0;
          for (std::int64_t r = 0; r < RR; ++r) s += dC[static_cast<std::size_t>(r * C + j)];
          dR[static_cast<std::size_t>(j)] += static_cast<float>(s);
        }
      }
    });
  }
  return X.tape->handle(cid);
}

DiffTensor scale(DiffTensor x, float c) {
  Operand X = unpack(x, "scale");
  std::vector<float> out(X.val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X.val[i] * c;
  const int yid = X.tape->emplace(X.shape, std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(X.val.size());
    for (std::size_t i = 0; i < hi.size(); ++i) hi[i] = X.hi[i] * static_cast<double>(c);
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (X.rg) {
    const int xid = X.id;
    X.tape->set_back(yid, [xid, yid, c](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * dy[i];
    });
  }
  return X.tape->handle(yid);
}

DiffTensor reshape(DiffTensor x, Shape shape) {
  Operand X = unpack(x, "reshape");
  check_shape_positive(shape, "reshape");
  if (numel(shape) != numel(X.shape)) {
    throw DimensionError("reshape: cannot view " + shape_str(X.shape) + " as " +
                         shape_str(shape));
  }
  std::vector<float> out(X.val.begin(), X.val.end());
  const int yid = X.tape->emplace(std::move(shape), std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    X.tape->set_shadow(yid, std::vector<double>(X.hi.begin(), X.hi.end()));
  }
  if (X.rg) {
    const int xid = X.id;
    X.tape->set_back(yid, [xid, yid](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
  }
  return X.tape->handle(yid);
}

DiffTensor transpose(DiffTensor x) {
  Operand X = unpack(x, "transpose");
  if (X.shape.size() != 2) {
    throw DimensionError("transpose: rank-2 required, got " + shape_str(X.shape));
  }
  const int m = X.shape[0], n = X.shape[1];
  std::vector<float> out(X.val.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j) * m + i] = X.val[static_cast<std::size_t>(i) * n + j];
    }
  }
  const int yid = X.tape->emplace({n, m}, std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(X.val.size());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        hi[static_cast<std::size_t>(j) * m + i] = X.hi[static_cast<std::size_t>(i) * n + j];
      }
    }
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (X.rg) {
    const int xid = X.id;
    X.tape->set_back(yid, [xid, yid, m, n](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          dx[static_cast<std::size_t>(i) * n + j] += dy[static_cast<std::size_t>(j) * m + i];
        }
      }
    });
  }
  return X.tape->handle(yid);
}

DiffTensor gather_rows(DiffTensor x, const std::vector<int>& ids) {
  Operand X = unpack(x, "gather_rows");
  if (X.shape.empty()) throw DimensionError("gather_rows: rank >= 1 required");
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  const auto [rows, width] = lead_rest(X.shape);
  for (int id : ids) {
    if (id < 0 || id >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(id) + " out of range [0," +
                       std::to_string(rows) + ")");
    }
  }
  Shape oshape = X.shape;
  oshape[0] = static_cast<int>(ids.size());
  std::vector<float> out(ids.size() * static_cast<std::size_t>(width));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const float* src = X.val.data() + static_cast<std::size_t>(ids[r]) * width;
    std::copy(src, src + width, out.data() + r * static_cast<std::size_t>(width));
  }
  const int yid = X.tape->emplace(std::move(oshape), std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(ids.size() * static_cast<std::size_t>(width));
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const double* src = X.hi.data() + static_cast<std::size_t>(ids[r]) * width;
      std::copy(src, src + width, hi.data() + r * static_cast<std::size_t>(width));
    }
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (X.rg) {
    const int xid = X.id;
    const std::int64_t W = width;
    auto idx = std::make_shared<std::vector<int>>(ids);
    X.tape->set_back(yid, [xid, yid, W, idx](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      for (std::size_t r = 0; r < idx->size(); ++r) {
        const float* src = dy.data() + r * static_cast<std::size_t>(W);
        float* dst = dx.data() + static_cast<std::size_t>((*idx)[r]) * W;
        for (std::int64_t j = 0; j < W; ++j) dst[j] += src[j];
      }
    });
  }
  return X.tape->handle(yid);
}

DiffTensor gather_cols(DiffTensor x, const std::vector<int>& ids) {
  Operand X = unpack(x, "gather_cols");
  if (X.shape.size() != 2) {
    throw DimensionError("gather_cols: rank-2 required, got " + shape_str(X.shape));
  }
  if (ids.empty()) throw DimensionError("gather_cols: empty index list");
  const int m = X.shape[0], n = X.shape[1];
  for (int id : ids) {
    if (id < 0 || id >= n) {
      throw IndexError("gather_cols: index " + std::to_string(id) + " out of range [0," +
                       std::to_string(n) + ")");
    }
  }
  const int w = static_cast<int>(ids.size());
  std::vector<float> out(static_cast<std::size_t>(m) * w);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < w; ++j) {
      out[static_cast<std::size_t>(i) * w + j] =
          X.val[static_cast<std::size_t>(i) * n + ids[static_cast<std::size_t>(j)]];
    }
  }
  const int yid = X.tape->emplace({m, w}, std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(static_cast<std::size_t>(m) * w);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < w; ++j) {
        hi[static_cast<std::size_t>(i) * w + j] =
            X.hi[static_cast<std::size_t>(i) * n + ids[static_cast<std::size_t>(j)]];
      }
    }
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (X.rg) {
    const int xid = X.id;
    auto idx = std::make_shared<std::vector<int>>(ids);
    X.tape->set_back(yid, [xid, yid, m, n, w, idx](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) {
          dx[static_cast<std::size_t>(i) * n + (*idx)[static_cast<std::size_t>(j)]] +=
              dy[static_cast<std::size_t>(i) * w + j];
        }
      }
    });
  }
  return X.tape->handle(yid);
}

DiffTensor concat_rows(DiffTensor a, DiffTensor b) {
  Operand A = unpack(a, "concat_rows");
  Operand B = unpack(b, "concat_rows");
  same_tape(A, B, "concat_rows");
  if (A.shape.size() != B.shape.size() || A.shape.empty()) {
    throw DimensionError("concat_rows: rank mismatch: " + shape_str(A.shape) + " vs " +
                         shape_str(B.shape));
  }
  for (std::size_t i = 1; i < A.shape.size(); ++i) {
    if (A.shape[i] != B.shape[i]) {
      throw DimensionError("concat_rows: trailing dims disagree: " + shape_str(A.shape) +
                           " vs " + shape_str(B.shape));
    }
  }
  Shape oshape = A.shape;
  oshape[0] += B.shape[0];
  std::vector<float> out;
  out.reserve(A.val.size() + B.val.size());
  out.insert(out.end(), A.val.begin(), A.val.end());
  out.insert(out.end(), B.val.begin(), B.val.end());
  const bool rg = A.rg || B.rg;
  const int cid = A.tape->emplace(std::move(oshape), std::move(out), rg, nullptr);
  if (A.tape->shadow_precision()) {
    std::vector<double> hi;
    hi.reserve(A.hi.size() + B.hi.size());
    hi.insert(hi.end(), A.hi.begin(), A.hi.end());
    hi.insert(hi.end(), B.hi.begin(), B.hi.end());
    A.tape->set_shadow(cid, std::move(hi));
  }
  if (rg) {
    const int aid = A.id, bid = B.id;
    const std::size_t na = A.val.size();
    A.tape->set_back(cid, [aid, bid, cid, na](Tape& tp) {
      std::span<const float> dC = tp.grad(cid);
      if (tp.node_requires_grad(aid)) {
        std::span<float> dA = tp.grad_mut(aid);
        for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += dC[i];
      }
      if (tp.node_requires_grad(bid)) {
        std::span<float> dB = tp.grad_mut(bid);
        for (std::size_t i = 0; i < dB.size(); ++i) dB[i] += dC[na + i];
      }
    });
  }
  return A.tape->handle(cid);
}

DiffTensor repeat_rows(DiffTensor row, int n) {
  Operand R = unpack(row, "repeat_rows");
  if (n < 1) throw DimensionError("repeat_rows: n must be >= 1");
  const auto [rows, width] = lead_rest(R.shape);
  if (rows != 1) {
    throw DimensionError("repeat_rows: single-row input required, got " + shape_str(R.shape));
  }
  Shape oshape = R.shape;
  oshape[0] = n;
  std::vector<float> out(static_cast<std::size_t>(n) * width);
  for (int r = 0; r < n; ++r) {
    std::copy(R.val.begin(), R.val.end(), out.begin() + static_cast<std::size_t>(r) * width);
  }
  const int yid = R.tape->emplace(std::move(oshape), std::move(out), R.rg, nullptr);
  if (R.tape->shadow_precision()) {
    std::vector<double> hi(static_cast<std::size_t>(n) * width);
    for (int r = 0; r < n; ++r) {
      std::copy(R.hi.begin(), R.hi.end(), hi.begin() + static_cast<std::size_t>(r) * width);
    }
    R.tape->set_shadow(yid, std::move(hi));
  }
  if (R.rg) {
    const int rid = R.id;
    const std::int64_t W = width;
    R.tape->set_back(yid, [rid, yid, n, W](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dr = tp.grad_mut(rid);
      for (std::int64_t j = 0; j < W; ++j) {
        double s = 0.0;
        for (int r = 0; r < n; ++r) s += dy[static_cast<std::size_t>(r) * W + j];
        dr[static_cast<std::size_t>(j)] += static_cast<float>(s);
      }
    });
  }
  return R.tape->handle(yid);
}

DiffTensor mean_rows(DiffTensor x) {
  Operand X = unpack(x, "mean_rows");
  if (X.shape.size() != 2) {
    throw DimensionError("mean_rows: rank-2 required, got " + shape_str(X.shape));
  }
  const int m = X.shape[0], n = X.shape[1];
  std::vector<float> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += X.val[static_cast<std::size_t>(i) * n + j];
    out[static_cast<std::size_t>(j)] = static_cast<float>(s / m);
  }
  const int yid = X.tape->emplace({1, n}, std::move(out), X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    std::vector<double> hi(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += X.hi[static_cast<std::size_t>(i) * n + j];
      hi[static_cast<std::size_t>(j)] = s / m;
    }
    X.tape->set_shadow(yid, std::move(hi));
  }
  if (X.rg) {
    const int xid = X.id;
    X.tape->set_back(yid, [xid, yid, m, n](Tape& tp) {
      std::span<const float> dy = tp.grad(yid);
      std::span<float> dx = tp.grad_mut(xid);
      const float inv = 1.0f / static_cast<float>(m);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          dx[static_cast<std::size_t>(i) * n + j] += dy[static_cast<std::size_t>(j)] * inv;
        }
      }
    });
  }
  return X.tape->handle(yid);
}

DiffTensor sum(DiffTensor x) {
  Operand X = unpack(x, "sum");
  const float s = static_cast<float>(kern::sum_all(X.val.data(), X.val.size()));
  const int yid = X.tape->emplace({1}, {s}, X.rg, nullptr);
  if (X.tape->shadow_precision()) {
    X.tape->set_shadow(yid, {kern::sum_all(X.hi.data(), X.hi.size())});
  }
  if (X.rg) {
    const int xid = X.id;
    X.tape->set_back(yid, [xid, yid](Tape& tp) {
      const float g = tp.grad(yid)[0];
      std::span<float> dx = tp.grad_mut(xid);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
  }
  return X.tape->handle(yid);
}

DiffTensor mse_loss(DiffTensor pred, DiffTensor target) {
  Operand P = unpack(pred, "mse_loss");
  Operand T = unpack(target, "mse_loss");
  same_tape(P, T, "mse_loss");
  if (P.shape != T.shape) {
    throw DimensionError("mse_loss: shapes disagree: " + shape_str(P.shape) + " vs " +
                         shape_str(T.shape));
  }
  const std::size_t n = P.val.size();
  const float loss = static_cast<float>(kern::mse(P.val.data(), T.val.data(), n));
  const bool rg = P.rg || T.rg;
  const int yid = P.tape->emplace({1}, {loss}, rg, nullptr);
  if (P.tape->shadow_precision()) {
    P.tape->set_shadow(yid, {kern::mse(P.hi.data(), T.hi.data(), n)});
  }
  if (rg) {
    const int pid = P.id, tid = T.id;
    P.tape->set_back(yid, [pid, tid, yid, n](Tape& tp) {
      const float g = tp.grad(yid)[0];
      std::span<const float> pv = tp.val(pid);
      std::span<const float> tv = tp.val(tid);
      const float c = 2.0f / static_cast<float>(n);
      if (tp.node_requires_grad(pid)) {
        std::span<float> dp = tp.grad_mut(pid);
        for (std::size_t i = 0; i < n; ++i) dp[i] += g * c * (pv[i] - tv[i]);
      }
      if (tp.node_requires_grad(tid)) {
        std::span<float> dt = tp.grad_mut(tid);
        for (std::size_t i = 0; i < n; ++i) dt[i] -= g * c * (pv[i] - tv[i]);
      }
    });
  }
  return P.tape->handle(yid);
}

DiffTensor masked_mse_loss(DiffTensor pred, DiffTensor target, DiffTensor weights) {
  Operand P = unpack(pred, "masked_mse_loss");
  Operand T = unpack(target, "masked_mse_loss");
  Operand W = unpack(weights, "masked_mse_loss");
  same_tape(P, T, "masked_mse_loss");
  same_tape(P, W, "masked_mse_loss");
  if (P.shape != T.shape || P.shape != W.shape) {
    throw DimensionError("masked_mse_loss: shapes disagree: " + shape_str(P.shape) + " vs " +
                         shape_str(T.shape) + " vs " + shape_str(W.shape));
  }
  const std::size_t n = P.val.size();
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) wsum += W.val[i];
  const float loss = static_cast<float>(kern::masked_mse(P.val.data(), T.val.data(), W.val.data(), n));
  const bool rg = P.rg;
  const int yid = P.tape->emplace({1}, {loss}, rg, nullptr);
  if (P.tape->shadow_precision()) {
    P.tape->set_shadow(yid, {kern::masked_mse(P.hi.data(), T.hi.data(), W.hi.data(), n)});
  }
  if (rg && wsum > 0.0) {
    const int pid = P.id, tid = T.id, wid = W.id;
    const double denom = wsum;
    P.tape->set_back(yid, [pid, tid, wid, yid, n, denom](Tape& tp) {
      const float g = tp.grad(yid)[0];
      std::span<const float> pv = tp.val(pid);
      std::span<const float> tv = tp.val(tid);
      std::span<const float> wv = tp.val(wid);
      std::span<float> dp = tp.grad_mut(pid);
      for (std::size_t i = 0; i < n; ++i) {
        dp[i] += static_cast<float>(2.0 * wv[i] * (static_cast<double>(pv[i]) - tv[i]) / denom) * g;
      }
    });
  }
  return P.tape->handle(yid);
}

}  // namespace echomae
