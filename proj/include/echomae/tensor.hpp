// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense float32 tensors with reverse-mode automatic differentiation.
//
// A Tape owns one computation graph. Every forward op appends a node whose
// creation order is already a topological order, so backward() is a single
// reverse sweep over the node list. The tape is rebuilt from scratch each
// forward pass; persistent state (weights, accumulated gradients) lives in
// Variable objects that leaves reference.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "echomae/errors.hpp"

namespace echomae {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Persistent named buffer: a trainable weight, or an input whose gradient
// the caller wants to inspect. Gradients accumulate across backward calls
// until zero_grad(), which is what makes gradient accumulation across
// micro-batches work.
struct Variable {
  std::string name;
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool trainable = true;

  Variable() = default;
  Variable(std::string name_, Shape shape_, bool trainable_ = true);

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

class Tape;

// Lightweight handle to a node on a tape.
class DiffTensor {
 public:
  DiffTensor() = default;

  const Shape& shape() const;
  std::span<const float> value() const;
  std::span<const float> grad() const;  // valid after backward()
  bool requires_grad() const;
  int node_id() const { return id_; }
  std::int64_t size() const;
  float scalar() const;   // value of a single-element tensor
  double scalar_hi() const;  // shadow-precision value when enabled, else widened float
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  friend struct OpAccess;
  DiffTensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Shadow every node value with a double-precision copy computed by the
  // same kernels. Storage and gradients stay float32; the shadow exists so
  // finite-difference oracles can difference a quantization-free function.
  void enable_shadow_precision() { shadow_ = true; }
  bool shadow_precision() const { return shadow_; }

  // Leaf holding a copy of external data.
  DiffTensor input(const Shape& shape, std::span<const float> data,
                   bool requires_grad = false);
  DiffTensor constant(const Shape& shape, std::span<const float> data) {
    return input(shape, data, false);
  }
  DiffTensor full(const Shape& shape, float fill, bool requires_grad = false);

  // Leaf tied to a persistent Variable; backward() adds into var.grad.
  DiffTensor leaf(Variable& var);

  // Seeds d(loss)/d(loss)=1 and runs the reverse sweep. loss must be a
  // scalar on this tape; calling twice without a new forward is an error.
  void backward(const DiffTensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

  // --- internal surface used by the op implementations ---
  using BackFn = std::function<void(Tape&)>;
  int emplace(Shape shape, std::vector<float> val, bool requires_grad, BackFn back);
  void set_back(int id, BackFn back);
  void set_shadow(int id, std::vector<double> hi);
  std::span<const float> val(int id) const;
  std::span<const double> shadow_val(int id) const;  // empty unless enabled
  std::span<float> grad_mut(int id);
  std::span<const float> grad(int id) const;
  const Shape& shape_of(int id) const;
  bool node_requires_grad(int id) const;
  DiffTensor handle(int id) { return DiffTensor(this, id); }

 private:
  struct Node {
    Shape shape;
    std::vector<float> val;
    std::vector<double> hi;   // populated iff shadow precision enabled
    std::vector<float> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    Variable* var = nullptr;  // set for Variable leaves
    BackFn back;              // empty for leaves
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  bool shadow_ = false;
};

// --- operations ---------------------------------------------------------
// All kernels accumulate in double internally and store float32 results.

// c[i,j] = sum_k a[i,k] * b[k,j]; rank-2 operands only.
DiffTensor matmul(DiffTensor a, DiffTensor b);

// Softmax over the last dimension, max-subtracted for stability.
DiffTensor softmax_lastdim(DiffTensor x);

// Layer normalization over the last dimension with learned gain and bias.
DiffTensor layer_norm(DiffTensor x, DiffTensor gain, DiffTensor bias,
                      float eps = 1e-5f);

// tanh-approximation GELU.
DiffTensor gelu(DiffTensor x);

DiffTensor add(DiffTensor a, DiffTensor b);            // same shape
DiffTensor add_rowvec(DiffTensor x, DiffTensor row);   // broadcast over rows
DiffTensor scale(DiffTensor x, float c);
DiffTensor reshape(DiffTensor x, Shape shape);
DiffTensor transpose(DiffTensor x);                    // rank-2

// Row selection by index; backward scatters gradients into the selected
// rows (duplicated indices accumulate). Rank >= 1; trailing dims are the
// row payload.
DiffTensor gather_rows(DiffTensor x, const std::vector<int>& ids);
DiffTensor gather_cols(DiffTensor x, const std::vector<int>& ids);  // rank-2

DiffTensor concat_rows(DiffTensor a, DiffTensor b);
DiffTensor repeat_rows(DiffTensor row, int n);  // [1,d] -> [n,d]
DiffTensor mean_rows(DiffTensor x);             // [n,d] -> [1,d]
DiffTensor sum(DiffTensor x);                   // scalar

// (1/n) * sum (pred - target)^2
DiffTensor mse_loss(DiffTensor pred, DiffTensor target);

// sum(w * (pred - target)^2) / sum(w); returns 0 when sum(w) == 0.
DiffTensor masked_mse_loss(DiffTensor pred, DiffTensor target, DiffTensor weights);

}  // namespace echomae
