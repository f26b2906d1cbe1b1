#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convgot/matrix.hpp"

namespace convgot {

// A trainable tensor and its gradient accumulator.
struct Parameter {
  Matrix value;
  Matrix grad;
};

// Named parameters in deterministic (lexicographic) order.
class ParamSet {
 public:
  using Map = std::map<std::string, Parameter, std::less<>>;

  Parameter& add(std::string name, Matrix init);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

  void zero_grad();
  std::size_t scalar_count() const;
  double grad_norm() const;

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  Map params_;
};

class Tape;

// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Single-threaded; node storage is stable across pushes.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Matrix value);
  // Leaf referencing external storage; the storage must outlive the tape.
  Var frozen(const Matrix& value);
  // Leaf bound to a parameter; backward() adds into param.grad. Repeated binds reuse the node.
  Var param(Parameter& p);

  Var record(Matrix value, Backward backward);

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and propagates adjoints into bound parameters.
  void backward(Var root);

  const Matrix& value(std::size_t id) const;
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  Matrix& grad_mut(std::size_t id) { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const void*, std::size_t> bound_;
};

// Resolves named parameters onto a tape, either trainable or frozen.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParamSet& params) : tape_(tape), mutable_(&params), params_(params) {}
  ParamBinder(Tape& tape, const ParamSet& params) : tape_(tape), params_(params) {}

  Var operator()(std::string_view name);
  Tape& tape() { return tape_; }
  const ParamSet& params() const { return params_; }

 private:
  Tape& tape_;
  ParamSet* mutable_ = nullptr;
  const ParamSet& params_;
};

namespace ad {

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var add_row(Var a, Var row);  // broadcast 1xN row over every row of a
Var affine(Var x, Var W, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var scalar_mul(Var s, Var a);  // s is 1x1
Var sigmoid(Var a);
Var tanh(Var a);
Var softmax_rows(Var a);  // kMasked entries get probability 0
Var sum(Var a);           // 1x1
Var square(Var a);
Var rows(Var a, std::size_t begin, std::size_t count);
Var cols(Var a, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const std::size_t> indices);
Var masked_attention(Var q, Var k, Var v, Var bias);

// -log softmax(logits)[y] for a 1xC row; 1x1 result.
Var cross_entropy(Var logits, std::size_t y);
// Sum over rows of per-row cross entropy against targets; 1x1 result.
Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets);

// Masked mean of weighted BCE-with-logits, positive weight alpha; 1x1.
Var weighted_bce_with_logits(Var logits, std::span<const double> targets, std::span<const double> mask,
                             double alpha);
// Mean over positives of -log softmax over masked-in entries; 0 when there are no positives.
Var masked_rank_loss(Var logits, std::span<const double> targets, std::span<const double> mask);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace ad
}  // namespace convgot
