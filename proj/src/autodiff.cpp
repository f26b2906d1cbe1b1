#include "convgot/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "convgot/errors.hpp"

namespace convgot {

// ---------------------------------------------------------------- ParamSet

Parameter& ParamSet::add(std::string name, Matrix init) {
  Parameter p;
  p.grad = Matrix(init.rows(), init.cols());
  p.value = std::move(init);
  auto [it, inserted] = params_.emplace(std::move(name), std::move(p));
  if (!inserted) throw ConfigError("duplicate parameter '" + it->first + "'");
  return it->second;
}

Parameter& ParamSet::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Parameter& ParamSet::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParamSet::zero_grad() {
  for (auto& [name, p] : params_) {
    if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows(), p.value.cols());
    p.grad.fill(0.0);
  }
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, p] : params_)
    for (double g : p.grad.data()) sq += g * g;
  return std::sqrt(sq);
}

// ---------------------------------------------------------------- Tape

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::frozen(const Matrix& value) {
  if (auto it = bound_.find(&value); it != bound_.end()) return {this, it->second};
  nodes_.push_back(Node{{}, &value, {}, {}, nullptr});
  bound_.emplace(&value, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p.value); it != bound_.end()) return {this, it->second};
  nodes_.push_back(Node{{}, &p.value, {}, {}, &p});
  bound_.emplace(&p.value, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, Backward backward) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, std::move(backward), nullptr});
  return {this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ShapeError("backward: variable belongs to another tape");
  const Matrix& rv = value(root.id());
  if (rv.size() != 1) throw ShapeError("backward: root must be a scalar");
  for (std::size_t i = 0; i <= root.id(); ++i) {
    const Matrix& v = value(i);
    nodes_[i].grad = Matrix(v.rows(), v.cols());
  }
  nodes_[root.id()].grad[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward) n.backward(*this, i);
  }
  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (!n.param) continue;
    if (!n.param->grad.same_shape(n.param->value)) n.param->grad = Matrix(n.param->value.rows(), n.param->value.cols());
    for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
  }
}

Var ParamBinder::operator()(std::string_view name) {
  if (mutable_) return tape_.param(mutable_->at(name));
  return tape_.frozen(params_.at(name).value);
}

// ---------------------------------------------------------------- ops

namespace ad {
namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) throw ShapeError("operands live on different tapes");
  return *a.tape();
}

void accumulate(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix out = convgot::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t.grad_mut(ia), convgot::matmul_nt(g, t.value(ib)));
    accumulate(t.grad_mut(ib), convgot::matmul(convgot::transpose(t.value(ia)), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix out = convgot::matmul_nt(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t.grad_mut(ia), convgot::matmul(g, t.value(ib)));
    accumulate(t.grad_mut(ib), convgot::matmul(convgot::transpose(g), t.value(ia)));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  accumulate(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    accumulate(t.grad_mut(ia), t.grad(self));
    accumulate(t.grad_mut(ib), t.grad(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t.grad_mut(ia), g);
    Matrix& gb = t.grad_mut(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Matrix out = convgot::elementwise_mul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    Matrix& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    Matrix& gb = t.grad_mut(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != a.cols()) throw ShapeError("add_row: row width mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv[j];
  }
  const std::size_t ia = a.id(), ir = row.id();
  return t.record(std::move(out), [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t.grad_mut(ia), g);
    Matrix& gr = t.grad_mut(ir);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto r = g.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) gr[j] += r[j];
    }
  });
}

Var affine(Var x, Var W, Var b) { return add_row(matmul(x, W), b); }

Var scale(Var a, double c) {
  Matrix out = a.value();
  for (double& v : out.data()) v *= c;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [ia, c](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var add_scalar(Var a, double c) {
  Matrix out = a.value();
  for (double& v : out.data()) v += c;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [ia](Tape& t, std::size_t self) { accumulate(t.grad_mut(ia), t.grad(self)); });
}

Var scalar_mul(Var s, Var a) {
  Tape& t = same_tape(s, a);
  if (s.value().size() != 1) throw ShapeError("scalar_mul: first operand must be 1x1");
  const double sv = s.value()[0];
  Matrix out = a.value();
  for (double& v : out.data()) v *= sv;
  const std::size_t is = s.id(), ia = a.id();
  return t.record(std::move(out), [is, ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const double sv = t.value(is)[0];
    double ds = 0.0;
    Matrix& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ds += g[i] * av[i];
      ga[i] += g[i] * sv;
    }
    t.grad_mut(is)[0] += ds;
  });
}

Var sigmoid(Var a) {
  Matrix out = convgot::sigmoid(a.value());
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var softmax_rows(Var a) {
  Matrix out = convgot::softmax_rowwise(a.value());
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto yr = y.row(i);
      auto gr = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto gar = ga.row(i);
      for (std::size_t j = 0; j < yr.size(); ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape()->record(Matrix(1, 1, s), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_mut(ia).data()) v += g;
  });
}

Var square(Var a) { return mul(a, a); }

Var rows(Var a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > av.rows()) throw ShapeError("rows: slice out of range");
  Matrix out(count, av.cols());
  std::copy(av.data().begin() + begin * av.cols(), av.data().begin() + (begin + count) * av.cols(),
            out.data().begin());
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [ia, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_mut(ia);
    const std::size_t off = begin * ga.cols();
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

Var cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > av.cols()) throw ShapeError("cols: slice out of range");
  Matrix out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, begin + j);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), [ia, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) += g(i, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t width = parts[0].cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != width) throw ShapeError("concat_rows: width mismatch");
    total += p.rows();
  }
  Matrix out(total, width);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + off);
    off += pv.size();
    ids.push_back(p.id());
  }
  return parts[0].tape()->record(std::move(out), [ids = std::move(ids)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      Matrix& gp = t.grad_mut(id);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      off += gp.size();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t height = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != height) throw ShapeError("concat_cols: height mismatch");
    total += p.cols();
  }
  Matrix out(height, total);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
    ids.push_back(p.id());
  }
  return parts[0].tape()->record(std::move(out), [ids = std::move(ids)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      Matrix& gp = t.grad_mut(id);
      for (std::size_t i = 0; i < gp.rows(); ++i)
        for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, off + j);
      off += gp.cols();
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Matrix& tv = table.value();
  Matrix out(indices.size(), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tv.rows()) throw ShapeError("gather_rows: index out of range");
    auto src = tv.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t it = table.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape()->record(std::move(out), [it, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad_mut(it);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = g.row(i);
      auto dst = gt.row(idx[i]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var masked_attention(Var q, Var k, Var v, Var bias) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query/key width mismatch");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value length mismatch");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var scores = add(scale(matmul_nt(q, k), inv_sqrt_d), bias);
  return matmul(softmax_rows(scores), v);
}

Var cross_entropy(Var logits, std::size_t y) {
  const std::size_t target = y;
  return cross_entropy_rows(logits, std::span<const std::size_t>(&target, 1));
}

Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets) {
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows()) throw ShapeError("cross_entropy: one target per row required");
  if (lv.cols() < 2) throw ShapeError("cross_entropy: need at least 2 classes");
  Matrix probs(lv.rows(), lv.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    if (targets[i] >= lv.cols()) throw DataError("cross_entropy: class index out of range");
    auto row = lv.row(i);
    const double lse = log_sum_exp(row);
    loss += lse - row[targets[i]];
    for (std::size_t j = 0; j < row.size(); ++j) probs(i, j) = std::exp(row[j] - lse);
  }
  const std::size_t il = logits.id();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return logits.tape()->record(
      Matrix(1, 1, loss), [il, tg = std::move(tg), probs = std::move(probs)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Matrix& gl = t.grad_mut(il);
        for (std::size_t i = 0; i < probs.rows(); ++i) {
          for (std::size_t j = 0; j < probs.cols(); ++j) {
            gl(i, j) += g * (probs(i, j) - (j == tg[i] ? 1.0 : 0.0));
          }
        }
      });
}

Var weighted_bce_with_logits(Var logits, std::span<const double> targets, std::span<const double> mask,
                             double alpha) {
  const Matrix& lv = logits.value();
  const std::size_t n = lv.size();
  if (targets.size() != n || mask.size() != n) throw ShapeError("wbce: logits/targets/mask length mismatch");
  double denom = 0.0;
  for (double m : mask) denom += m;
  if (denom <= 0.0) throw DataError("wbce: every candidate is masked out");
  // loss_j = alpha*y*softplus(-l) + (1-y)*softplus(l)
  auto softplus = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  double total = 0.0;
  Matrix dl(1, n);
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j] == 0.0) continue;
    const double l = lv[j], y = targets[j];
    total += mask[j] * (alpha * y * softplus(-l) + (1.0 - y) * softplus(l));
    const double s = convgot::sigmoid(l);
    dl[j] = mask[j] * (-alpha * y * (1.0 - s) + (1.0 - y) * s) / denom;
  }
  const std::size_t il = logits.id();
  return logits.tape()->record(Matrix(1, 1, total / denom), [il, dl = std::move(dl)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Matrix& gl = t.grad_mut(il);
    for (std::size_t j = 0; j < dl.size(); ++j) gl[j] += g * dl[j];
  });
}

Var masked_rank_loss(Var logits, std::span<const double> targets, std::span<const double> mask) {
  const Matrix& lv = logits.value();
  const std::size_t n = lv.size();
  if (targets.size() != n || mask.size() != n) throw ShapeError("rank loss: logits/targets/mask length mismatch");
  std::vector<double> masked(n, kMasked);
  std::size_t positives = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j] != 0.0) masked[j] = lv[j];
    if (mask[j] != 0.0 && targets[j] != 0.0) ++positives;
  }
  Matrix dl(1, n);
  double loss = 0.0;
  if (positives > 0) {
    const double lse = log_sum_exp(masked);
    const double inv = 1.0 / static_cast<double>(positives);
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[j] == 0.0) continue;
      const double p = std::exp(masked[j] - lse);
      // each positive contributes (p_j - [j==pos]) to every masked-in logit
      dl[j] += p;
      if (targets[j] != 0.0) {
        loss += (lse - masked[j]) * inv;
        dl[j] -= inv;
      }
    }
  }
  const std::size_t il = logits.id();
  return logits.tape()->record(Matrix(1, 1, loss), [il, dl = std::move(dl)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Matrix& gl = t.grad_mut(il);
    for (std::size_t j = 0; j < dl.size(); ++j) gl[j] += g * dl[j];
  });
}

}  // namespace ad
}  // namespace convgot
