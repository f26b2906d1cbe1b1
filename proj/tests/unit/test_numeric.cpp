#include <cmath>
#include <random>

#include "doctest.h"

#include "convgot/autodiff.hpp"
#include "convgot/checkpoint.hpp"
#include "convgot/errors.hpp"
#include "convgot/grad_check.hpp"
#include "convgot/matrix.hpp"
#include "convgot/optimizer.hpp"
#include "convgot/random.hpp"

using namespace convgot;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.data()) v = n(rng);
  return m;
}

// straightforward triple loop, kept separate from the kernel
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_CASE("matrix construction and shape errors") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  const Matrix i = Matrix::identity(3);
  CHECK(i(1, 1) == 1.0);
  CHECK(i(0, 1) == 0.0);
}

TEST_CASE("matmul agrees with naive loops") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(1 + trial % 5, 3 + trial % 4, rng);
    const Matrix b = random_matrix(a.cols(), 2 + trial % 3, rng);
    const Matrix got = matmul(a, b);
    const Matrix want = naive_matmul(a, b);
    for (std::size_t k = 0; k < got.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    const Matrix nt = matmul_nt(a, transpose(b));
    for (std::size_t k = 0; k < got.size(); ++k) CHECK(nt[k] == doctest::Approx(want[k]).epsilon(1e-12));
  }
}

TEST_CASE("softmax handles masks and large values") {
  Matrix x(1, 3, std::vector<double>{1000.0, 1000.0, kMasked});
  const Matrix p = softmax_rowwise(x);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
  CHECK(p[2] == 0.0);
  CHECK_THROWS_AS(softmax_rowwise(Matrix(1, 2, kMasked)), DataError);
}

TEST_CASE("cross entropy") {
  const std::vector<double> uniform(4, 0.3);
  CHECK(cross_entropy(uniform, 2) == doctest::Approx(std::log(4.0)));
  const std::vector<double> confident{50.0, 0.0, 0.0, 0.0};
  CHECK(cross_entropy(confident, 0) < 1e-20);
  CHECK_THROWS_AS(cross_entropy(uniform, 4), DataError);
  CHECK_THROWS_AS(cross_entropy(std::vector<double>{1.0}, 0), ShapeError);
}

TEST_CASE("causal bias masks the future") {
  const Matrix b = causal_bias(4, 0.5);
  CHECK(b(2, 0) == doctest::Approx(-1.0));
  CHECK(b(2, 2) == 0.0);
  CHECK(b(1, 3) == kMasked);
  // span counts positions including the diagonal
  const Matrix limited = causal_bias(4, 0.5, 2);
  CHECK(limited(3, 2) == doctest::Approx(-0.5));
  CHECK(limited(3, 1) == kMasked);
}

TEST_CASE("attention over a single position returns its value") {
  Rng rng(3);
  const Matrix q = random_matrix(1, 4, rng), k = random_matrix(1, 4, rng), v = random_matrix(1, 4, rng);
  const Matrix out = masked_attention(q, k, v, causal_bias(1, 0.1));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-14));
}

TEST_CASE("gradient check over each tape op") {
  Rng rng(11);
  ParamSet p;
  p.add("a", random_matrix(3, 4, rng, 0.7));
  p.add("b", random_matrix(4, 2, rng, 0.7));
  p.add("r", random_matrix(1, 4, rng, 0.7));
  p.add("s", random_matrix(1, 1, rng, 0.7));
  const std::vector<double> targets{1, 0, 1, 0};
  const std::vector<double> mask{1, 1, 1, 0};

  SUBCASE("dense composite") {
    auto loss = [](ParamBinder& b) {
      Var a = b("a");
      Var h = ad::tanh(ad::add_row(a, b("r")));
      Var m = ad::matmul(h, b("b"));
      Var att = ad::masked_attention(a, a, h, b.tape().constant(causal_bias(3, 0.2)));
      Var t = ad::sigmoid(ad::matmul_nt(att, a));
      Var z = ad::scalar_mul(b("s"), ad::square(m));
      Var c = ad::concat_cols(std::vector<Var>{ad::cols(t, 0, 2), ad::rows(z, 0, 3)});
      return ad::add(ad::sum(c), ad::cross_entropy_rows(ad::softmax_rows(m), std::vector<std::size_t>{0, 1, 1}));
    };
    const auto report = grad_check(p, loss);
    CHECK(report.max_rel_error <= 1e-6);
    CHECK(report.checked == p.scalar_count());
  }
  SUBCASE("selection losses") {
    auto loss = [&](ParamBinder& b) {
      Var logits = ad::scale(b("r"), 2.0);
      return ad::add(ad::weighted_bce_with_logits(logits, targets, mask, 2.0),
                     ad::masked_rank_loss(logits, targets, mask));
    };
    CHECK(grad_check(p, loss).max_rel_error <= 1e-6);
  }
  SUBCASE("gather and cross entropy") {
    auto loss = [](ParamBinder& b) {
      Var g = ad::gather_rows(b("a"), std::vector<std::size_t>{2, 0, 2});
      return ad::cross_entropy(ad::rows(g, 1, 1), 3);
    };
    CHECK(grad_check(p, loss).max_rel_error <= 1e-6);
  }
}

TEST_CASE("rank loss is zero without positives and bce needs an unmasked candidate") {
  Tape tape;
  Var l = tape.constant(Matrix(1, 3, std::vector<double>{0.1, 0.2, 0.3}));
  const std::vector<double> none{0, 0, 0}, all{1, 1, 1}, masked{0, 0, 0};
  CHECK(ad::masked_rank_loss(l, none, all).scalar() == 0.0);
  CHECK_THROWS_AS(ad::weighted_bce_with_logits(l, none, masked, 1.0), DataError);
}

TEST_CASE("relative error floor") {
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 1.001) == doctest::Approx(0.001 / 1.001));
}

TEST_CASE("AdamW with zero gradients only decays") {
  ParamSet p;
  p.add("w", Matrix(1, 2, std::vector<double>{1.0, -2.0}));
  OptimizerConfig cfg;
  cfg.warmup_steps = 0;
  AdamW opt(cfg);
  p.zero_grad();
  opt.step(p);
  CHECK(p.at("w").value[0] == doctest::Approx(1.0 * (1.0 - cfg.lr * cfg.weight_decay)).epsilon(1e-15));
  CHECK(p.at("w").value[1] == doctest::Approx(-2.0 * (1.0 - cfg.lr * cfg.weight_decay)).epsilon(1e-15));
}

TEST_CASE("gradient clipping rescales to the max norm") {
  ParamSet p;
  p.add("w", Matrix(1, 2));
  p.at("w").grad = Matrix(1, 2, std::vector<double>{6.0, 8.0});
  CHECK(clip_grad_norm(p, 1.0) == doctest::Approx(10.0));
  CHECK(p.at("w").grad[0] == doctest::Approx(0.6));
  CHECK(p.at("w").grad[1] == doctest::Approx(0.8));
  p.at("w").grad[0] = std::nan("");
  CHECK_THROWS_AS(clip_grad_norm(p, 1.0), NumericError);
}

TEST_CASE("learning rate schedule") {
  OptimizerConfig cfg;
  cfg.warmup_steps = 10;
  cfg.total_steps = 110;
  // step is zero-based, so the first update already uses lr / warmup
  CHECK(scheduled_lr(cfg, 0) == doctest::Approx(cfg.lr * 0.1));
  CHECK(scheduled_lr(cfg, 4) == doctest::Approx(cfg.lr * 0.5));
  CHECK(scheduled_lr(cfg, 10) == doctest::Approx(cfg.lr));
  CHECK(scheduled_lr(cfg, 60) == doctest::Approx(cfg.lr * 0.5));
  CHECK(scheduled_lr(cfg, 110) == doctest::Approx(0.0));
}

TEST_CASE("derived seeds are stable and independent") {
  CHECK(derive_seed(42, "a") == derive_seed(42, "a"));
  CHECK(derive_seed(42, "a") != derive_seed(42, "b"));
  CHECK(derive_seed(42, "a", 1) != derive_seed(42, "a", 2));
  Rng r1 = make_rng(1, "x"), r2 = make_rng(1, "x");
  CHECK(xavier_uniform(3, 3, r1) == xavier_uniform(3, 3, r2));
}

TEST_CASE("checkpoint round trip is byte stable") {
  Rng rng(5);
  ParamSet p;
  p.add("z", random_matrix(2, 3, rng));
  p.add("a", random_matrix(1, 1, rng));
  const auto j = params_to_json(p);
  const ParamSet q = params_from_json(j);
  CHECK(params_to_json(q).dump() == j.dump());
  ParamSet wrong;
  wrong.add("z", Matrix(3, 2));
  wrong.add("a", Matrix(1, 1));
  CHECK_THROWS(load_params_into(wrong, j));
}
