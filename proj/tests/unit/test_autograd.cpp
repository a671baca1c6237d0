#include "sketchdit/autograd.hpp"
#include "sketchdit/errors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace sketchdit;
using sketchdit::testing::gradient_check;

namespace {

Parameter make_param(const std::string& name, int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Parameter p{name, Mat(rows, cols), true};
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
  return p;
}

// Projects the op output onto a fixed random matrix so every output entry matters.
Var project(Tape& t, Var y, std::uint64_t seed) {
  const Mat& v = t.value(y);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat w(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  return ops::sum(t, ops::mul(t, y, t.constant(w)));
}

void expect_gradients(std::vector<Parameter*> params, const std::function<Var(Tape&)>& f) {
  const auto r = gradient_check(params, f, 60, 11);
  EXPECT_LT(r.max_relative_error, 1e-6) << r.worst;
}

}  // namespace

TEST(Tape, ConstantsCarryNoGradient) {
  Tape t;
  Var c = t.constant(Mat::Ones(2, 2));
  EXPECT_FALSE(t.requires_grad(c));
  Parameter p{"p", Mat::Ones(2, 2), true};
  Var x = t.param(p);
  EXPECT_TRUE(t.requires_grad(x));
  t.backward(ops::sum(t, ops::mul(t, x, c)));
  GradMap g;
  t.accumulate_param_grads(g);
  EXPECT_TRUE(g.at(&p).isApprox(Mat::Ones(2, 2)));
}

TEST(Tape, FrozenParameterHasNoGradient) {
  Tape t;
  Parameter p{"p", Mat::Ones(2, 2), false};
  Var x = t.param(p);
  EXPECT_FALSE(t.requires_grad(x));
}

TEST(Tape, ParameterReusedAccumulates) {
  Tape t;
  Parameter p{"p", Mat::Constant(1, 1, 3.0), true};
  Var a = t.param(p);
  Var b = t.param(p);
  t.backward(ops::sum(t, ops::mul(t, a, b)));
  GradMap g;
  t.accumulate_param_grads(g);
  EXPECT_DOUBLE_EQ(g.at(&p)(0, 0), 6.0);
}

TEST(Ops, MatmulAndLinear) {
  Parameter x = make_param("x", 5, 4, 1), w = make_param("w", 4, 3, 2), b = make_param("b", 1, 3, 3);
  expect_gradients({&x, &w, &b}, [&](Tape& t) {
    return project(t, ops::linear(t, t.param(x), t.param(w), t.param(b)), 9);
  });
  expect_gradients({&x, &w}, [&](Tape& t) { return project(t, ops::matmul(t, t.param(x), t.param(w)), 8); });
}

TEST(Ops, Elementwise) {
  Parameter a = make_param("a", 3, 4, 1), b = make_param("b", 3, 4, 2);
  expect_gradients({&a, &b}, [&](Tape& t) {
    Var x = ops::add(t, t.param(a), ops::scale(t, t.param(b), 0.7));
    Var y = ops::mul(t, ops::sub(t, t.param(a), t.param(b)), x);
    return project(t, ops::add(t, ops::gelu(t, y), ops::silu(t, x)), 5);
  });
}

TEST(Ops, NormAndModulation) {
  Parameter x = make_param("x", 6, 8, 1), shift = make_param("shift", 1, 8, 2), scale = make_param("scale", 1, 8, 3);
  expect_gradients({&x, &shift, &scale}, [&](Tape& t) {
    Var n = ops::layer_norm(t, t.param(x));
    return project(t, ops::modulate(t, n, t.param(shift), t.param(scale)), 4);
  });
}

TEST(Ops, LayerNormOutputIsStandardised) {
  Tape t;
  Parameter x = make_param("x", 3, 16, 7);
  const Mat& y = t.value(ops::layer_norm(t, t.param(x)));
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR((y.row(r).array() - y.row(r).mean()).square().mean(), 1.0, 1e-4);
  }
}

TEST(Ops, RowAndColumnPlumbing) {
  Parameter a = make_param("a", 4, 6, 1), b = make_param("b", 2, 6, 2), r = make_param("r", 1, 6, 3);
  ColVec w(4);
  w << 1.0, 0.0, 0.5, -2.0;
  expect_gradients({&a, &b, &r}, [&](Tape& t) {
    Var x = ops::concat_rows(t, {t.param(a), t.param(b)});
    x = ops::add_row(t, x, t.param(r));
    Var s = ops::slice_rows(t, x, 1, 4);
    s = ops::mul_rows(t, s, w);
    Var c = ops::concat_cols(t, s, ops::slice_cols(t, s, 2, 3));
    Var g = ops::gather_rows(t, c, {3, 0, 0, 2});
    Var z = ops::add_rows_at(t, ops::slice_rows(t, x, 0, 5), ops::slice_cols(t, g, 0, 6), 1);
    return ops::add(t, project(t, g, 5), project(t, z, 6));
  });
}

TEST(Ops, Mse) {
  Parameter a = make_param("a", 3, 3, 1);
  const Mat target = Mat::Constant(3, 3, 0.25);
  expect_gradients({&a}, [&](Tape& t) { return ops::mse(t, t.param(a), target); });
  Tape t;
  Parameter z{"z", target, true};
  EXPECT_DOUBLE_EQ(t.value(ops::mse(t, t.param(z), target))(0, 0), 0.0);
}

TEST(Ops, AttentionGradients) {
  Parameter q = make_param("q", 5, 8, 1), k = make_param("k", 3, 8, 2), v = make_param("v", 3, 8, 3);
  expect_gradients({&q, &k, &v}, [&](Tape& t) {
    return project(t, ops::attention(t, t.param(q), t.param(k), t.param(v), 2), 4);
  });
}

TEST(Ops, AttentionRowsAreStochastic) {
  Tape t;
  Parameter q = make_param("q", 5, 8, 1), k = make_param("k", 7, 8, 2), v = make_param("v", 7, 8, 3);
  ops::AttentionProbs probs;
  (void)ops::attention(t, t.param(q), t.param(k), t.param(v), 4, &probs);
  ASSERT_EQ(probs.heads.size(), 4u);
  for (const Mat& p : probs.heads) {
    EXPECT_EQ(p.rows(), 5);
    EXPECT_EQ(p.cols(), 7);
    EXPECT_TRUE((p.array() >= 0).all());
    for (int r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
  }
}

TEST(Ops, ShapeMismatchThrows) {
  Tape t;
  Var a = t.constant(Mat::Ones(2, 3));
  Var b = t.constant(Mat::Ones(2, 2));
  EXPECT_THROW((void)ops::matmul(t, a, b), ShapeError);
  EXPECT_THROW((void)ops::add(t, a, b), ShapeError);
}
