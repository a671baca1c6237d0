#include "sketchdit/autograd.hpp"
#include "sketchdit/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace sketchdit {

Var Tape::constant(Mat value) { return push(std::move(value), false); }

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var{it->second};
  }
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = record_ && p.trainable;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var{id};
}

const Mat& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref != nullptr ? *n.ref : n.value;
}

Var Tape::push(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_backward(Var v, BackwardFn fn) {
  if (nodes_[v.id].requires_grad) nodes_[v.id].backward = std::move(fn);
}

Mat& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Mat& val = value(v);
    n.grad = Mat::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var scalar_output) {
  const Mat& out = value(scalar_output);
  if (out.rows() != 1 || out.cols() != 1) {
    throw std::invalid_argument("backward() requires a scalar output");
  }
  if (!nodes_[scalar_output.id].requires_grad) return;
  grad_ref(scalar_output)(0, 0) += 1.0;
  for (int i = scalar_output.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this);
  }
}

void Tape::accumulate_param_grads(GradMap& out) const {
  for (const auto& [param, id] : param_nodes_) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    auto it = out.find(param);
    if (it == out.end()) {
      out.emplace(param, n.grad);
    } else {
      it->second += n.grad;
    }
  }
}

namespace ops {
namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ShapeError(what);
}

bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (t.requires_grad(v)) return true;
  }
  return false;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Mat& A = t.value(a);
  const Mat& B = t.value(b);
  require(A.cols() == B.rows(), "matmul: inner dimension mismatch");
  Var out = t.push(A * B, any_grad(t, {a, b}));
  t.set_backward(out, [a, b, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(a)) tp.grad_ref(a).noalias() += g * tp.value(b).transpose();
    if (tp.requires_grad(b)) tp.grad_ref(b).noalias() += tp.value(a).transpose() * g;
  });
  return out;
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Mat& X = t.value(x);
  const Mat& W = t.value(weight);
  const Mat& B = t.value(bias);
  require(X.cols() == W.rows(), "linear: input width mismatch");
  require(B.rows() == 1 && B.cols() == W.cols(), "linear: bias shape mismatch");
  Mat y = X * W;
  y.rowwise() += B.row(0);
  Var out = t.push(std::move(y), any_grad(t, {x, weight, bias}));
  t.set_backward(out, [x, weight, bias, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(x)) tp.grad_ref(x).noalias() += g * tp.value(weight).transpose();
    if (tp.requires_grad(weight)) tp.grad_ref(weight).noalias() += tp.value(x).transpose() * g;
    if (tp.requires_grad(bias)) tp.grad_ref(bias) += g.colwise().sum();
  });
  return out;
}

Var linear(Tape& t, Var x, Var weight) { return matmul(t, x, weight); }

Var add(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "add: shape mismatch");
  Var out = t.push(t.value(a) + t.value(b), any_grad(t, {a, b}));
  t.set_backward(out, [a, b, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(a)) tp.grad_ref(a) += g;
    if (tp.requires_grad(b)) tp.grad_ref(b) += g;
  });
  return out;
}

Var sub(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "sub: shape mismatch");
  Var out = t.push(t.value(a) - t.value(b), any_grad(t, {a, b}));
  t.set_backward(out, [a, b, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(a)) tp.grad_ref(a) += g;
    if (tp.requires_grad(b)) tp.grad_ref(b) -= g;
  });
  return out;
}

Var mul(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "mul: shape mismatch");
  Var out = t.push(t.value(a).cwiseProduct(t.value(b)), any_grad(t, {a, b}));
  t.set_backward(out, [a, b, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(a)) tp.grad_ref(a) += g.cwiseProduct(tp.value(b));
    if (tp.requires_grad(b)) tp.grad_ref(b) += g.cwiseProduct(tp.value(a));
  });
  return out;
}

Var scale(Tape& t, Var a, double s) {
  Var out = t.push(t.value(a) * s, t.requires_grad(a));
  t.set_backward(out, [a, s, out](Tape& tp) { tp.grad_ref(a) += tp.grad(out) * s; });
  return out;
}

Var add_row(Tape& t, Var a, Var row) {
  const Mat& R = t.value(row);
  require(R.rows() == 1 && R.cols() == t.value(a).cols(), "add_row: shape mismatch");
  Mat y = t.value(a);
  y.rowwise() += R.row(0);
  Var out = t.push(std::move(y), any_grad(t, {a, row}));
  t.set_backward(out, [a, row, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(a)) tp.grad_ref(a) += g;
    if (tp.requires_grad(row)) tp.grad_ref(row) += g.colwise().sum();
  });
  return out;
}

Var layer_norm(Tape& t, Var x, double eps) {
  const Mat& X = t.value(x);
  const Eigen::Index n = X.cols();
  Mat y(X.rows(), n);
  auto rstd = std::make_shared<ColVec>(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mean = X.row(r).mean();
    const double var = (X.row(r).array() - mean).square().mean();
    const double s = 1.0 / std::sqrt(var + eps);
    (*rstd)(r) = s;
    y.row(r) = (X.row(r).array() - mean) * s;
  }
  Var out = t.push(std::move(y), t.requires_grad(x));
  t.set_backward(out, [x, out, rstd](Tape& tp) {
    const Mat& g = tp.grad(out);
    const Mat& Y = tp.value(out);
    Mat& gx = tp.grad_ref(x);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double mg = g.row(r).mean();
      const double mgy = g.row(r).dot(Y.row(r)) / static_cast<double>(g.cols());
      gx.row(r).array() += (*rstd)(r) * (g.row(r).array() - mg - Y.row(r).array() * mgy);
    }
  });
  return out;
}

Var modulate(Tape& t, Var x, Var shift, Var scale) {
  const Mat& X = t.value(x);
  const Mat& Sh = t.value(shift);
  const Mat& Sc = t.value(scale);
  require(Sh.rows() == 1 && Sc.rows() == 1 && Sh.cols() == X.cols() && Sc.cols() == X.cols(),
          "modulate: shape mismatch");
  Mat y = (X.array().rowwise() * (Sc.row(0).array() + 1.0)).matrix();
  y.rowwise() += Sh.row(0);
  Var out = t.push(std::move(y), any_grad(t, {x, shift, scale}));
  t.set_backward(out, [x, shift, scale, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(x)) {
      tp.grad_ref(x).array() += g.array().rowwise() * (tp.value(scale).row(0).array() + 1.0);
    }
    if (tp.requires_grad(shift)) tp.grad_ref(shift) += g.colwise().sum();
    if (tp.requires_grad(scale)) tp.grad_ref(scale) += g.cwiseProduct(tp.value(x)).colwise().sum();
  });
  return out;
}

Var gelu(Tape& t, Var x) {
  const Mat& X = t.value(x);
  Mat y = X.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  });
  Var out = t.push(std::move(y), t.requires_grad(x));
  t.set_backward(out, [x, out](Tape& tp) {
    const Mat& X = tp.value(x);
    Mat d = X.unaryExpr([](double v) {
      const double u = kGeluC * (v + 0.044715 * v * v * v);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    });
    tp.grad_ref(x) += tp.grad(out).cwiseProduct(d);
  });
  return out;
}

Var silu(Tape& t, Var x) {
  const Mat& X = t.value(x);
  Mat y = X.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
  Var out = t.push(std::move(y), t.requires_grad(x));
  t.set_backward(out, [x, out](Tape& tp) {
    Mat d = tp.value(x).unaryExpr([](double v) {
      const double s = 1.0 / (1.0 + std::exp(-v));
      return s * (1.0 + v * (1.0 - s));
    });
    tp.grad_ref(x) += tp.grad(out).cwiseProduct(d);
  });
  return out;
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = t.value(parts.front()).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    require(t.value(p).cols() == cols, "concat_rows: width mismatch");
    rows += t.value(p).rows();
    rg = rg || t.requires_grad(p);
  }
  Mat y(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    const Mat& v = t.value(p);
    if (v.rows() > 0) y.middleRows(r, v.rows()) = v;
    r += v.rows();
  }
  Var out = t.push(std::move(y), rg);
  t.set_backward(out, [parts, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    Eigen::Index r0 = 0;
    for (Var p : parts) {
      const Eigen::Index n = tp.value(p).rows();
      if (tp.requires_grad(p) && n > 0) tp.grad_ref(p) += g.middleRows(r0, n);
      r0 += n;
    }
  });
  return out;
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Mat& A = t.value(a);
  const Mat& B = t.value(b);
  require(A.rows() == B.rows(), "concat_cols: row mismatch");
  Mat y(A.rows(), A.cols() + B.cols());
  y.leftCols(A.cols()) = A;
  y.rightCols(B.cols()) = B;
  const Eigen::Index ca = A.cols();
  const Eigen::Index cb = B.cols();
  Var out = t.push(std::move(y), any_grad(t, {a, b}));
  t.set_backward(out, [a, b, out, ca, cb](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(a)) tp.grad_ref(a) += g.leftCols(ca);
    if (tp.requires_grad(b)) tp.grad_ref(b) += g.rightCols(cb);
  });
  return out;
}

Var slice_rows(Tape& t, Var x, int begin, int count) {
  const Mat& X = t.value(x);
  require(begin >= 0 && count >= 0 && begin + count <= X.rows(), "slice_rows: out of range");
  Var out = t.push(X.middleRows(begin, count), t.requires_grad(x));
  t.set_backward(out, [x, out, begin, count](Tape& tp) {
    tp.grad_ref(x).middleRows(begin, count) += tp.grad(out);
  });
  return out;
}

Var slice_cols(Tape& t, Var x, int begin, int count) {
  const Mat& X = t.value(x);
  require(begin >= 0 && count >= 0 && begin + count <= X.cols(), "slice_cols: out of range");
  Var out = t.push(X.middleCols(begin, count), t.requires_grad(x));
  t.set_backward(out, [x, out, begin, count](Tape& tp) {
    tp.grad_ref(x).middleCols(begin, count) += tp.grad(out);
  });
  return out;
}

Var gather_rows(Tape& t, Var x, const std::vector<int>& rows) {
  const Mat& X = t.value(x);
  Mat y(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < X.rows(), "gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  }
  Var out = t.push(std::move(y), t.requires_grad(x));
  t.set_backward(out, [x, out, rows](Tape& tp) {
    const Mat& g = tp.grad(out);
    Mat& gx = tp.grad_ref(x);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
  return out;
}

Var add_rows_at(Tape& t, Var x, Var delta, int offset) {
  const Mat& X = t.value(x);
  const Mat& D = t.value(delta);
  require(D.cols() == X.cols() && offset >= 0 && offset + D.rows() <= X.rows(),
          "add_rows_at: shape mismatch");
  Mat y = X;
  y.middleRows(offset, D.rows()) += D;
  const Eigen::Index n = D.rows();
  Var out = t.push(std::move(y), any_grad(t, {x, delta}));
  t.set_backward(out, [x, delta, out, offset, n](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(x)) tp.grad_ref(x) += g;
    if (tp.requires_grad(delta)) tp.grad_ref(delta) += g.middleRows(offset, n);
  });
  return out;
}

Var mul_rows(Tape& t, Var x, const ColVec& weights) {
  const Mat& X = t.value(x);
  require(weights.size() == X.rows(), "mul_rows: weight count mismatch");
  Mat y = (X.array().colwise() * weights.array()).matrix();
  Var out = t.push(std::move(y), t.requires_grad(x));
  t.set_backward(out, [x, out, weights](Tape& tp) {
    tp.grad_ref(x).array() += tp.grad(out).array().colwise() * weights.array();
  });
  return out;
}

Var sum(Tape& t, Var x) {
  Mat y(1, 1);
  y(0, 0) = t.value(x).sum();
  Var out = t.push(std::move(y), t.requires_grad(x));
  t.set_backward(out, [x, out](Tape& tp) { tp.grad_ref(x).array() += tp.grad(out)(0, 0); });
  return out;
}

Var mse(Tape& t, Var prediction, const Mat& target) {
  const Mat& P = t.value(prediction);
  require(P.rows() == target.rows() && P.cols() == target.cols(), "mse: shape mismatch");
  Mat diff = P - target;
  const double n = static_cast<double>(diff.size());
  Mat y(1, 1);
  y(0, 0) = diff.squaredNorm() / n;
  Var out = t.push(std::move(y), t.requires_grad(prediction));
  auto d = std::make_shared<Mat>(std::move(diff));
  t.set_backward(out, [prediction, out, d, n](Tape& tp) {
    tp.grad_ref(prediction) += (*d) * (2.0 * tp.grad(out)(0, 0) / n);
  });
  return out;
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, AttentionProbs* capture) {
  const Mat& Q = t.value(q);
  const Mat& K = t.value(k);
  const Mat& V = t.value(v);
  require(heads > 0 && Q.cols() % heads == 0, "attention: width not divisible by heads");
  require(Q.cols() == K.cols() && K.rows() == V.rows(), "attention: shape mismatch");
  require(V.cols() == Q.cols(), "attention: value width mismatch");
  const int dh = static_cast<int>(Q.cols()) / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Mat>>(heads);
  Mat y(Q.rows(), V.cols());
  for (int h = 0; h < heads; ++h) {
    Mat s = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * inv;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
    y.middleCols(h * dh, dh).noalias() = s * V.middleCols(h * dh, dh);
    (*probs)[h] = std::move(s);
  }
  if (capture != nullptr) capture->heads = *probs;
  Var out = t.push(std::move(y), any_grad(t, {q, k, v}));
  t.set_backward(out, [q, k, v, out, heads, dh, inv, probs](Tape& tp) {
    const Mat& g = tp.grad(out);
    const bool gq = tp.requires_grad(q);
    const bool gk = tp.requires_grad(k);
    const bool gv = tp.requires_grad(v);
    for (int h = 0; h < heads; ++h) {
      const Mat& P = (*probs)[h];
      const auto gh = g.middleCols(h * dh, dh);
      if (gv) tp.grad_ref(v).middleCols(h * dh, dh).noalias() += P.transpose() * gh;
      if (!gq && !gk) continue;
      Mat dp = gh * tp.value(v).middleCols(h * dh, dh).transpose();
      ColVec rowdot = (dp.cwiseProduct(P)).rowwise().sum();
      Mat ds = P.cwiseProduct(dp.colwise() - rowdot) * inv;
      if (gq) tp.grad_ref(q).middleCols(h * dh, dh).noalias() += ds * tp.value(k).middleCols(h * dh, dh);
      if (gk) tp.grad_ref(k).middleCols(h * dh, dh).noalias() += ds.transpose() * tp.value(q).middleCols(h * dh, dh);
    }
  });
  return out;
}

}  // namespace ops
}  // namespace sketchdit
