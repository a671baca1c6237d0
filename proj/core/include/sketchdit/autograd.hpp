#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace sketchdit {

// Token-major activations: one row per token, one column per channel.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVec = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Mat value;
  bool trainable = true;
};

using GradMap = std::unordered_map<const Parameter*, Mat>;

struct Var {
  int id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

/// Wengert-list reverse-mode differentiation over dense matrices.
///
/// Nodes are appended in evaluation order, so the reverse of the node list is
/// a valid topological order for backpropagation. A tape is single-threaded;
/// concurrent forwards use one tape each over shared read-only parameters.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool recording() const { return record_; }

  Var constant(Mat value);
  // Parameters are referenced, not copied; the parameter must outlive the tape.
  Var param(const Parameter& p);

  [[nodiscard]] const Mat& value(Var v) const;
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Empty matrix when no gradient reached the node.
  [[nodiscard]] const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  void backward(Var scalar_output);
  void accumulate_param_grads(GradMap& out) const;

  // Op authoring interface.
  Var push(Mat value, bool requires_grad);
  void set_backward(Var v, BackwardFn fn);
  Mat& grad_ref(Var v);
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

// Differentiable operations. All shapes follow the token-major convention.
namespace ops {

Var matmul(Tape& t, Var a, Var b);
Var linear(Tape& t, Var x, Var weight, Var bias);
Var linear(Tape& t, Var x, Var weight);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_row(Tape& t, Var a, Var row);
Var layer_norm(Tape& t, Var x, double eps = 1e-6);
// y = x * (1 + scale) + shift with per-channel row vectors.
Var modulate(Tape& t, Var x, Var shift, Var scale);
Var gelu(Tape& t, Var x);
Var silu(Tape& t, Var x);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, Var a, Var b);
Var slice_rows(Tape& t, Var x, int begin, int count);
Var slice_cols(Tape& t, Var x, int begin, int count);
Var gather_rows(Tape& t, Var x, const std::vector<int>& rows);
// Adds `delta` into rows [offset, offset + delta.rows()) of `x`.
Var add_rows_at(Tape& t, Var x, Var delta, int offset);
// Scales row r by the constant weights[r].
Var mul_rows(Tape& t, Var x, const ColVec& weights);
Var sum(Tape& t, Var x);
Var mse(Tape& t, Var prediction, const Mat& target);

struct AttentionProbs {
  std::vector<Mat> heads;  // [queries, keys] per head
};

// Multi-head softmax(Q K^T / sqrt(d_head)) V. Heads split the channel axis.
Var attention(Tape& t, Var q, Var k, Var v, int heads, AttentionProbs* capture = nullptr);

}  // namespace ops

}  // namespace sketchdit
