#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

// Reverse-mode differentiation over dense double matrices. Every operation
// appends a node to a Tape; Tape::backward walks the nodes in reverse.

namespace lrtts::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input; its gradient is available after backward().
  Var parameter(Eigen::MatrixXd value);
  /// Input that never receives a gradient.
  Var constant(Eigen::MatrixXd value);

  const Eigen::MatrixXd& value(Var v) const;
  /// Gradient of the differentiated scalar; zero-sized before backward().
  const Eigen::MatrixXd& grad(Var v) const;

  /// Seeds d loss / d loss = 1 and propagates. `loss` must be 1x1 and the tape
  /// can be differentiated once.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Building blocks for the operations below.
  using Backward = std::function<void(Tape&, int self)>;
  Var push(Eigen::MatrixXd value, std::span<const Var> inputs, Backward backward);
  Var push(Eigen::MatrixXd value, std::initializer_list<Var> inputs, Backward backward) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  Eigen::MatrixXd& grad_ref(int id) { return nodes_[id].grad; }
  const Eigen::MatrixXd& value_of(int id) const { return nodes_[id].value; }
  void check(Var v) const;

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    Backward backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a (R x C) + row (1 x C) on every row.
Var add_row_broadcast(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var logistic(Var a);
/// Row softmax restricted to entries where mask != 0; masked entries are 0.
Var masked_softmax_rows(Var a, const Eigen::MatrixXd& mask);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice(Var a, Eigen::Index row, Eigen::Index n_rows, Eigen::Index col, Eigen::Index n_cols);
/// Stacks `times` copies of a vertically.
Var tile_rows(Var a, Eigen::Index times);
/// Column-major reinterpretation.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
/// Sum of `blocks` consecutive equal-height row blocks.
Var sum_row_blocks(Var a, Eigen::Index blocks);
/// Scales row r of a by col(r, 0).
Var mul_col_broadcast(Var a, Var col);
/// Additive attention energies. keys is (N*B x A) with row n*B+b for token n
/// of batch row b, query is (B x A), v is (A x 1); the result is (B x N) with
/// e(b, n) = v . tanh(keys(n*B+b) + query(b)).
Var additive_energy(Var keys, Var query, Var v);
/// weights (B x N), memory (N*B x D) laid out as above; row b of the result
/// is sum_n weights(b, n) * memory(n*B+b).
Var weighted_row_sum(Var weights, Var memory);
/// Sliding windows over the columns of a (B x N): row n*B+b of the (N*B x
/// width) result holds a(b, n - width/2 + j) for j = 0..width-1, with zeros
/// outside 0..N-1.
Var band_unfold(Var a, Eigen::Index width);
/// Row i of the result is table.row(index[i]), or zeros when index[i] < 0.
Var gather_rows(Var table, std::span<const int> index);
/// Mean over rows with mask != 0 (and all columns) of (pred - target)^2.
Var masked_mse(Var pred, const Eigen::MatrixXd& target, const Eigen::VectorXd& row_mask);
/// Mean over rows with mask != 0 of the logistic cross-entropy of a logit
/// column against 0/1 targets.
Var masked_bce_with_logits(Var logits, const Eigen::VectorXd& target,
                           const Eigen::VectorXd& row_mask);

}  // namespace lrtts::ad
