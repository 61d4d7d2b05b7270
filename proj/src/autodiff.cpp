#include "lrtts/autodiff.hpp"

#include "lrtts/error.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace lrtts::ad {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

[[noreturn]] void shape_error(const char* op, const MatrixXd& a, const MatrixXd& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                            std::to_string(a.cols()) + " vs " +
                                            std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

Tape& tape_of(Var a) {
  if (!a.tape) throw Error(ErrorCode::GraphConsistency, "variable not attached to a tape");
  a.tape->check(a);
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape != &t) throw Error(ErrorCode::GraphConsistency, "operands live on different tapes");
  t.check(b);
  return t;
}

void accumulate(Tape& t, int id, const MatrixXd& g) {
  if (t.needs_grad(id)) t.grad_ref(id) += g;
}

}  // namespace

void Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw Error(ErrorCode::GraphConsistency, "variable does not belong to this tape");
  }
}

Var Tape::parameter(MatrixXd value) {
  nodes_.push_back({std::move(value), {}, {}, true});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(MatrixXd value) {
  nodes_.push_back({std::move(value), {}, {}, false});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(MatrixXd value, std::span<const Var> inputs, Backward backward) {
  if (differentiated_) throw Error(ErrorCode::GraphConsistency, "tape already differentiated");
  bool needs = false;
  for (Var v : inputs) needs |= nodes_[v.id].needs_grad;
  nodes_.push_back({std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const MatrixXd& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

const MatrixXd& Tape::grad(Var v) const {
  check(v);
  return nodes_[v.id].grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (differentiated_) throw Error(ErrorCode::GraphConsistency, "backward() called twice");
  if (nodes_[loss.id].value.size() != 1) {
    throw Error(ErrorCode::GraphConsistency, "backward() needs a scalar");
  }
  differentiated_ = true;
  for (int i = 0; i <= loss.id; ++i) {
    if (nodes_[i].needs_grad) nodes_[i].grad = MatrixXd::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = t.value_of(a.id);
  const auto& B = t.value_of(b.id);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  return t.push(A * B, {a, b}, [a, b](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    if (t.needs_grad(a.id)) t.grad_ref(a.id).noalias() += g * t.value_of(b.id).transpose();
    if (t.needs_grad(b.id)) t.grad_ref(b.id).noalias() += t.value_of(a.id).transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = t.value_of(a.id);
  const auto& B = t.value_of(b.id);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
  return t.push(A + B, {a, b}, [a, b](Tape& t, int self) {
    accumulate(t, a.id, t.grad_ref(self));
    accumulate(t, b.id, t.grad_ref(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = t.value_of(a.id);
  const auto& B = t.value_of(b.id);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
  return t.push(A - B, {a, b}, [a, b](Tape& t, int self) {
    accumulate(t, a.id, t.grad_ref(self));
    accumulate(t, b.id, -t.grad_ref(self));
  });
}

Var add_row_broadcast(Var a, Var row) {
  Tape& t = tape_of(a, row);
  const auto& A = t.value_of(a.id);
  const auto& R = t.value_of(row.id);
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_row_broadcast", A, R);
  return t.push(A.rowwise() + R.row(0), {a, row}, [a, row](Tape& t, int self) {
    accumulate(t, a.id, t.grad_ref(self));
    if (t.needs_grad(row.id)) t.grad_ref(row.id) += t.grad_ref(self).colwise().sum();
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& A = t.value_of(a.id);
  const auto& B = t.value_of(b.id);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  return t.push(A.cwiseProduct(B), {a, b}, [a, b](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    if (t.needs_grad(a.id)) t.grad_ref(a.id) += g.cwiseProduct(t.value_of(b.id));
    if (t.needs_grad(b.id)) t.grad_ref(b.id) += g.cwiseProduct(t.value_of(a.id));
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.push(t.value_of(a.id) * s, {a},
                [a, s](Tape& t, int self) { accumulate(t, a.id, t.grad_ref(self) * s); });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  // 1 - 2 / (1 + e^2x) vectorizes through Eigen's exp; libm tanh does not
  MatrixXd y = (1.0 - 2.0 / (1.0 + (2.0 * t.value_of(a.id).array()).exp())).matrix();
  return t.push(std::move(y), {a}, [a](Tape& t, int self) {
    const auto y = t.value_of(self).array();
    t.grad_ref(a.id).array() += t.grad_ref(self).array() * (1.0 - y * y);
  });
}

Var logistic(Var a) {
  Tape& t = tape_of(a);
  MatrixXd y = (1.0 + (-t.value_of(a.id).array()).exp()).inverse().matrix();
  return t.push(std::move(y), {a}, [a](Tape& t, int self) {
    const auto y = t.value_of(self).array();
    t.grad_ref(a.id).array() += t.grad_ref(self).array() * y * (1.0 - y);
  });
}

Var masked_softmax_rows(Var a, const MatrixXd& mask) {
  Tape& t = tape_of(a);
  const auto& A = t.value_of(a.id);
  if (mask.rows() != A.rows() || mask.cols() != A.cols()) shape_error("masked_softmax_rows", A, mask);
  MatrixXd y = MatrixXd::Zero(A.rows(), A.cols());
  for (Index r = 0; r < A.rows(); ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < A.cols(); ++c) {
      if (mask(r, c) != 0.0) peak = std::max(peak, A(r, c));
    }
    if (!std::isfinite(peak)) continue;
    double sum = 0.0;
    for (Index c = 0; c < A.cols(); ++c) {
      if (mask(r, c) != 0.0) sum += (y(r, c) = std::exp(A(r, c) - peak));
    }
    y.row(r) /= sum;
  }
  return t.push(std::move(y), {a}, [a](Tape& t, int self) {
    const MatrixXd& y = t.value_of(self);
    const MatrixXd& g = t.grad_ref(self);
    const Eigen::VectorXd dot = y.cwiseProduct(g).rowwise().sum();
    t.grad_ref(a.id).array() += y.array() * (g.colwise() - dot).array();
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::GraphConsistency, "concat_cols of nothing");
  Tape& t = tape_of(parts[0]);
  Index rows = t.value_of(parts[0].id).rows(), cols = 0;
  for (Var p : parts) {
    tape_of(parts[0], p);
    if (t.value_of(p.id).rows() != rows) shape_error("concat_cols", t.value_of(parts[0].id), t.value_of(p.id));
    cols += t.value_of(p.id).cols();
  }
  MatrixXd out(rows, cols);
  Index c = 0;
  for (Var p : parts) {
    const auto& P = t.value_of(p.id);
    out.middleCols(c, P.cols()) = P;
    c += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [inputs](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    Index c = 0;
    for (Var p : inputs) {
      const Index w = t.value_of(p.id).cols();
      if (t.needs_grad(p.id)) t.grad_ref(p.id) += g.middleCols(c, w);
      c += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::GraphConsistency, "concat_rows of nothing");
  Tape& t = tape_of(parts[0]);
  Index cols = t.value_of(parts[0].id).cols(), rows = 0;
  for (Var p : parts) {
    tape_of(parts[0], p);
    if (t.value_of(p.id).cols() != cols) shape_error("concat_rows", t.value_of(parts[0].id), t.value_of(p.id));
    rows += t.value_of(p.id).rows();
  }
  MatrixXd out(rows, cols);
  Index r = 0;
  for (Var p : parts) {
    const auto& P = t.value_of(p.id);
    out.middleRows(r, P.rows()) = P;
    r += P.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [inputs](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    Index r = 0;
    for (Var p : inputs) {
      const Index h = t.value_of(p.id).rows();
      if (t.needs_grad(p.id)) t.grad_ref(p.id) += g.middleRows(r, h);
      r += h;
    }
  });
}

Var slice(Var a, Index row, Index n_rows, Index col, Index n_cols) {
  Tape& t = tape_of(a);
  const auto& A = t.value_of(a.id);
  if (row < 0 || col < 0 || n_rows < 0 || n_cols < 0 || row + n_rows > A.rows() ||
      col + n_cols > A.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "slice out of range");
  }
  return t.push(A.block(row, col, n_rows, n_cols), {a}, [=](Tape& t, int self) {
    t.grad_ref(a.id).block(row, col, n_rows, n_cols) += t.grad_ref(self);
  });
}

Var tile_rows(Var a, Index times) {
  Tape& t = tape_of(a);
  const auto& A = t.value_of(a.id);
  MatrixXd out(A.rows() * times, A.cols());
  for (Index k = 0; k < times; ++k) out.middleRows(k * A.rows(), A.rows()) = A;
  return t.push(std::move(out), {a}, [a, times](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    const Index h = g.rows() / times;
    for (Index k = 0; k < times; ++k) t.grad_ref(a.id) += g.middleRows(k * h, h);
  });
}

Var reshape(Var a, Index rows, Index cols) {
  Tape& t = tape_of(a);
  const auto& A = t.value_of(a.id);
  if (rows * cols != A.size()) throw Error(ErrorCode::ShapeMismatch, "reshape changes the element count");
  MatrixXd out = Eigen::Map<const MatrixXd>(A.data(), rows, cols);
  return t.push(std::move(out), {a}, [a](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    MatrixXd& ga = t.grad_ref(a.id);
    Eigen::Map<MatrixXd>(ga.data(), g.rows(), g.cols()) += g;
  });
}

Var sum_row_blocks(Var a, Index blocks) {
  Tape& t = tape_of(a);
  const auto& A = t.value_of(a.id);
  if (blocks <= 0 || A.rows() % blocks != 0) {
    throw Error(ErrorCode::ShapeMismatch, "sum_row_blocks: rows not divisible by block count");
  }
  const Index h = A.rows() / blocks;
  MatrixXd out = MatrixXd::Zero(h, A.cols());
  for (Index k = 0; k < blocks; ++k) out += A.middleRows(k * h, h);
  return t.push(std::move(out), {a}, [a, blocks, h](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    for (Index k = 0; k < blocks; ++k) t.grad_ref(a.id).middleRows(k * h, h) += g;
  });
}

Var mul_col_broadcast(Var a, Var col) {
  Tape& t = tape_of(a, col);
  const auto& A = t.value_of(a.id);
  const auto& C = t.value_of(col.id);
  if (C.cols() != 1 || C.rows() != A.rows()) shape_error("mul_col_broadcast", A, C);
  MatrixXd out = (A.array().colwise() * C.col(0).array()).matrix();
  return t.push(std::move(out), {a, col}, [a, col](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    if (t.needs_grad(a.id)) t.grad_ref(a.id).array() += g.array().colwise() * t.value_of(col.id).col(0).array();
    if (t.needs_grad(col.id)) t.grad_ref(col.id) += g.cwiseProduct(t.value_of(a.id)).rowwise().sum();
  });
}

Var additive_energy(Var keys, Var query, Var v) {
  Tape& t = tape_of(keys, query);
  tape_of(keys, v);
  const auto& K = t.value_of(keys.id);
  const auto& Q = t.value_of(query.id);
  const auto& V = t.value_of(v.id);
  const Index B = Q.rows(), A = Q.cols();
  if (B == 0 || K.cols() != A || K.rows() % B != 0) shape_error("additive_energy", K, Q);
  if (V.rows() != A || V.cols() != 1) shape_error("additive_energy", Q, V);
  const Index N = K.rows() / B;
  MatrixXd Z = K;
  for (Index n = 0; n < N; ++n) Z.middleRows(n * B, B) += Q;
  auto H = std::make_shared<MatrixXd>((1.0 - 2.0 / (1.0 + (2.0 * Z.array()).exp())).matrix());
  const VectorXd e = *H * V;
  MatrixXd out = Eigen::Map<const MatrixXd>(e.data(), B, N);
  return t.push(std::move(out), {keys, query, v}, [keys, query, v, H, B, N](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    const Eigen::Map<const VectorXd> gv(g.data(), B * N);
    if (t.needs_grad(v.id)) t.grad_ref(v.id).noalias() += H->transpose() * gv;
    if (!t.needs_grad(keys.id) && !t.needs_grad(query.id)) return;
    const MatrixXd dZ = ((gv * t.value_of(v.id).transpose()).array() * (1.0 - H->array().square())).matrix();
    if (t.needs_grad(keys.id)) t.grad_ref(keys.id) += dZ;
    if (t.needs_grad(query.id)) {
      MatrixXd& gq = t.grad_ref(query.id);
      for (Index n = 0; n < N; ++n) gq += dZ.middleRows(n * B, B);
    }
  });
}

Var weighted_row_sum(Var weights, Var memory) {
  Tape& t = tape_of(weights, memory);
  const auto& W = t.value_of(weights.id);
  const auto& M = t.value_of(memory.id);
  const Index B = W.rows(), N = W.cols();
  if (M.rows() != B * N) shape_error("weighted_row_sum", W, M);
  MatrixXd out = MatrixXd::Zero(B, M.cols());
  for (Index n = 0; n < N; ++n) out += (M.middleRows(n * B, B).array().colwise() * W.col(n).array()).matrix();
  return t.push(std::move(out), {weights, memory}, [weights, memory, B, N](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    const auto& W = t.value_of(weights.id);
    const auto& M = t.value_of(memory.id);
    for (Index n = 0; n < N; ++n) {
      if (t.needs_grad(weights.id)) {
        t.grad_ref(weights.id).col(n) += M.middleRows(n * B, B).cwiseProduct(g).rowwise().sum();
      }
      if (t.needs_grad(memory.id)) {
        t.grad_ref(memory.id).middleRows(n * B, B).array() += g.array().colwise() * W.col(n).array();
      }
    }
  });
}

Var band_unfold(Var a, Index width) {
  Tape& t = tape_of(a);
  const auto& A = t.value_of(a.id);
  if (width < 1) throw Error(ErrorCode::ShapeMismatch, "band_unfold width must be >= 1");
  const Index B = A.rows(), N = A.cols(), r = width / 2;
  MatrixXd out = MatrixXd::Zero(N * B, width);
  for (Index n = 0; n < N; ++n) {
    for (Index j = 0; j < width; ++j) {
      const Index src = n - r + j;
      if (src >= 0 && src < N) out.block(n * B, j, B, 1) = A.col(src);
    }
  }
  return t.push(std::move(out), {a}, [a, B, N, r, width](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    MatrixXd& ga = t.grad_ref(a.id);
    for (Index n = 0; n < N; ++n) {
      for (Index j = 0; j < width; ++j) {
        const Index src = n - r + j;
        if (src >= 0 && src < N) ga.col(src) += g.block(n * B, j, B, 1);
      }
    }
  });
}

Var gather_rows(Var table, std::span<const int> index) {
  Tape& t = tape_of(table);
  const auto& T = t.value_of(table.id);
  MatrixXd out = MatrixXd::Zero(static_cast<Index>(index.size()), T.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= T.rows()) throw Error(ErrorCode::ShapeMismatch, "gather_rows index out of range");
    if (index[i] >= 0) out.row(static_cast<Index>(i)) = T.row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(out), {table}, [table, idx](Tape& t, int self) {
    const MatrixXd& g = t.grad_ref(self);
    MatrixXd& gt = t.grad_ref(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) gt.row(idx[i]) += g.row(static_cast<Index>(i));
    }
  });
}

Var masked_mse(Var pred, const MatrixXd& target, const Eigen::VectorXd& row_mask) {
  Tape& t = tape_of(pred);
  const auto& P = t.value_of(pred.id);
  if (target.rows() != P.rows() || target.cols() != P.cols()) shape_error("masked_mse", P, target);
  if (row_mask.size() != P.rows()) throw Error(ErrorCode::ShapeMismatch, "masked_mse: mask length");
  const double denom = row_mask.sum() * static_cast<double>(P.cols());
  if (!(denom > 0.0)) throw Error(ErrorCode::ShapeMismatch, "masked_mse: no valid rows");
  const MatrixXd diff = row_mask.asDiagonal() * (P - target);
  MatrixXd out(1, 1);
  out(0, 0) = diff.squaredNorm() / denom;
  return t.push(std::move(out), {pred}, [pred, diff, denom](Tape& t, int self) {
    t.grad_ref(pred.id) += (2.0 * t.grad_ref(self)(0, 0) / denom) * diff;
  });
}

Var masked_bce_with_logits(Var logits, const Eigen::VectorXd& target,
                           const Eigen::VectorXd& row_mask) {
  Tape& t = tape_of(logits);
  const auto& Z = t.value_of(logits.id);
  if (Z.cols() != 1 || target.size() != Z.rows() || row_mask.size() != Z.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "masked_bce_with_logits: shapes");
  }
  const double denom = row_mask.sum();
  if (!(denom > 0.0)) throw Error(ErrorCode::ShapeMismatch, "masked_bce_with_logits: no valid rows");
  double total = 0.0;
  Eigen::VectorXd dz(Z.rows());
  for (Index r = 0; r < Z.rows(); ++r) {
    const double z = Z(r, 0), y = target[r];
    total += row_mask[r] * (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
    dz[r] = row_mask[r] * (1.0 / (1.0 + std::exp(-z)) - y) / denom;
  }
  MatrixXd out(1, 1);
  out(0, 0) = total / denom;
  return t.push(std::move(out), {logits}, [logits, dz](Tape& t, int self) {
    t.grad_ref(logits.id).col(0) += t.grad_ref(self)(0, 0) * dz;
  });
}

}  // namespace lrtts::ad
