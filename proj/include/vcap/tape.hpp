#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vcap/matrix.hpp"

namespace vcap {

// Handle to a value recorded on a Tape.
struct ValueId {
  std::size_t idx = static_cast<std::size_t>(-1);
  bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

// Reverse-mode autodiff over an explicit operation record. Each op appends a
// node holding its forward result and a closure that scatters the node's
// gradient back to its parents. Values are immutable once recorded; replaying
// the record backward is a single reverse sweep in creation order, so
// gradients are deterministic for identical inputs.
//
// Single-threaded per tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf value. Gradients are accumulated for leaves like for any other node;
  // callers that registered a leaf as a parameter read grad() after backward().
  ValueId value(Matrix m);

  ValueId matmul(ValueId a, ValueId b);
  ValueId transpose(ValueId a);
  ValueId add(ValueId a, ValueId b);
  ValueId scale(ValueId a, double c);
  // broadcast-add a 1xC row to every row of a
  ValueId add_row_broadcast(ValueId a, ValueId row);

  // row t of output = row t of a followed by row t of b
  ValueId concat_rows(ValueId a, ValueId b);
  // rows of a followed by rows of b
  ValueId stack_rows(ValueId a, ValueId b);
  ValueId stack_rows_many(const std::vector<ValueId>& parts);
  ValueId slice_rows(ValueId a, std::size_t r0, std::size_t r1);
  ValueId slice_cols(ValueId a, std::size_t c0, std::size_t c1);
  // out row i = a row idx[i]; backward scatter-adds
  ValueId gather_rows(ValueId a, std::vector<std::size_t> idx);

  // row-wise softmax(x / sqrt(scale)), max subtracted before exponentiation
  ValueId softmax_rows(ValueId a, double scale);
  // mask entries == 0 are excluded from the softmax and produce exact zeros;
  // every row must keep at least one admissible entry
  ValueId softmax_rows_masked(ValueId a, const Matrix& mask, double scale);

  // y = x / sqrt(mean(x^2) + eps) per row; maps the zero vector to itself
  ValueId rms_norm_rows(ValueId a, double eps = 1e-8);
  // 1 x cols row of column means
  ValueId mean_rows(ValueId a);
  // 1 x 1 sum of all entries
  ValueId sum(ValueId a);
  ValueId gelu(ValueId a);

  // mean over non-pad positions of -log softmax(logits)[target]
  ValueId cross_entropy(ValueId logits, const std::vector<int>& targets, int pad_id);
  // tau^2-scaled mean KL(softmax(teacher/tau) || softmax(student/tau)) over
  // positions with valid != 0. The teacher matrix is a plain constant, so no
  // gradient flows toward the network that produced it.
  ValueId kl_teacher_student(ValueId student_logits, const Matrix& teacher_logits,
                             double tau, const std::vector<uint8_t>& valid);

  const Matrix& val(ValueId id) const;
  // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. loss must be 1x1.
  void backward(ValueId loss);
  const Matrix& grad(ValueId id) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&)> back;  // empty for leaves
  };

  ValueId push(Matrix value, std::function<void(Tape&)> back);
  Matrix& grad_mut(ValueId id) { return nodes_[id.idx].grad; }
  void check(ValueId id) const;

  std::vector<Node> nodes_;
};

// Central finite differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
// Throws NonFiniteEvaluation if f returns a non-finite value.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& x, double eps);

}  // namespace vcap
