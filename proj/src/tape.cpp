#include "vcap/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vcap/errors.hpp"

namespace vcap {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

ValueId Tape::push(Matrix value, std::function<void(Tape&)> back) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(back)});
  return ValueId{nodes_.size() - 1};
}

void Tape::check(ValueId id) const {
  if (!id.valid() || id.idx >= nodes_.size()) throw DimensionMismatch("stale tape value id");
}

ValueId Tape::value(Matrix m) { return push(std::move(m), nullptr); }

const Matrix& Tape::val(ValueId id) const {
  check(id);
  return nodes_[id.idx].value;
}

const Matrix& Tape::grad(ValueId id) const {
  check(id);
  return nodes_[id.idx].grad;
}

ValueId Tape::matmul(ValueId a, ValueId b) {
  check(a), check(b);
  Matrix out = vcap::matmul(val(a), val(b));
  return push(std::move(out), [a, b, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    const Matrix& av = t.val(a);
    const Matrix& bv = t.val(b);
    // dA += G B^T
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < av.rows; ++i)
      for (std::size_t k = 0; k < av.cols; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < bv.cols; ++j) s += g.at(i, j) * bv.at(k, j);
        ga.at(i, k) += s;
      }
    // dB += A^T G
    Matrix& gb = t.grad_mut(b);
    for (std::size_t k = 0; k < bv.rows; ++k)
      for (std::size_t j = 0; j < bv.cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < av.rows; ++i) s += av.at(i, k) * g.at(i, j);
        gb.at(k, j) += s;
      }
  });
}

ValueId Tape::transpose(ValueId a) {
  check(a);
  Matrix out = vcap::transpose(val(a));
  return push(std::move(out), [a, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) ga.at(j, i) += g.at(i, j);
  });
}

ValueId Tape::add(ValueId a, ValueId b) {
  check(a), check(b);
  Matrix out = vcap::add(val(a), val(b));
  return push(std::move(out), [a, b, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    Matrix& gb = t.grad_mut(b);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] += g.data[i];
    }
  });
}

ValueId Tape::scale(ValueId a, double c) {
  check(a);
  Matrix out = vcap::scale(val(a), c);
  return push(std::move(out), [a, c, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
  });
}

ValueId Tape::add_row_broadcast(ValueId a, ValueId row) {
  check(a), check(row);
  const Matrix& av = val(a);
  const Matrix& rv = val(row);
  if (rv.rows != 1 || rv.cols != av.cols) throw DimensionMismatch("broadcast row shape");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += rv.at(0, c);
  return push(std::move(out), [a, row, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    Matrix& gr = t.grad_mut(row);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) {
        ga.at(r, c) += g.at(r, c);
        gr.at(0, c) += g.at(r, c);
      }
  });
}

ValueId Tape::concat_rows(ValueId a, ValueId b) {
  check(a), check(b);
  Matrix out = vcap::concat_rows(val(a), val(b));
  std::size_t split = val(a).cols;
  return push(std::move(out), [a, b, split, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    Matrix& gb = t.grad_mut(b);
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < split; ++c) ga.at(r, c) += g.at(r, c);
      for (std::size_t c = split; c < g.cols; ++c) gb.at(r, c - split) += g.at(r, c);
    }
  });
}

ValueId Tape::stack_rows(ValueId a, ValueId b) { return stack_rows_many({a, b}); }

ValueId Tape::stack_rows_many(const std::vector<ValueId>& parts) {
  if (parts.empty()) throw EmptyInput("stack_rows_many of nothing");
  std::size_t rows = 0, cols = val(parts[0]).cols;
  for (ValueId p : parts) {
    check(p);
    if (val(p).cols != cols) throw DimensionMismatch("stack_rows column counts differ");
    rows += val(p).rows;
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (ValueId p : parts) {
    const Matrix& pv = val(p);
    std::copy(pv.data.begin(), pv.data.end(), out.row_ptr(r));
    r += pv.rows;
  }
  return push(std::move(out), [parts, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    std::size_t r = 0;
    for (ValueId p : parts) {
      Matrix& gp = t.grad_mut(p);
      for (std::size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += g.data[r * g.cols + i];
      r += gp.rows;
    }
  });
}

ValueId Tape::slice_rows(ValueId a, std::size_t r0, std::size_t r1) {
  check(a);
  Matrix out = vcap::slice_rows(val(a), r0, r1);
  return push(std::move(out), [a, r0, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) ga.at(r0 + r, c) += g.at(r, c);
  });
}

ValueId Tape::slice_cols(ValueId a, std::size_t c0, std::size_t c1) {
  check(a);
  Matrix out = vcap::slice_cols(val(a), c0, c1);
  return push(std::move(out), [a, c0, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) ga.at(r, c0 + c) += g.at(r, c);
  });
}

ValueId Tape::gather_rows(ValueId a, std::vector<std::size_t> idx) {
  check(a);
  const Matrix& av = val(a);
  Matrix out(idx.size(), av.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= av.rows) throw DimensionMismatch("gather_rows index out of range");
    std::copy(av.row_ptr(idx[r]), av.row_ptr(idx[r]) + av.cols, out.row_ptr(r));
  }
  return push(std::move(out), [a, idx = std::move(idx), out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < g.cols; ++c) ga.at(idx[r], c) += g.at(r, c);
  });
}

ValueId Tape::softmax_rows(ValueId a, double scale) {
  check(a);
  Matrix out = softmax_rows_scaled(val(a), scale);
  double inv = 1.0 / std::sqrt(scale);
  return push(std::move(out), [a, inv, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    const Matrix& y = t.nodes_[out_idx].value;
    Matrix& ga = t.grad_mut(a);
    for (std::size_t r = 0; r < y.rows; ++r) {
      double gy = 0.0;
      for (std::size_t c = 0; c < y.cols; ++c) gy += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < y.cols; ++c)
        ga.at(r, c) += inv * y.at(r, c) * (g.at(r, c) - gy);
    }
  });
}

ValueId Tape::softmax_rows_masked(ValueId a, const Matrix& mask, double scale) {
  check(a);
  const Matrix& av = val(a);
  if (!mask.same_shape(av)) throw DimensionMismatch("softmax mask shape");
  if (!(scale > 0.0)) throw NonPositiveScale("scale = " + std::to_string(scale));
  double inv = 1.0 / std::sqrt(scale);
  Matrix out(av.rows, av.cols);
  for (std::size_t r = 0; r < av.rows; ++r) {
    double mx = -HUGE_VAL;
    for (std::size_t c = 0; c < av.cols; ++c)
      if (mask.at(r, c) != 0.0) mx = std::max(mx, av.at(r, c));
    if (mx == -HUGE_VAL) throw EmptyWindow("softmax row " + std::to_string(r) + " fully masked");
    double sum = 0.0;
    for (std::size_t c = 0; c < av.cols; ++c) {
      if (mask.at(r, c) != 0.0) {
        out.at(r, c) = std::exp((av.at(r, c) - mx) * inv);
        sum += out.at(r, c);
      }
    }
    for (std::size_t c = 0; c < av.cols; ++c)
      if (mask.at(r, c) != 0.0) out.at(r, c) /= sum;
  }
  return push(std::move(out), [a, mask, inv, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    const Matrix& y = t.nodes_[out_idx].value;
    Matrix& ga = t.grad_mut(a);
    for (std::size_t r = 0; r < y.rows; ++r) {
      double gy = 0.0;
      for (std::size_t c = 0; c < y.cols; ++c)
        if (mask.at(r, c) != 0.0) gy += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < y.cols; ++c)
        if (mask.at(r, c) != 0.0) ga.at(r, c) += inv * y.at(r, c) * (g.at(r, c) - gy);
    }
  });
}

ValueId Tape::rms_norm_rows(ValueId a, double eps) {
  check(a);
  const Matrix& av = val(a);
  Matrix out(av.rows, av.cols);
  std::vector<double> inv_rms(av.rows);
  for (std::size_t r = 0; r < av.rows; ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < av.cols; ++c) ms += av.at(r, c) * av.at(r, c);
    ms /= double(av.cols);
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < av.cols; ++c) out.at(r, c) = av.at(r, c) * inv_rms[r];
  }
  return push(std::move(out),
              [a, inv_rms = std::move(inv_rms), out_idx = nodes_.size()](Tape& t) {
                const Matrix& g = t.nodes_[out_idx].grad;
                const Matrix& x = t.val(a);
                Matrix& ga = t.grad_mut(a);
                for (std::size_t r = 0; r < x.rows; ++r) {
                  double gx = 0.0;
                  for (std::size_t c = 0; c < x.cols; ++c) gx += g.at(r, c) * x.at(r, c);
                  double k = inv_rms[r] * inv_rms[r] * inv_rms[r] * gx / double(x.cols);
                  for (std::size_t c = 0; c < x.cols; ++c)
                    ga.at(r, c) += inv_rms[r] * g.at(r, c) - k * x.at(r, c);
                }
              });
}

ValueId Tape::mean_rows(ValueId a) {
  check(a);
  const Matrix& av = val(a);
  if (av.rows == 0) throw EmptyInput("mean_rows of empty matrix");
  Matrix out(1, av.cols);
  for (std::size_t r = 0; r < av.rows; ++r)
    for (std::size_t c = 0; c < av.cols; ++c) out.at(0, c) += av.at(r, c);
  for (std::size_t c = 0; c < av.cols; ++c) out.at(0, c) /= double(av.rows);
  return push(std::move(out), [a, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    Matrix& ga = t.grad_mut(a);
    double inv = 1.0 / double(ga.rows);
    for (std::size_t r = 0; r < ga.rows; ++r)
      for (std::size_t c = 0; c < ga.cols; ++c) ga.at(r, c) += g.at(0, c) * inv;
  });
}

ValueId Tape::sum(ValueId a) {
  check(a);
  const Matrix& av = val(a);
  Matrix out(1, 1);
  for (double v : av.data) out.at(0, 0) += v;
  return push(std::move(out), [a, out_idx = nodes_.size()](Tape& t) {
    double g = t.nodes_[out_idx].grad.at(0, 0);
    Matrix& ga = t.grad_mut(a);
    for (double& v : ga.data) v += g;
  });
}

ValueId Tape::gelu(ValueId a) {
  check(a);
  Matrix out = val(a);
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(out), [a, out_idx = nodes_.size()](Tape& t) {
    const Matrix& g = t.nodes_[out_idx].grad;
    const Matrix& x = t.val(a);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      double v = x.data[i];
      double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      ga.data[i] += g.data[i] * (cdf + v * pdf);
    }
  });
}

ValueId Tape::cross_entropy(ValueId logits, const std::vector<int>& targets, int pad_id) {
  check(logits);
  const Matrix& lv = val(logits);
  if (targets.size() != lv.rows) {
    throw LengthMismatch("targets " + std::to_string(targets.size()) + " vs logits rows " +
                         std::to_string(lv.rows));
  }
  std::size_t valid = 0;
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows; ++r) {
    if (targets[r] == pad_id) continue;
    if (targets[r] < 0 || std::size_t(targets[r]) >= lv.cols)
      throw DimensionMismatch("target id out of vocabulary");
    ++valid;
    auto p = softmax_scaled(lv.row(r), 1.0);
    loss -= std::log(p[std::size_t(targets[r])]);
  }
  if (valid == 0) throw AllPadded("cross entropy over all-pad targets");
  Matrix out(1, 1);
  out.at(0, 0) = loss / double(valid);
  return push(std::move(out),
              [logits, targets, pad_id, valid, out_idx = nodes_.size()](Tape& t) {
                double g = t.nodes_[out_idx].grad.at(0, 0) / double(valid);
                const Matrix& lv = t.val(logits);
                Matrix& gl = t.grad_mut(logits);
                for (std::size_t r = 0; r < lv.rows; ++r) {
                  if (targets[r] == pad_id) continue;
                  auto p = softmax_scaled(lv.row(r), 1.0);
                  for (std::size_t c = 0; c < lv.cols; ++c) {
                    double y = p[c] - (c == std::size_t(targets[r]) ? 1.0 : 0.0);
                    gl.at(r, c) += g * y;
                  }
                }
              });
}

ValueId Tape::kl_teacher_student(ValueId student_logits, const Matrix& teacher_logits,
                                 double tau, const std::vector<uint8_t>& valid) {
  check(student_logits);
  const Matrix& sv = val(student_logits);
  if (!sv.same_shape(teacher_logits)) throw ShapeMismatch("student vs teacher logits");
  if (!(tau > 0.0)) throw NonPositiveScale("tau = " + std::to_string(tau));
  if (valid.size() != sv.rows) throw LengthMismatch("valid mask length");
  std::size_t n = 0;
  double loss = 0.0;
  // softmax_scaled(x, tau^2) computes softmax(x / tau)
  double tau2 = tau * tau;
  for (std::size_t r = 0; r < sv.rows; ++r) {
    if (!valid[r]) continue;
    ++n;
    auto p = softmax_scaled(teacher_logits.row(r), tau2);
    auto q = softmax_scaled(sv.row(r), tau2);
    for (std::size_t c = 0; c < sv.cols; ++c) {
      if (p[c] > 0.0) loss += p[c] * (std::log(p[c]) - std::log(q[c]));
    }
  }
  if (n == 0) throw AllPadded("KL over zero valid positions");
  Matrix out(1, 1);
  out.at(0, 0) = tau2 * loss / double(n);
  // d/ds_j of KL row = (q_j - p_j) / tau; with the tau^2 loss scale and the
  // mean this becomes tau / n * (q_j - p_j).
  return push(std::move(out), [student_logits, teacher_logits, tau, valid, n,
                               out_idx = nodes_.size()](Tape& t) {
    double tau2 = tau * tau;
    double g = t.nodes_[out_idx].grad.at(0, 0) * tau / double(n);
    const Matrix& sv = t.val(student_logits);
    Matrix& gs = t.grad_mut(student_logits);
    for (std::size_t r = 0; r < sv.rows; ++r) {
      if (!valid[r]) continue;
      auto p = softmax_scaled(teacher_logits.row(r), tau2);
      auto q = softmax_scaled(sv.row(r), tau2);
      for (std::size_t c = 0; c < sv.cols; ++c) gs.at(r, c) += g * (q[c] - p[c]);
    }
  });
}

void Tape::backward(ValueId loss) {
  check(loss);
  const Matrix& lv = val(loss);
  if (lv.rows != 1 || lv.cols != 1) throw DimensionMismatch("backward target must be 1x1");
  for (Node& n : nodes_) {
    n.grad = Matrix(n.value.rows, n.value.cols);
  }
  nodes_[loss.idx].grad.at(0, 0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
}

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& x, double eps) {
  if (!(eps > 0.0)) throw NonPositiveScale("finite difference step must be positive");
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    double fp = f(probe);
    probe[i] = x[i] - eps;
    double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteEvaluation("objective returned NaN/Inf during finite differencing");
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace vcap
