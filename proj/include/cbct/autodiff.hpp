#pragma once

// Minimal tensor-level reverse-mode differentiation.
//
// A Tape records every operation of one forward pass. Each node owns its
// value and, once backward() runs, its gradient. Ops are free functions that
// take the tape and their input handles; each records a closure that maps the
// output gradient onto its inputs. Tensors are dense row-major (last axis
// fastest) 64-bit buffers.
//
// Reductions inside every op run in a fixed order, so gradients are bitwise
// reproducible.

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

#include "cbct/error.hpp"

namespace cbct::ad {

using Shape = std::vector<int>;

Eigen::Index element_count(const Shape& shape);
std::string to_string(const Shape& shape);

struct Tensor {
  Shape shape;
  Eigen::VectorXd data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Eigen::VectorXd::Zero(element_count(shape))) {}
  Tensor(Shape s, Eigen::VectorXd d);

  Eigen::Index size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  /// Extent of axis `i`; negative counts from the back.
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  double item() const;

  static Tensor scalar(double v) { return Tensor({}, Eigen::VectorXd::Constant(1, v)); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Eigen::VectorXd& grad_out)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var parameter(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Records an op result. `backward` is dropped when no input requires a
  /// gradient.
  Var record(Tensor value, bool requires_grad, Backward backward) {
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : nullptr);
  }

  const Tensor& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of `v`, zero-initialized on first access.
  Eigen::VectorXd& grad_buffer(Var v);
  /// Gradient after backward(); zeros when nothing flowed into `v`.
  Eigen::VectorXd grad(Var v) const;

  /// Seeds d(out)/d(out) = 1 on a scalar and runs every recorded closure in
  /// reverse order.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Eigen::VectorXd grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool requires_grad, Backward backward);
  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
};

// Pointwise activations and their derivatives, shared with the non-tape
// inference paths.
double gelu(double x);
double gelu_derivative(double x);
double softplus(double x);
double sigmoid(double x);

// --- elementwise -----------------------------------------------------------
Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double factor);
/// sum_i coefficients[i] * terms[i]; all terms share a shape.
Var linear_combination(Tape& tape, const std::vector<Var>& terms, const std::vector<double>& coefficients);
Var gelu(Tape& tape, Var x);
Var softplus(Tape& tape, Var x);
Var reshape(Tape& tape, Var x, Shape shape);

// --- convolution ------------------------------------------------------------
/// x [Ci,H,W], w [Co,Ci,k,k], b [Co] -> [Co,Ho,Wo] with zero padding.
Var conv2d(Tape& tape, Var x, Var w, Var b, int stride, int padding);
/// x [Ci,D,H,W], w [Co,Ci,k,k,k], b [Co] -> [Co,D',H',W'], stride 1.
Var conv3d(Tape& tape, Var x, Var w, Var b, int padding);
/// x [C,D,H,W] -> [C,fD,fH,fW], nearest neighbour.
Var upsample_nearest3d(Tape& tape, Var x, int factor);

// --- multi-view fusion primitives ([P,N,C] = points x views x channels) -----
Var view_mean(Tape& tape, Var g);
/// Population (1/N) variance across views.
Var view_variance(Tape& tape, Var g);
/// [P,N,C], [P,C], [P,C] -> [P,N,3C]: per-view features followed by the
/// shared mean and variance.
Var concat_view_context(Tape& tape, Var g, Var mean, Var variance);
/// x [..., in] times w [out, in]^T plus b [out] -> [..., out].
Var linear(Tape& tape, Var x, Var w, Var b);
/// Slice [begin, begin+count) of the last axis.
Var slice_last(Tape& tape, Var x, int begin, int count);
/// logits [P,N] or [P,N,1] -> softmax over N, shape [P,N].
Var softmax_views(Tape& tape, Var logits);
/// f [P,N,C], w [P,N] -> [P,C].
Var weighted_view_sum(Tape& tape, Var f, Var w);
/// [P,C] -> [C, grid...] with points laid out x-fastest in the grid.
Var points_to_grid(Tape& tape, Var x, const Shape& grid);

// --- losses -------------------------------------------------------------------
/// mean |x - target| over all elements.
Var l1_mean(Tape& tape, Var x, const Tensor& target);
/// Forward difference x[i+1] - x[i] along `axis`; that axis shrinks by one.
Var forward_difference(Tape& tape, Var x, int axis);
Tensor forward_difference(const Tensor& x, int axis);

}  // namespace cbct::ad
