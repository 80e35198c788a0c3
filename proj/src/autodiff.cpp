#include "cbct/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace cbct::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using ConstMapRow = Eigen::Map<const RowMat>;
using StridedRow = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedRow = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

void require_rank(const Tensor& t, int rank, const char* op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                to_string(t.shape));
}

bool any_requires(const Tape& tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (tape.requires_grad(v)) return true;
  return false;
}

// Largest number of output planes whose im2col block stays under ~4M entries.
int planes_per_block(Eigen::Index rows, Eigen::Index plane_size, int planes) {
  const Eigen::Index budget = Eigen::Index(1) << 22;
  const Eigen::Index per_plane = std::max<Eigen::Index>(1, rows * plane_size);
  return static_cast<int>(std::clamp<Eigen::Index>(budget / per_plane, 1, planes));
}

}  // namespace

Eigen::Index element_count(const Shape& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeMismatch("negative tensor extent");
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, Eigen::VectorXd d) : shape(std::move(s)), data(std::move(d)) {
  require(data.size() == element_count(shape), "tensor data does not match shape " + to_string(shape));
}

double Tensor::item() const {
  require(data.size() == 1, "item() on a non-scalar tensor");
  return data[0];
}

// --- tape ---------------------------------------------------------------------

Var Tape::push(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw InvalidArgument("invalid tape handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw InvalidArgument("invalid tape handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Eigen::VectorXd& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.size() != n.value.size()) n.grad = Eigen::VectorXd::Zero(n.value.size());
  return n.grad;
}

Eigen::VectorXd Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() != n.value.size()) return Eigen::VectorXd::Zero(n.value.size());
  return n.grad;
}

void Tape::backward(Var out) {
  if (value(out).size() != 1) throw ShapeMismatch("backward() needs a scalar output");
  for (auto& n : nodes_) n.grad.resize(0);
  grad_buffer(out).setOnes();
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, n.grad);
  }
}

// --- activations ----------------------------------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- elementwise ---------------------------------------------------------------

Var add(Tape& tape, Var a, Var b) {
  require(tape.shape(a) == tape.shape(b), "add: shape mismatch");
  Tensor out(tape.shape(a), tape.value(a).data + tape.value(b).data);
  return tape.record(std::move(out), any_requires(tape, {a, b}), [a, b](Tape& t, const Eigen::VectorXd& g) {
    if (t.requires_grad(a)) t.grad_buffer(a) += g;
    if (t.requires_grad(b)) t.grad_buffer(b) += g;
  });
}

Var scale(Tape& tape, Var a, double factor) {
  Tensor out(tape.shape(a), factor * tape.value(a).data);
  return tape.record(std::move(out), tape.requires_grad(a),
                     [a, factor](Tape& t, const Eigen::VectorXd& g) { t.grad_buffer(a) += factor * g; });
}

Var linear_combination(Tape& tape, const std::vector<Var>& terms, const std::vector<double>& coefficients) {
  require(!terms.empty() && terms.size() == coefficients.size(), "linear_combination: bad arguments");
  Tensor out(tape.shape(terms[0]));
  bool needs = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(tape.shape(terms[i]) == out.shape, "linear_combination: shape mismatch");
    out.data += coefficients[i] * tape.value(terms[i]).data;
    needs = needs || tape.requires_grad(terms[i]);
  }
  return tape.record(std::move(out), needs, [terms, coefficients](Tape& t, const Eigen::VectorXd& g) {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (t.requires_grad(terms[i])) t.grad_buffer(terms[i]) += coefficients[i] * g;
  });
}

Var gelu(Tape& tape, Var x) {
  Tensor out(tape.shape(x), tape.value(x).data.unaryExpr([](double v) { return gelu(v); }));
  return tape.record(std::move(out), tape.requires_grad(x), [x](Tape& t, const Eigen::VectorXd& g) {
    t.grad_buffer(x) += (g.array() * t.value(x).data.unaryExpr([](double v) { return gelu_derivative(v); }).array())
                            .matrix();
  });
}

Var softplus(Tape& tape, Var x) {
  Tensor out(tape.shape(x), tape.value(x).data.unaryExpr([](double v) { return softplus(v); }));
  return tape.record(std::move(out), tape.requires_grad(x), [x](Tape& t, const Eigen::VectorXd& g) {
    t.grad_buffer(x) += (g.array() * t.value(x).data.unaryExpr([](double v) { return sigmoid(v); }).array()).matrix();
  });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  require(element_count(shape) == tape.value(x).size(), "reshape: element count changes");
  Tensor out(std::move(shape), tape.value(x).data);
  return tape.record(std::move(out), tape.requires_grad(x),
                     [x](Tape& t, const Eigen::VectorXd& g) { t.grad_buffer(x) += g; });
}

// --- convolution ----------------------------------------------------------------

namespace {

struct Conv2dGeom {
  int ci, h, w, co, k, stride, pad, ho, wo;
  Eigen::Index rows() const { return Eigen::Index(ci) * k * k; }
  Eigen::Index cols() const { return Eigen::Index(ho) * wo; }
};

void im2col2d(const Conv2dGeom& g, const double* x, RowMat& cols) {
  cols.resize(g.rows(), g.cols());
  for (int c = 0; c < g.ci; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols.row((c * g.k + ky) * g.k + kx).data();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[oy * g.wo + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(std::size_t(c) * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
}

void col2im2d(const Conv2dGeom& g, const RowMat& cols, double* dx) {
  for (int c = 0; c < g.ci; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols.row((c * g.k + ky) * g.k + kx).data();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dx[(std::size_t(c) * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

struct Conv3dGeom {
  int ci, d, h, w, co, k, pad, dout, hout, wout;
  Eigen::Index rows() const { return Eigen::Index(ci) * k * k * k; }
  Eigen::Index plane() const { return Eigen::Index(hout) * wout; }
};

// im2col for output planes [z0, z1).
void im2col3d(const Conv3dGeom& g, const double* x, int z0, int z1, RowMat& cols) {
  const Eigen::Index plane = g.plane();
  cols.resize(g.rows(), plane * (z1 - z0));
  for (int c = 0; c < g.ci; ++c)
    for (int kz = 0; kz < g.k; ++kz)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx) {
          double* row = cols.row(((c * g.k + kz) * g.k + ky) * g.k + kx).data();
          for (int oz = z0; oz < z1; ++oz) {
            const int iz = oz - g.pad + kz;
            double* dst = row + (oz - z0) * plane;
            if (iz < 0 || iz >= g.d) {
              std::fill(dst, dst + plane, 0.0);
              continue;
            }
            for (int oy = 0; oy < g.hout; ++oy) {
              const int iy = oy - g.pad + ky;
              double* line = dst + oy * g.wout;
              if (iy < 0 || iy >= g.h) {
                std::fill(line, line + g.wout, 0.0);
                continue;
              }
              const double* src = x + ((std::size_t(c) * g.d + iz) * g.h + iy) * g.w;
              for (int ox = 0; ox < g.wout; ++ox) {
                const int ix = ox - g.pad + kx;
                line[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
              }
            }
          }
        }
}

void col2im3d(const Conv3dGeom& g, const RowMat& cols, int z0, int z1, double* dx) {
  const Eigen::Index plane = g.plane();
  for (int c = 0; c < g.ci; ++c)
    for (int kz = 0; kz < g.k; ++kz)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx) {
          const double* row = cols.row(((c * g.k + kz) * g.k + ky) * g.k + kx).data();
          for (int oz = z0; oz < z1; ++oz) {
            const int iz = oz - g.pad + kz;
            if (iz < 0 || iz >= g.d) continue;
            const double* src = row + (oz - z0) * plane;
            for (int oy = 0; oy < g.hout; ++oy) {
              const int iy = oy - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              double* dst = dx + ((std::size_t(c) * g.d + iz) * g.h + iy) * g.w;
              const double* line = src + oy * g.wout;
              for (int ox = 0; ox < g.wout; ++ox) {
                const int ix = ox - g.pad + kx;
                if (ix >= 0 && ix < g.w) dst[ix] += line[ox];
              }
            }
          }
        }
}

}  // namespace

Var conv2d(Tape& tape, Var x, Var w, Var b, int stride, int padding) {
  const Tensor& X = tape.value(x);
  const Tensor& W = tape.value(w);
  require_rank(X, 3, "conv2d input");
  require_rank(W, 4, "conv2d weight");
  require(W.dim(1) == X.dim(0) && W.dim(2) == W.dim(3), "conv2d: weight does not match input channels");
  require(tape.shape(b) == Shape{W.dim(0)}, "conv2d: bias shape");
  require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
  Conv2dGeom g{X.dim(0), X.dim(1), X.dim(2), W.dim(0), W.dim(2), stride, padding, 0, 0};
  g.ho = (g.h + 2 * padding - g.k) / stride + 1;
  g.wo = (g.w + 2 * padding - g.k) / stride + 1;
  require(g.ho >= 1 && g.wo >= 1, "conv2d: output would be empty");

  RowMat cols;
  im2col2d(g, X.data.data(), cols);
  Tensor out({g.co, g.ho, g.wo});
  MapRow y(out.data.data(), g.co, g.cols());
  ConstMapRow wm(W.data.data(), g.co, g.rows());
  y.noalias() = wm * cols;
  y.colwise() += tape.value(b).data;

  return tape.record(std::move(out), any_requires(tape, {x, w, b}), [x, w, b, g](Tape& t, const Eigen::VectorXd& grad) {
    ConstMapRow dy(grad.data(), g.co, g.cols());
    if (t.requires_grad(b)) t.grad_buffer(b) += dy.rowwise().sum();
    if (t.requires_grad(w)) {
      RowMat cols;
      im2col2d(g, t.value(x).data.data(), cols);
      MapRow(t.grad_buffer(w).data(), g.co, g.rows()).noalias() += dy * cols.transpose();
    }
    if (t.requires_grad(x)) {
      ConstMapRow wm(t.value(w).data.data(), g.co, g.rows());
      const RowMat dcols = wm.transpose() * dy;
      col2im2d(g, dcols, t.grad_buffer(x).data());
    }
  });
}

Var conv3d(Tape& tape, Var x, Var w, Var b, int padding) {
  const Tensor& X = tape.value(x);
  const Tensor& W = tape.value(w);
  require_rank(X, 4, "conv3d input");
  require_rank(W, 5, "conv3d weight");
  require(W.dim(1) == X.dim(0) && W.dim(2) == W.dim(3) && W.dim(3) == W.dim(4),
          "conv3d: weight does not match input channels");
  require(tape.shape(b) == Shape{W.dim(0)}, "conv3d: bias shape");
  Conv3dGeom g{X.dim(0), X.dim(1), X.dim(2), X.dim(3), W.dim(0), W.dim(2), padding, 0, 0, 0};
  g.dout = g.d + 2 * padding - g.k + 1;
  g.hout = g.h + 2 * padding - g.k + 1;
  g.wout = g.w + 2 * padding - g.k + 1;
  require(g.dout >= 1 && g.hout >= 1 && g.wout >= 1, "conv3d: output would be empty");

  Tensor out({g.co, g.dout, g.hout, g.wout});
  const Eigen::Index volume = g.plane() * g.dout;
  const int block = planes_per_block(g.rows(), g.plane(), g.dout);
  ConstMapRow wm(W.data.data(), g.co, g.rows());
  RowMat cols;
  for (int z0 = 0; z0 < g.dout; z0 += block) {
    const int z1 = std::min(g.dout, z0 + block);
    im2col3d(g, X.data.data(), z0, z1, cols);
    StridedRow y(out.data.data() + z0 * g.plane(), g.co, cols.cols(), Eigen::OuterStride<>(volume));
    y.noalias() = wm * cols;
    y.colwise() += tape.value(b).data;
  }

  return tape.record(std::move(out), any_requires(tape, {x, w, b}),
                     [x, w, b, g, block, volume](Tape& t, const Eigen::VectorXd& grad) {
                       if (t.requires_grad(b)) {
                         ConstMapRow dy(grad.data(), g.co, volume);
                         t.grad_buffer(b) += dy.rowwise().sum();
                       }
                       const bool need_w = t.requires_grad(w);
                       const bool need_x = t.requires_grad(x);
                       if (!need_w && !need_x) return;
                       ConstMapRow wm(t.value(w).data.data(), g.co, g.rows());
                       RowMat cols, dcols;
                       for (int z0 = 0; z0 < g.dout; z0 += block) {
                         const int z1 = std::min(g.dout, z0 + block);
                         const Eigen::Index n = g.plane() * (z1 - z0);
                         ConstStridedRow dy(grad.data() + z0 * g.plane(), g.co, n, Eigen::OuterStride<>(volume));
                         if (need_w) {
                           im2col3d(g, t.value(x).data.data(), z0, z1, cols);
                           MapRow(t.grad_buffer(w).data(), g.co, g.rows()).noalias() += dy * cols.transpose();
                         }
                         if (need_x) {
                           dcols.noalias() = wm.transpose() * dy;
                           col2im3d(g, dcols, z0, z1, t.grad_buffer(x).data());
                         }
                       }
                     });
}

Var upsample_nearest3d(Tape& tape, Var x, int factor) {
  const Tensor& X = tape.value(x);
  require_rank(X, 4, "upsample_nearest3d");
  require(factor >= 1, "upsample_nearest3d: factor must be >= 1");
  const int c = X.dim(0), d = X.dim(1), h = X.dim(2), w = X.dim(3);
  const int D = d * factor, H = h * factor, W = w * factor;
  Tensor out({c, D, H, W});
  auto src_index = [=](int ch, int z, int y, int xx) {
    return ((std::size_t(ch) * d + z / factor) * h + y / factor) * w + xx / factor;
  };
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) out.data[Eigen::Index(o++)] = X.data[Eigen::Index(src_index(ch, z, y, xx))];
  return tape.record(std::move(out), tape.requires_grad(x), [x, c, D, H, W, src_index](Tape& t, const Eigen::VectorXd& g) {
    Eigen::VectorXd& dx = t.grad_buffer(x);
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch)
      for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) dx[Eigen::Index(src_index(ch, z, y, xx))] += g[Eigen::Index(o++)];
  });
}

// --- fusion primitives --------------------------------------------------------

Var view_mean(Tape& tape, Var g) {
  const Tensor& G = tape.value(g);
  require_rank(G, 3, "view_mean");
  const int p = G.dim(0), n = G.dim(1), c = G.dim(2);
  require(n >= 1, "view_mean: no views");
  Tensor out({p, c});
  for (int i = 0; i < p; ++i)
    for (int v = 0; v < n; ++v)
      out.data.segment(Eigen::Index(i) * c, c) += G.data.segment((Eigen::Index(i) * n + v) * c, c);
  out.data /= n;
  return tape.record(std::move(out), tape.requires_grad(g), [g, p, n, c](Tape& t, const Eigen::VectorXd& grad) {
    Eigen::VectorXd& dg = t.grad_buffer(g);
    for (int i = 0; i < p; ++i)
      for (int v = 0; v < n; ++v) dg.segment((Eigen::Index(i) * n + v) * c, c) += grad.segment(Eigen::Index(i) * c, c) / n;
  });
}

Var view_variance(Tape& tape, Var g) {
  const Tensor& G = tape.value(g);
  require_rank(G, 3, "view_variance");
  const int p = G.dim(0), n = G.dim(1), c = G.dim(2);
  require(n >= 1, "view_variance: no views");
  auto means = [p, n, c](const Eigen::VectorXd& data) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(Eigen::Index(p) * c);
    for (int i = 0; i < p; ++i)
      for (int v = 0; v < n; ++v) m.segment(Eigen::Index(i) * c, c) += data.segment((Eigen::Index(i) * n + v) * c, c);
    return Eigen::VectorXd(m / n);
  };
  const Eigen::VectorXd m = means(G.data);
  Tensor out({p, c});
  for (int i = 0; i < p; ++i)
    for (int v = 0; v < n; ++v)
      out.data.segment(Eigen::Index(i) * c, c).array() +=
          (G.data.segment((Eigen::Index(i) * n + v) * c, c) - m.segment(Eigen::Index(i) * c, c)).array().square();
  out.data /= n;
  return tape.record(std::move(out), tape.requires_grad(g), [g, p, n, c, means](Tape& t, const Eigen::VectorXd& grad) {
    const Eigen::VectorXd& data = t.value(g).data;
    const Eigen::VectorXd m = means(data);
    Eigen::VectorXd& dg = t.grad_buffer(g);
    for (int i = 0; i < p; ++i)
      for (int v = 0; v < n; ++v) {
        const Eigen::Index off = (Eigen::Index(i) * n + v) * c;
        dg.segment(off, c).array() += (2.0 / n) * grad.segment(Eigen::Index(i) * c, c).array() *
                                      (data.segment(off, c) - m.segment(Eigen::Index(i) * c, c)).array();
      }
  });
}

Var concat_view_context(Tape& tape, Var g, Var mean, Var variance) {
  const Tensor& G = tape.value(g);
  require_rank(G, 3, "concat_view_context");
  const int p = G.dim(0), n = G.dim(1), c = G.dim(2);
  require(tape.shape(mean) == Shape{p, c} && tape.shape(variance) == Shape{p, c},
          "concat_view_context: context shape");
  Tensor out({p, n, 3 * c});
  const Eigen::VectorXd& M = tape.value(mean).data;
  const Eigen::VectorXd& S = tape.value(variance).data;
  for (int i = 0; i < p; ++i)
    for (int v = 0; v < n; ++v) {
      const Eigen::Index o = (Eigen::Index(i) * n + v) * 3 * c;
      out.data.segment(o, c) = G.data.segment((Eigen::Index(i) * n + v) * c, c);
      out.data.segment(o + c, c) = M.segment(Eigen::Index(i) * c, c);
      out.data.segment(o + 2 * c, c) = S.segment(Eigen::Index(i) * c, c);
    }
  return tape.record(std::move(out), any_requires(tape, {g, mean, variance}),
                     [g, mean, variance, p, n, c](Tape& t, const Eigen::VectorXd& grad) {
                       const bool dg = t.requires_grad(g), dm = t.requires_grad(mean), ds = t.requires_grad(variance);
                       for (int i = 0; i < p; ++i)
                         for (int v = 0; v < n; ++v) {
                           const Eigen::Index o = (Eigen::Index(i) * n + v) * 3 * c;
                           if (dg) t.grad_buffer(g).segment((Eigen::Index(i) * n + v) * c, c) += grad.segment(o, c);
                           if (dm) t.grad_buffer(mean).segment(Eigen::Index(i) * c, c) += grad.segment(o + c, c);
                           if (ds) t.grad_buffer(variance).segment(Eigen::Index(i) * c, c) += grad.segment(o + 2 * c, c);
                         }
                     });
}

Var linear(Tape& tape, Var x, Var w, Var b) {
  const Tensor& X = tape.value(x);
  const Tensor& W = tape.value(w);
  require(X.rank() >= 1, "linear: input must have rank >= 1");
  require_rank(W, 2, "linear weight");
  const int in = X.dim(-1), outc = W.dim(0);
  require(W.dim(1) == in, "linear: weight does not match input features " + to_string(W.shape) + " vs " + to_string(X.shape));
  require(tape.shape(b) == Shape{outc}, "linear: bias shape");
  const Eigen::Index rows = X.size() / std::max(in, 1);
  Shape shape = X.shape;
  shape.back() = outc;
  Tensor out(shape);
  MapRow y(out.data.data(), rows, outc);
  y.noalias() = ConstMapRow(X.data.data(), rows, in) * ConstMapRow(W.data.data(), outc, in).transpose();
  y.rowwise() += tape.value(b).data.transpose();
  return tape.record(std::move(out), any_requires(tape, {x, w, b}), [x, w, b, rows, in, outc](Tape& t, const Eigen::VectorXd& g) {
    ConstMapRow dy(g.data(), rows, outc);
    if (t.requires_grad(x))
      MapRow(t.grad_buffer(x).data(), rows, in).noalias() += dy * ConstMapRow(t.value(w).data.data(), outc, in);
    if (t.requires_grad(w))
      MapRow(t.grad_buffer(w).data(), outc, in).noalias() += dy.transpose() * ConstMapRow(t.value(x).data.data(), rows, in);
    if (t.requires_grad(b)) t.grad_buffer(b) += dy.colwise().sum().transpose();
  });
}

Var slice_last(Tape& tape, Var x, int begin, int count) {
  const Tensor& X = tape.value(x);
  require(X.rank() >= 1, "slice_last: rank 0");
  const int last = X.dim(-1);
  require(begin >= 0 && count >= 1 && begin + count <= last, "slice_last: range outside the last axis");
  const Eigen::Index rows = X.size() / last;
  Shape shape = X.shape;
  shape.back() = count;
  Tensor out(shape);
  for (Eigen::Index r = 0; r < rows; ++r) out.data.segment(r * count, count) = X.data.segment(r * last + begin, count);
  return tape.record(std::move(out), tape.requires_grad(x), [x, rows, last, begin, count](Tape& t, const Eigen::VectorXd& g) {
    Eigen::VectorXd& dx = t.grad_buffer(x);
    for (Eigen::Index r = 0; r < rows; ++r) dx.segment(r * last + begin, count) += g.segment(r * count, count);
  });
}

Var softmax_views(Tape& tape, Var logits) {
  const Tensor& L = tape.value(logits);
  require((L.rank() == 2) || (L.rank() == 3 && L.dim(2) == 1), "softmax_views: expected [P,N] or [P,N,1]");
  const int p = L.dim(0), n = L.dim(1);
  require(n >= 1, "softmax_views: no views");
  Tensor out({p, n});
  for (int i = 0; i < p; ++i) {
    const auto row = L.data.segment(Eigen::Index(i) * n, n);
    const double top = row.maxCoeff();
    auto dst = out.data.segment(Eigen::Index(i) * n, n);
    dst = (row.array() - top).exp().matrix();
    dst /= dst.sum();
  }
  Eigen::VectorXd weights = out.data;
  return tape.record(std::move(out), tape.requires_grad(logits), [logits, p, n, weights](Tape& t, const Eigen::VectorXd& g) {
    Eigen::VectorXd& dl = t.grad_buffer(logits);
    for (int i = 0; i < p; ++i) {
      const auto w = weights.segment(Eigen::Index(i) * n, n);
      const auto gw = g.segment(Eigen::Index(i) * n, n);
      const double inner = w.dot(gw);
      dl.segment(Eigen::Index(i) * n, n).array() += w.array() * (gw.array() - inner);
    }
  });
}

Var weighted_view_sum(Tape& tape, Var f, Var w) {
  const Tensor& F = tape.value(f);
  require_rank(F, 3, "weighted_view_sum features");
  const int p = F.dim(0), n = F.dim(1), c = F.dim(2);
  require(tape.shape(w) == Shape{p, n}, "weighted_view_sum: weight shape");
  const Eigen::VectorXd& Wt = tape.value(w).data;
  Tensor out({p, c});
  for (int i = 0; i < p; ++i)
    for (int v = 0; v < n; ++v)
      out.data.segment(Eigen::Index(i) * c, c) += Wt[Eigen::Index(i) * n + v] * F.data.segment((Eigen::Index(i) * n + v) * c, c);
  return tape.record(std::move(out), any_requires(tape, {f, w}), [f, w, p, n, c](Tape& t, const Eigen::VectorXd& g) {
    const bool df = t.requires_grad(f), dw = t.requires_grad(w);
    const Eigen::VectorXd& Fd = t.value(f).data;
    const Eigen::VectorXd& Wd = t.value(w).data;
    for (int i = 0; i < p; ++i)
      for (int v = 0; v < n; ++v) {
        const Eigen::Index o = (Eigen::Index(i) * n + v) * c;
        const auto gi = g.segment(Eigen::Index(i) * c, c);
        if (df) t.grad_buffer(f).segment(o, c) += Wd[Eigen::Index(i) * n + v] * gi;
        if (dw) t.grad_buffer(w)[Eigen::Index(i) * n + v] += Fd.segment(o, c).dot(gi);
      }
  });
}

Var points_to_grid(Tape& tape, Var x, const Shape& grid) {
  const Tensor& X = tape.value(x);
  require_rank(X, 2, "points_to_grid");
  const int p = X.dim(0), c = X.dim(1);
  require(element_count(grid) == p, "points_to_grid: grid does not hold every point");
  Shape shape{c};
  shape.insert(shape.end(), grid.begin(), grid.end());
  Tensor out(shape);
  MapRow(out.data.data(), c, p) = ConstMapRow(X.data.data(), p, c).transpose();
  return tape.record(std::move(out), tape.requires_grad(x), [x, p, c](Tape& t, const Eigen::VectorXd& g) {
    MapRow(t.grad_buffer(x).data(), p, c) += ConstMapRow(g.data(), c, p).transpose();
  });
}

// --- losses ---------------------------------------------------------------------

Var l1_mean(Tape& tape, Var x, const Tensor& target) {
  require(tape.shape(x) == target.shape, "l1_mean: target shape " + to_string(target.shape) + " vs " +
                                              to_string(tape.shape(x)));
  require(target.size() > 0, "l1_mean: empty input");
  const Eigen::VectorXd diff = tape.value(x).data - target.data;
  const double n = static_cast<double>(diff.size());
  Tensor out = Tensor::scalar(diff.cwiseAbs().sum() / n);
  Eigen::VectorXd sign = diff.unaryExpr([n](double d) { return d > 0 ? 1.0 / n : (d < 0 ? -1.0 / n : 0.0); });
  return tape.record(std::move(out), tape.requires_grad(x),
                     [x, sign](Tape& t, const Eigen::VectorXd& g) { t.grad_buffer(x) += g[0] * sign; });
}

namespace {

struct AxisSplit {
  Eigen::Index outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  require(axis >= 0 && axis < static_cast<int>(shape.size()), "forward_difference: axis out of range");
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  require(s.extent >= 1, "forward_difference: axis is empty");
  return s;
}

}  // namespace

Tensor forward_difference(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape, axis);
  Shape shape = x.shape;
  shape[static_cast<std::size_t>(axis)] -= 1;
  Tensor out(shape);
  for (Eigen::Index o = 0; o < s.outer; ++o)
    for (Eigen::Index i = 0; i + 1 < s.extent; ++i)
      out.data.segment((o * (s.extent - 1) + i) * s.inner, s.inner) =
          x.data.segment((o * s.extent + i + 1) * s.inner, s.inner) - x.data.segment((o * s.extent + i) * s.inner, s.inner);
  return out;
}

Var forward_difference(Tape& tape, Var x, int axis) {
  const AxisSplit s = split_axis(tape.shape(x), axis);
  Tensor out = forward_difference(tape.value(x), axis);
  return tape.record(std::move(out), tape.requires_grad(x), [x, s](Tape& t, const Eigen::VectorXd& g) {
    Eigen::VectorXd& dx = t.grad_buffer(x);
    for (Eigen::Index o = 0; o < s.outer; ++o)
      for (Eigen::Index i = 0; i + 1 < s.extent; ++i) {
        const auto gi = g.segment((o * (s.extent - 1) + i) * s.inner, s.inner);
        dx.segment((o * s.extent + i + 1) * s.inner, s.inner) += gi;
        dx.segment((o * s.extent + i) * s.inner, s.inner) -= gi;
      }
  });
}

}  // namespace cbct::ad
