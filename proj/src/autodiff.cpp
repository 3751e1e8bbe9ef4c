#include "ecm_sphere/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ecm_sphere/error.hpp"
#include "ecm_sphere/kernels.hpp"

namespace ecm_sphere::ad {

namespace {

void require_same_tape(Var a, Var b) {
  require(&a.tape() == &b.tape(), ErrorKind::contract, "operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), ErrorKind::dimension,
          std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(*this); }

Tensor Gradients::of(Var v) const {
  require(&v.tape() == tape_, ErrorKind::contract, "variable from another tape");
  const Tensor& g = grads_[v.id()];
  if (g.empty() && !v.value().empty()) return Tensor(v.rows(), v.cols());
  return g;
}

Var Tape::parameter(Tensor value) {
  if (mode_ == NumericMode::checked) value.check_finite("parameter");
  nodes_.push_back({std::move(value), nullptr, true});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  if (mode_ == NumericMode::checked) value.check_finite("constant");
  nodes_.push_back({std::move(value), nullptr, false});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  std::vector<std::uint32_t> ids;
  ids.reserve(inputs.size());
  for (Var in : inputs) {
    require(&in.tape() == this, ErrorKind::contract, "operand lives on a different tape");
    ids.push_back(in.id());
  }
  return record_many(std::move(value), ids, std::move(fn));
}

Var Tape::record_many(Tensor value, std::span<const std::uint32_t> inputs, BackwardFn fn) {
  bool needs = false;
  for (std::uint32_t id : inputs) needs = needs || nodes_[id].requires_grad;
  nodes_.push_back({std::move(value), needs ? std::move(fn) : nullptr, needs});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::accumulate(std::vector<Tensor>& grads, std::uint32_t id, const Tensor& delta) {
  Tensor& g = grads[id];
  if (g.empty()) {
    g = delta;
    return;
  }
  kernels::active().axpy(1.0, delta.data(), g.data(), g.size());
}

Gradients Tape::backward(Var output) const {
  require(&output.tape() == this, ErrorKind::contract, "output lives on a different tape");
  const Tensor& out = value(output);
  require(out.rows() == 1 && out.cols() == 1, ErrorKind::contract,
          "backward() needs a scalar output, got " + out.shape_string());
  std::vector<Tensor> grads(nodes_.size());
  grads[output.id()] = Tensor::scalar(1.0);
  for (std::size_t k = output.id() + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!node.backward || grads[k].empty()) continue;
    node.backward(*this, grads[k], grads);
  }
  return Gradients(*this, std::move(grads));
}

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const std::uint32_t ia = a.id(), ib = b.id();
  Tensor y = ecm_sphere::matmul(a.value(), b.value());
  return a.tape().record(std::move(y), {a, b}, [ia, ib](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    Tensor ga(av.rows(), av.cols());
    kernels::gemm_nt(g.data(), bv.data(), ga.data(), g.rows(), g.cols(), bv.rows());
    Tape::accumulate(gs, ia, ga);
    Tensor gb(bv.rows(), bv.cols());
    kernels::gemm_tn(av.data(), g.data(), gb.data(), av.cols(), av.rows(), g.cols());
    Tape::accumulate(gs, ib, gb);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const std::uint32_t ia = a.id(), ib = b.id();
  Tensor y = ecm_sphere::matmul_nt(a.value(), b.value());
  return a.tape().record(std::move(y), {a, b}, [ia, ib](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    // y = a b^T: da = g b, db = g^T a
    Tensor ga(av.rows(), av.cols());
    kernels::gemm_nn(g.data(), bv.data(), ga.data(), g.rows(), g.cols(), bv.cols());
    Tape::accumulate(gs, ia, ga);
    Tensor gb(bv.rows(), bv.cols());
    kernels::gemm_tn(g.data(), av.data(), gb.data(), g.cols(), g.rows(), av.cols());
    Tape::accumulate(gs, ib, gb);
  });
}

Var transpose(Var a) {
  const std::uint32_t ia = a.id();
  return a.tape().record(a.value().transposed(), {a},
                         [ia](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
                           Tape::accumulate(gs, ia, g.transposed());
                         });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  const std::uint32_t ia = a.id(), ib = b.id();
  Tensor y = a.value();
  kernels::active().axpy(1.0, b.value().data(), y.data(), y.size());
  return a.tape().record(std::move(y), {a, b}, [ia, ib](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tape::accumulate(gs, ia, g);
    Tape::accumulate(gs, ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  const std::uint32_t ia = a.id(), ib = b.id();
  Tensor y = a.value();
  kernels::active().axpy(-1.0, b.value().data(), y.data(), y.size());
  return a.tape().record(std::move(y), {a, b}, [ia, ib](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tape::accumulate(gs, ia, g);
    Tensor neg = g;
    kernels::active().scale(-1.0, neg.data(), neg.size());
    Tape::accumulate(gs, ib, neg);
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  const std::uint32_t ia = a.id(), ib = b.id();
  Tensor y(a.rows(), a.cols());
  kernels::active().mul(a.value().data(), b.value().data(), y.data(), y.size());
  return a.tape().record(std::move(y), {a, b}, [ia, ib](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const auto& kt = kernels::active();
    Tensor ga(g.rows(), g.cols());
    kt.mul(g.data(), t.value(ib).data(), ga.data(), g.size());
    Tape::accumulate(gs, ia, ga);
    Tensor gb(g.rows(), g.cols());
    kt.mul(g.data(), t.value(ia).data(), gb.data(), g.size());
    Tape::accumulate(gs, ib, gb);
  });
}

Var scale(Var a, double s) {
  const std::uint32_t ia = a.id();
  Tensor y = a.value();
  kernels::active().scale(s, y.data(), y.size());
  return a.tape().record(std::move(y), {a}, [ia, s](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tensor ga = g;
    kernels::active().scale(s, ga.data(), ga.size());
    Tape::accumulate(gs, ia, ga);
  });
}

Var add_scalar(Var a, double s) {
  const std::uint32_t ia = a.id();
  Tensor y = map(a.value(), [s](double v) { return v + s; });
  return a.tape().record(std::move(y), {a}, [ia](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tape::accumulate(gs, ia, g);
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::dimension,
          "add_row: " + a.value().shape_string() + " + " + row.value().shape_string());
  const std::uint32_t ia = a.id(), ir = row.id();
  Tensor y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    kernels::active().axpy(1.0, row.value().data(), y.row(r).data(), y.cols());
  return a.tape().record(std::move(y), {a, row}, [ia, ir](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tape::accumulate(gs, ia, g);
    Tensor gr(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) kernels::active().axpy(1.0, g.row(r).data(), gr.data(), g.cols());
    Tape::accumulate(gs, ir, gr);
  });
}

Var mul_row(Var a, Var row) {
  require_same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::dimension,
          "mul_row: " + a.value().shape_string() + " * " + row.value().shape_string());
  const std::uint32_t ia = a.id(), ir = row.id();
  const auto& kt = kernels::active();
  Tensor y(a.rows(), a.cols());
  for (std::size_t r = 0; r < y.rows(); ++r)
    kt.mul(a.value().row(r).data(), row.value().data(), y.row(r).data(), y.cols());
  return a.tape().record(std::move(y), {a, row}, [ia, ir](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const auto& k = kernels::active();
    const Tensor& av = t.value(ia);
    const Tensor& rv = t.value(ir);
    Tensor ga(g.rows(), g.cols());
    Tensor gr(1, g.cols());
    std::vector<double> tmp(g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      k.mul(g.row(r).data(), rv.data(), ga.row(r).data(), g.cols());
      k.mul(g.row(r).data(), av.row(r).data(), tmp.data(), g.cols());
      k.axpy(1.0, tmp.data(), gr.data(), g.cols());
    }
    Tape::accumulate(gs, ia, ga);
    Tape::accumulate(gs, ir, gr);
  });
}

Var add_col(Var a, Var col) {
  require_same_tape(a, col);
  require(col.cols() == 1 && col.rows() == a.rows(), ErrorKind::dimension,
          "add_col: " + a.value().shape_string() + " + " + col.value().shape_string());
  const std::uint32_t ia = a.id(), ic = col.id();
  Tensor y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (double& v : y.row(r)) v += col.value()[r];
  return a.tape().record(std::move(y), {a, col}, [ia, ic](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tape::accumulate(gs, ia, g);
    Tensor gc(g.rows(), 1);
    for (std::size_t r = 0; r < g.rows(); ++r) gc[r] = kernels::active().sum(g.row(r).data(), g.cols());
    Tape::accumulate(gs, ic, gc);
  });
}

Var div_col(Var a, Var col) {
  require_same_tape(a, col);
  require(col.cols() == 1 && col.rows() == a.rows(), ErrorKind::dimension,
          "div_col: " + a.value().shape_string() + " / " + col.value().shape_string());
  const std::uint32_t ia = a.id(), ic = col.id();
  Tensor y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r) kernels::active().scale(1.0 / col.value()[r], y.row(r).data(), y.cols());
  return a.tape().record(std::move(y), {a, col}, [ia, ic](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const auto& k = kernels::active();
    const Tensor& av = t.value(ia);
    const Tensor& cv = t.value(ic);
    Tensor ga = g;
    Tensor gc(g.rows(), 1);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double c = cv[r];
      k.scale(1.0 / c, ga.row(r).data(), g.cols());
      gc[r] = -k.dot(g.row(r).data(), av.row(r).data(), g.cols()) / (c * c);
    }
    Tape::accumulate(gs, ia, ga);
    Tape::accumulate(gs, ic, gc);
  });
}

Var softmax_rows(Var a) {
  const std::uint32_t ia = a.id();
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto out = y.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    require(std::isfinite(mx), ErrorKind::contract, "softmax row " + std::to_string(r) + " has no finite entry");
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      total += out[c];
    }
    for (double& v : out) v /= total;
  }
  const std::uint32_t iy = static_cast<std::uint32_t>(a.tape().size());
  return a.tape().record(std::move(y), {a}, [ia, iy](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& yv = t.value(iy);
    Tensor ga(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double dotgy = kernels::active().dot(g.row(r).data(), yv.row(r).data(), g.cols());
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = yv(r, c) * (g(r, c) - dotgy);
    }
    Tape::accumulate(gs, ia, ga);
  });
}

Var silu(Var a) {
  const std::uint32_t ia = a.id();
  Tensor y = map(a.value(), [](double x) { return x * sigmoid(x); });
  return a.tape().record(std::move(y), {a}, [ia](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& x = t.value(ia);
    Tensor ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(x[i]);
      ga[i] = g[i] * (s + x[i] * s * (1.0 - s));
    }
    Tape::accumulate(gs, ia, ga);
  });
}

Var exp(Var a) {
  const std::uint32_t ia = a.id();
  const std::uint32_t iy = static_cast<std::uint32_t>(a.tape().size());
  Tensor y = map(a.value(), [](double x) { return std::exp(x); });
  return a.tape().record(std::move(y), {a}, [ia, iy](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    Tensor ga(g.rows(), g.cols());
    kernels::active().mul(g.data(), t.value(iy).data(), ga.data(), g.size());
    Tape::accumulate(gs, ia, ga);
  });
}

Var log(Var a) {
  const std::uint32_t ia = a.id();
  Tensor y = map(a.value(), [](double x) { return std::log(x); });
  return a.tape().record(std::move(y), {a}, [ia](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& x = t.value(ia);
    Tensor ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / x[i];
    Tape::accumulate(gs, ia, ga);
  });
}

Var sqrt(Var a) {
  const std::uint32_t ia = a.id();
  const std::uint32_t iy = static_cast<std::uint32_t>(a.tape().size());
  Tensor y = map(a.value(), [](double x) { return std::sqrt(x); });
  return a.tape().record(std::move(y), {a}, [ia, iy](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& yv = t.value(iy);
    Tensor ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / (2.0 * yv[i]);
    Tape::accumulate(gs, ia, ga);
  });
}

Var square(Var a) {
  const std::uint32_t ia = a.id();
  Tensor y(a.rows(), a.cols());
  kernels::active().mul(a.value().data(), a.value().data(), y.data(), y.size());
  return a.tape().record(std::move(y), {a}, [ia](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& x = t.value(ia);
    Tensor ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = 2.0 * x[i] * g[i];
    Tape::accumulate(gs, ia, ga);
  });
}

Var abs(Var a) {
  const std::uint32_t ia = a.id();
  Tensor y = map(a.value(), [](double x) { return std::abs(x); });
  return a.tape().record(std::move(y), {a}, [ia](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& x = t.value(ia);
    Tensor ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0 ? g[i] : (x[i] < 0 ? -g[i] : 0.0);
    Tape::accumulate(gs, ia, ga);
  });
}

Var relu(Var a) {
  const std::uint32_t ia = a.id();
  Tensor y = map(a.value(), [](double x) { return x > 0 ? x : 0.0; });
  return a.tape().record(std::move(y), {a}, [ia](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
    const Tensor& x = t.value(ia);
    Tensor ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0 ? g[i] : 0.0;
    Tape::accumulate(gs, ia, ga);
  });
}

Var normalize_rows(Var a) {
  const std::uint32_t ia = a.id();
  const std::uint32_t iy = static_cast<std::uint32_t>(a.tape().size());
  const bool checked = a.tape().mode() == NumericMode::checked;
  const Tensor& x = a.value();
  const auto& kt = kernels::active();
  Tensor y = x;
  Tensor norms(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = kt.dot(x.row(r).data(), x.row(r).data(), x.cols());
    if (checked) {
      require(sq > 0.0, ErrorKind::degenerate_norm, "normalize_rows: row " + std::to_string(r) + " is zero");
    } else {
      sq = std::max(sq, kTrainingNormFloor);
    }
    norms[r] = std::sqrt(sq);
    kt.scale(1.0 / norms[r], y.row(r).data(), x.cols());
  }
  return a.tape().record(std::move(y), {a},
                         [ia, iy, norms = std::move(norms)](const Tape& t, const Tensor& g, std::vector<Tensor>& gs) {
                           // dx = (g - y (y . g)) / |x|
                           const auto& k = kernels::active();
                           const Tensor& yv = t.value(iy);
                           Tensor ga = g;
                           for (std::size_t r = 0; r < g.rows(); ++r) {
                             const double proj = k.dot(yv.row(r).data(), g.row(r).data(), g.cols());
                             k.axpy(-proj, yv.row(r).data(), ga.row(r).data(), g.cols());
                             k.scale(1.0 / norms[r], ga.row(r).data(), g.cols());
                           }
                           Tape::accumulate(gs, ia, ga);
                         });
}

Var sum(Var a) {
  const std::uint32_t ia = a.id();
  Tensor y = Tensor::scalar(kernels::active().sum(a.value().data(), a.value().size()));
  const std::size_t r = a.rows(), c = a.cols();
  return a.tape().record(std::move(y), {a}, [ia, r, c](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tape::accumulate(gs, ia, Tensor(r, c, g[0]));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, ErrorKind::dimension, "mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(Var a) {
  const std::uint32_t ia = a.id();
  const std::size_t rows = a.rows(), cols = a.cols();
  require(rows > 0, ErrorKind::dimension, "mean_rows of empty tensor");
  Tensor y(1, cols);
  for (std::size_t r = 0; r < rows; ++r) kernels::active().axpy(1.0, a.value().row(r).data(), y.data(), cols);
  kernels::active().scale(1.0 / static_cast<double>(rows), y.data(), cols);
  return a.tape().record(std::move(y), {a}, [ia, rows, cols](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tensor ga(rows, cols);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga(r, c) = g[c] * inv;
    Tape::accumulate(gs, ia, ga);
  });
}

Var sum_cols(Var a) {
  const std::uint32_t ia = a.id();
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor y(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) y[r] = kernels::active().sum(a.value().row(r).data(), cols);
  return a.tape().record(std::move(y), {a}, [ia, rows, cols](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tensor ga(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga(r, c) = g[r];
    Tape::accumulate(gs, ia, ga);
  });
}

Var mean_cols(Var a) {
  require(a.cols() > 0, ErrorKind::dimension, "mean_cols of empty tensor");
  return scale(sum_cols(a), 1.0 / static_cast<double>(a.cols()));
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::dimension, "concat_cols of nothing");
  Tape& tape = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    require(&p.tape() == &tape, ErrorKind::contract, "concat_cols across tapes");
    require(p.rows() == rows, ErrorKind::dimension, "concat_cols: row count mismatch");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Tensor y(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.value().row(r).data(), p.cols(), y.row(r).data() + off);
    off += p.cols();
  }
  return tape.record_many(std::move(y), ids, [ids, widths, rows](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor part(rows, widths[k]);
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.row(r).data() + o, widths[k], part.row(r).data());
      Tape::accumulate(gs, ids[k], part);
      o += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::dimension, "concat_rows of nothing");
  Tape& tape = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> heights;
  for (Var p : parts) {
    require(&p.tape() == &tape, ErrorKind::contract, "concat_rows across tapes");
    require(p.cols() == cols, ErrorKind::dimension, "concat_rows: column count mismatch");
    ids.push_back(p.id());
    heights.push_back(p.rows());
    rows += p.rows();
  }
  Tensor y(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy_n(p.value().data(), p.value().size(), y.data() + off * cols);
    off += p.rows();
  }
  return tape.record_many(std::move(y), ids, [ids, heights, cols](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor part(heights[k], cols);
      std::copy_n(g.data() + o * cols, heights[k] * cols, part.data());
      Tape::accumulate(gs, ids[k], part);
      o += heights[k];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.rows() && count > 0, ErrorKind::dimension,
          "slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " + a.value().shape_string());
  const std::uint32_t ia = a.id();
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor y(count, cols);
  std::copy_n(a.value().data() + begin * cols, count * cols, y.data());
  return a.tape().record(std::move(y), {a}, [ia, begin, rows, cols](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tensor ga(rows, cols);
    std::copy_n(g.data(), g.size(), ga.data() + begin * cols);
    Tape::accumulate(gs, ia, ga);
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.cols() && count > 0, ErrorKind::dimension,
          "slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " + a.value().shape_string());
  const std::uint32_t ia = a.id();
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor y(rows, count);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(a.value().row(r).data() + begin, count, y.row(r).data());
  return a.tape().record(std::move(y), {a}, [ia, begin, rows, cols, count](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tensor ga(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.row(r).data(), count, ga.row(r).data() + begin);
    Tape::accumulate(gs, ia, ga);
  });
}

Var masked_fill(Var a, const Tensor& mask, double fill) {
  require_same_shape(a.value(), mask, "masked_fill");
  const std::uint32_t ia = a.id();
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i)
    if (mask[i] != 0.0) y[i] = fill;
  return a.tape().record(std::move(y), {a}, [ia, mask](const Tape&, const Tensor& g, std::vector<Tensor>& gs) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (mask[i] != 0.0) ga[i] = 0.0;
    Tape::accumulate(gs, ia, ga);
  });
}

Var rms_norm(Var x, Var gain, double eps) {
  Var rms = sqrt(add_scalar(mean_cols(square(x)), eps));
  return mul_row(div_col(x, rms), gain);
}

Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& params, double eps, double tol,
                           NumericMode mode) {
  require(eps >= 1e-7 && eps <= 1e-3, ErrorKind::contract, "grad_check eps must lie in [1e-7, 1e-3]");

  auto evaluate = [&](const std::vector<Tensor>& values) {
    Tape tape(mode);
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const auto& v : values) vars.push_back(tape.constant(v));
    const double out = f(tape, vars).value().item();
    if (!std::isfinite(out)) fail(ErrorKind::evaluation, "grad_check: function value is not finite");
    return out;
  };

  std::vector<Tensor> analytic;
  {
    Tape tape(mode);
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var out = f(tape, vars);
    if (!std::isfinite(out.value().item())) fail(ErrorKind::evaluation, "grad_check: function value is not finite");
    const Gradients grads = tape.backward(out);
    for (Var v : vars) analytic.push_back(grads.of(v));
  }

  GradCheckReport report;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t e = 0; e < params[p].size(); ++e) {
      const double orig = params[p][e];
      probe[p][e] = orig + eps;
      const double up = evaluate(probe);
      probe[p][e] = orig - eps;
      const double down = evaluate(probe);
      probe[p][e] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][e];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error || report.entries_checked == 1) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_entry = e;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace ecm_sphere::ad
