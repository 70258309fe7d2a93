// Differentiable operations. Each backward rule reads the forward values it
// needs back from the tape through the captured node ids.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ci4gi/autodiff.hpp"
#include "ci4gi/errors.hpp"

namespace ci4gi {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("operation on an unbound Var");
  return *a.tape();
}

Tape& common_tape(Var a, Var b) {
  Tape& t = tape_of(a);
  if (&t != &tape_of(b)) throw UsageError("operands recorded on different tapes");
  return t;
}

[[noreturn]] void mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

void require_matrix(std::string_view op, const Tensor& t) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// f(x) elementwise; dfdx(x, y) is the local derivative given input and output.
template <class F, class D>
Var unary(OpKind kind, Var a, F f, D dfdx) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const NodeId in = a.id();
  const NodeId out = tape.next_id();
  return tape.record(kind, std::move(y), {a}, [in, out, dfdx](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(in);
    const Tensor& yv = t.value(out);
    Tensor dx(xv.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * dfdx(xv[i], yv[i]);
    t.accumulate(in, dx);
  });
}

// Equal shapes, or one rank-0 operand broadcast against the other.
template <class F, class DA, class DB>
Var binary(OpKind kind, Var a, Var b, F f, DA dfda, DB dfdb) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const bool a_bcast = x.rank() == 0 && z.rank() != 0;
  const bool b_bcast = z.rank() == 0 && x.rank() != 0;
  if (!a_bcast && !b_bcast && x.shape() != z.shape()) mismatch(op_name(kind), x.shape(), z.shape());
  const Shape& shape = a_bcast ? z.shape() : x.shape();
  Tensor y(shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[a_bcast ? 0 : i], z[b_bcast ? 0 : i]);
  const NodeId ia = a.id(), ib = b.id();
  return tape.record(kind, std::move(y), {a, b}, [=](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    const Tensor& zv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor da(xv.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = g[i] * dfda(xv[a_bcast ? 0 : i], zv[b_bcast ? 0 : i]);
        da[a_bcast ? 0 : i] += v;
      }
      t.accumulate(ia, da);
    }
    if (t.requires_grad(ib)) {
      Tensor db(zv.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = g[i] * dfdb(xv[a_bcast ? 0 : i], zv[b_bcast ? 0 : i]);
        db[b_bcast ? 0 : i] += v;
      }
      t.accumulate(ib, db);
    }
  });
}

void check_segments(const std::vector<std::size_t>& ids, std::size_t rows, std::size_t n_segments,
                    std::string_view op) {
  if (ids.size() != rows) {
    throw DimensionError(std::string(op) + ": " + std::to_string(ids.size()) + " segment ids for " +
                         std::to_string(rows) + " rows");
  }
  for (auto s : ids) {
    if (s >= n_segments) throw InvalidGraphError(std::string(op) + ": segment id out of range");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  return binary(
      OpKind::Add, a, b, [](double x, double z) { return x + z; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      OpKind::Sub, a, b, [](double x, double z) { return x - z; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      OpKind::Mul, a, b, [](double x, double z) { return x * z; }, [](double, double z) { return z; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw NumericDomainError("div: division by zero");
  }
  return binary(
      OpKind::Div, a, b, [](double x, double z) { return x / z; }, [](double, double z) { return 1.0 / z; },
      [](double x, double z) { return -x / (z * z); });
}

Var exp(Var a) {
  return unary(
      OpKind::Exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericDomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary(
      OpKind::Log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(OpKind::Sigmoid, a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      OpKind::LeakyRelu, a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var softplus(Var a) {
  return unary(OpKind::Softplus, a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var scale(Var a, double c) {
  return unary(
      OpKind::Scale, a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(
      OpKind::AddScalar, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Matrix algebra

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  Tensor y = kernels::matmul(a.value(), b.value());
  const NodeId ia = a.id(), ib = b.id();
  return tape.record(OpKind::MatMul, std::move(y), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul_nt(g, t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul_tn(t.value(ia), g));
  });
}

Var spmm(std::shared_ptr<const SparseMatrix> s, Var b) {
  if (!s) throw UsageError("spmm: null sparse operand");
  Tape& tape = tape_of(b);
  Tensor y = kernels::spmm(*s, b.value());
  const NodeId ib = b.id();
  return tape.record(OpKind::SpMM, std::move(y), {b},
                     [s, ib](Tape& t, const Tensor& g) { t.accumulate(ib, kernels::spmm_t(*s, g)); });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a);
  Tensor y = kernels::transpose(a.value());
  const NodeId ia = a.id();
  return tape.record(OpKind::Transpose, std::move(y), {a},
                     [ia](Tape& t, const Tensor& g) { t.accumulate(ia, kernels::transpose(g)); });
}

// ---------------------------------------------------------------------------
// Row-wise

namespace {

Var row_reduce(OpKind kind, Var a, double factor) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix(op_name(kind), x);
  Tensor y(Shape{x.rows(), 1});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    y[i] = s * factor;
  }
  const NodeId ia = a.id();
  return tape.record(kind, std::move(y), {a}, [ia, factor](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    Tensor dx(xv.shape());
    for (std::size_t i = 0; i < xv.rows(); ++i)
      for (auto& v : dx.row(i)) v = g[i] * factor;
    t.accumulate(ia, dx);
  });
}

}  // namespace

Var row_sum(Var a) { return row_reduce(OpKind::RowSum, a, 1.0); }

Var row_mean(Var a) {
  const std::size_t d = a.value().cols();
  if (d == 0) throw NumericDomainError("row_mean: zero columns");
  return row_reduce(OpKind::RowMean, a, 1.0 / static_cast<double>(d));
}

Var l2_normalize_rows(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix("l2_normalize_rows", x);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double n2 = 0.0;
    for (double v : x.row(i)) n2 += v * v;
    if (!(n2 > 0.0)) throw NumericDomainError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    const double inv = 1.0 / std::sqrt(n2);
    auto yr = y.row(i);
    auto xr = x.row(i);
    for (std::size_t j = 0; j < xr.size(); ++j) yr[j] = xr[j] * inv;
  }
  const NodeId ia = a.id();
  const NodeId out = tape.next_id();
  return tape.record(OpKind::L2NormalizeRows, std::move(y), {a}, [ia, out](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(out);
    Tensor dx(xv.shape());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      double n2 = 0.0, yg = 0.0;
      auto xr = xv.row(i);
      auto yr = yv.row(i);
      auto gr = g.row(i);
      for (std::size_t j = 0; j < xr.size(); ++j) {
        n2 += xr[j] * xr[j];
        yg += yr[j] * gr[j];
      }
      const double inv = 1.0 / std::sqrt(n2);
      auto dr = dx.row(i);
      for (std::size_t j = 0; j < xr.size(); ++j) dr[j] = (gr[j] - yr[j] * yg) * inv;
    }
    t.accumulate(ia, dx);
  });
}

Var segment_softmax(Var logits, IndexArray segment_ids, std::size_t n_segments) {
  Tape& tape = tape_of(logits);
  const Tensor& x = logits.value();
  if (x.cols() != 1 || x.rank() > 2) {
    throw DimensionError("segment_softmax expects a column of logits, got " + shape_string(x.shape()));
  }
  const auto& seg = *segment_ids;
  check_segments(seg, x.rows(), n_segments, "segment_softmax");
  std::vector<double> max(n_segments, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> count(n_segments, 0);
  for (std::size_t e = 0; e < seg.size(); ++e) {
    max[seg[e]] = std::max(max[seg[e]], x[e]);
    ++count[seg[e]];
  }
  for (std::size_t s = 0; s < n_segments; ++s) {
    if (count[s] == 0) throw InvalidGraphError("segment_softmax: segment " + std::to_string(s) + " is empty");
  }
  Tensor y(x.shape());
  std::vector<double> denom(n_segments, 0.0);
  for (std::size_t e = 0; e < seg.size(); ++e) {
    y[e] = std::exp(x[e] - max[seg[e]]);
    denom[seg[e]] += y[e];
  }
  for (std::size_t e = 0; e < seg.size(); ++e) y[e] /= denom[seg[e]];
  const NodeId ia = logits.id();
  const NodeId out = tape.next_id();
  return tape.record(OpKind::SegmentSoftmax, std::move(y), {logits},
                     [ia, out, segment_ids, n_segments](Tape& t, const Tensor& g) {
                       const Tensor& yv = t.value(out);
                       const auto& ids = *segment_ids;
                       std::vector<double> dot(n_segments, 0.0);
                       for (std::size_t e = 0; e < ids.size(); ++e) dot[ids[e]] += yv[e] * g[e];
                       Tensor dx(yv.shape());
                       for (std::size_t e = 0; e < ids.size(); ++e) dx[e] = yv[e] * (g[e] - dot[ids[e]]);
                       t.accumulate(ia, dx);
                     });
}

Var segment_sum(Var a, IndexArray segment_ids, std::size_t n_segments) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.rank() > 2) throw DimensionError("segment_sum expects rank <= 2, got " + shape_string(x.shape()));
  const auto& seg = *segment_ids;
  check_segments(seg, x.rows(), n_segments, "segment_sum");
  const std::size_t d = x.cols();
  Tensor y(x.rank() == 2 ? Shape{n_segments, d} : Shape{n_segments});
  for (std::size_t e = 0; e < seg.size(); ++e) {
    auto yr = y.row(seg[e]);
    auto xr = x.row(e);
    for (std::size_t j = 0; j < d; ++j) yr[j] += xr[j];
  }
  const NodeId ia = a.id();
  return tape.record(OpKind::SegmentSum, std::move(y), {a}, [ia, segment_ids](Tape& t, const Tensor& g) {
    const auto& ids = *segment_ids;
    Tensor dx(t.value(ia).shape());
    for (std::size_t e = 0; e < ids.size(); ++e) {
      auto gr = g.row(ids[e]);
      std::copy(gr.begin(), gr.end(), dx.row(e).begin());
    }
    t.accumulate(ia, dx);
  });
}

// ---------------------------------------------------------------------------
// Structural

Var gather_rows(Var a, IndexArray rows) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix("gather_rows", x);
  const std::size_t d = x.cols();
  Tensor y(Shape{rows->size(), d});
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const std::size_t r = (*rows)[i];
    if (r >= x.rows()) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range");
    auto src = x.row(r);
    std::copy(src.begin(), src.end(), y.row(i).begin());
  }
  const NodeId ia = a.id();
  return tape.record(OpKind::GatherRows, std::move(y), {a}, [ia, rows](Tape& t, const Tensor& g) {
    Tensor dx(t.value(ia).shape());
    for (std::size_t i = 0; i < rows->size(); ++i) {
      auto dr = dx.row((*rows)[i]);
      auto gr = g.row(i);
      for (std::size_t j = 0; j < dr.size(); ++j) dr[j] += gr[j];
    }
    t.accumulate(ia, dx);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no operands");
  Tape& tape = tape_of(parts.front());
  const std::size_t d = parts.front().value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix("concat_rows", p.value());
    if (p.value().cols() != d) mismatch("concat_rows", parts.front().shape(), p.shape());
    total += p.value().rows();
  }
  Tensor y(Shape{total, d});
  std::vector<NodeId> ids;
  std::vector<std::size_t> offsets{0};
  auto dst = y.data().begin();
  for (const Var& p : parts) {
    dst = std::copy(p.value().data().begin(), p.value().data().end(), dst);
    ids.push_back(p.id());
    offsets.push_back(offsets.back() + p.value().rows());
  }
  return tape.record(OpKind::ConcatRows, std::move(y), parts, [ids, offsets, d](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      const std::size_t n = offsets[k + 1] - offsets[k];
      auto begin = g.data().begin() + static_cast<std::ptrdiff_t>(offsets[k] * d);
      t.accumulate(ids[k], Tensor(Shape{n, d}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n * d))));
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix("slice_rows", x);
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                         shape_string(x.shape()));
  }
  const std::size_t d = x.cols();
  auto first = x.data().begin() + static_cast<std::ptrdiff_t>(begin * d);
  Tensor y(Shape{end - begin, d}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - begin) * d)));
  const NodeId ia = a.id();
  return tape.record(OpKind::SliceRows, std::move(y), {a}, [ia, begin, d](Tape& t, const Tensor& g) {
    Tensor dx(t.value(ia).shape());
    std::copy(g.data().begin(), g.data().end(), dx.data().begin() + static_cast<std::ptrdiff_t>(begin * d));
    t.accumulate(ia, dx);
  });
}

Var add_bias(Var a, Var bias) {
  Tape& tape = common_tape(a, bias);
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  require_matrix("add_bias", x);
  if (b.size() != x.cols()) mismatch("add_bias", x.shape(), b.shape());
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) yr[j] += b[j];
  }
  const NodeId ia = a.id(), ib = bias.id();
  return tape.record(OpKind::AddBias, std::move(y), {a, bias}, [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) {
      Tensor db(t.value(ib).shape());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto gr = g.row(i);
        for (std::size_t j = 0; j < gr.size(); ++j) db[j] += gr[j];
      }
      t.accumulate(ib, db);
    }
  });
}

Var scale_rows(Var a, Var weights) {
  Tape& tape = common_tape(a, weights);
  const Tensor& x = a.value();
  const Tensor& w = weights.value();
  require_matrix("scale_rows", x);
  if (w.size() != x.rows()) mismatch("scale_rows", x.shape(), w.shape());
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (auto& v : y.row(i)) v *= w[i];
  const NodeId ia = a.id(), iw = weights.id();
  return tape.record(OpKind::ScaleRows, std::move(y), {a, weights}, [ia, iw](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    const Tensor& wv = t.value(iw);
    if (t.requires_grad(ia)) {
      Tensor dx(xv.shape());
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        auto dr = dx.row(i);
        auto gr = g.row(i);
        for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = gr[j] * wv[i];
      }
      t.accumulate(ia, dx);
    }
    if (t.requires_grad(iw)) {
      Tensor dw(wv.shape());
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        auto xr = xv.row(i);
        auto gr = g.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < xr.size(); ++j) s += xr[j] * gr[j];
        dw[i] = s;
      }
      t.accumulate(iw, dw);
    }
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const NodeId ia = a.id();
  return tape.record(OpKind::Sum, Tensor::scalar(s), {a}, [ia](Tape& t, const Tensor& g) {
    t.accumulate(ia, Tensor(t.value(ia).shape(), g[0]));
  });
}

Var cosine(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  if (x.size() != z.size()) mismatch("cosine", x.shape(), z.shape());
  double dot = 0.0, nx = 0.0, nz = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * z[i];
    nx += x[i] * x[i];
    nz += z[i] * z[i];
  }
  if (!(nx > 0.0) || !(nz > 0.0)) throw NumericDomainError("cosine: zero vector");
  const double c = dot / std::sqrt(nx * nz);
  const NodeId ia = a.id(), ib = b.id();
  return tape.record(OpKind::Cosine, Tensor::scalar(c), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    const Tensor& zv = t.value(ib);
    double dot = 0.0, nx = 0.0, nz = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      dot += xv[i] * zv[i];
      nx += xv[i] * xv[i];
      nz += zv[i] * zv[i];
    }
    const double inv = 1.0 / std::sqrt(nx * nz);
    const double c = dot * inv;
    if (t.requires_grad(ia)) {
      Tensor dx(xv.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[0] * (zv[i] * inv - c * xv[i] / nx);
      t.accumulate(ia, dx);
    }
    if (t.requires_grad(ib)) {
      Tensor dz(zv.shape());
      for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = g[0] * (xv[i] * inv - c * zv[i] / nz);
      t.accumulate(ib, dz);
    }
  });
}

}  // namespace ci4gi
