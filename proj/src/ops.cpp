#include "d3desk/ops.hpp"

#include <algorithm>
#include <cmath>

namespace d3desk::ad {

namespace {

// Broadcast classification for binary elementwise ops.
enum class Bcast { None, RowVec };

Bcast check_elementwise(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::None;
  if (a.ndim() == b.ndim() + 1 &&
      std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin()))
    return Bcast::RowVec;
  shape_error(op, "incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
}

void check_2d(const char* op, const Tensor& a) {
  if (a.ndim() != 2) shape_error(op, "expected 2D tensor, got " + shape_str(a.shape()));
}

template <typename Fwd, typename Bwd>
Tensor unary_pointwise(const char* op, const Tensor& a, Fwd fwd, Bwd dval) {
  std::vector<Scalar> out(a.v().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.v()[i]);
  return make_op_output(op, a.shape(), std::move(out), {a},
                        [dval](Tensor::Node& n) {
                          Tensor& pa = n.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (size_t i = 0; i < n.values.size(); ++i)
                            ga[i] += n.grad[i] * dval(pa.v()[i], n.values[i]);
                        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Bcast bc = check_elementwise("add", a, b);
  std::vector<Scalar> out(a.v().size());
  const size_t bn = b.v().size();
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.v()[i] + b.v()[i % bn];
  return make_op_output("add", a.shape(), std::move(out), {a, b},
                        [bc](Tensor::Node& n) {
                          Tensor& pa = n.parents[0];
                          Tensor& pb = n.parents[1];
                          if (pa.requires_grad()) {
                            auto& ga = pa.g();
                            for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
                          }
                          if (pb.requires_grad()) {
                            auto& gb = pb.g();
                            const size_t bn2 = gb.size();
                            (void)bc;
                            for (size_t i = 0; i < n.grad.size(); ++i) gb[i % bn2] += n.grad[i];
                          }
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_elementwise("sub", a, b);
  std::vector<Scalar> out(a.v().size());
  const size_t bn = b.v().size();
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.v()[i] - b.v()[i % bn];
  return make_op_output("sub", a.shape(), std::move(out), {a, b},
                        [](Tensor::Node& n) {
                          Tensor& pa = n.parents[0];
                          Tensor& pb = n.parents[1];
                          if (pa.requires_grad()) {
                            auto& ga = pa.g();
                            for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
                          }
                          if (pb.requires_grad()) {
                            auto& gb = pb.g();
                            const size_t bn2 = gb.size();
                            for (size_t i = 0; i < n.grad.size(); ++i) gb[i % bn2] -= n.grad[i];
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_elementwise("mul", a, b);
  std::vector<Scalar> out(a.v().size());
  const size_t bn = b.v().size();
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.v()[i] * b.v()[i % bn];
  return make_op_output("mul", a.shape(), std::move(out), {a, b},
                        [](Tensor::Node& n) {
                          Tensor& pa = n.parents[0];
                          Tensor& pb = n.parents[1];
                          const size_t bn2 = pb.v().size();
                          if (pa.requires_grad()) {
                            auto& ga = pa.g();
                            for (size_t i = 0; i < n.grad.size(); ++i)
                              ga[i] += n.grad[i] * pb.v()[i % bn2];
                          }
                          if (pb.requires_grad()) {
                            auto& gb = pb.g();
                            for (size_t i = 0; i < n.grad.size(); ++i)
                              gb[i % bn2] += n.grad[i] * pa.v()[i];
                          }
                        });
}

Tensor neg(const Tensor& a) {
  return unary_pointwise("neg", a, [](Scalar x) { return -x; },
                         [](Scalar, Scalar) { return Scalar(-1); });
}

Tensor scale(const Tensor& a, Scalar s) {
  return unary_pointwise("scale", a, [s](Scalar x) { return s * x; },
                         [s](Scalar, Scalar) { return s; });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  return unary_pointwise("add_scalar", a, [s](Scalar x) { return x + s; },
                         [](Scalar, Scalar) { return Scalar(1); });
}

Tensor relu(const Tensor& a) {
  return unary_pointwise("relu", a, [](Scalar x) { return x > 0 ? x : Scalar(0); },
                         [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

Tensor tanh_op(const Tensor& a) {
  return unary_pointwise("tanh", a, [](Scalar x) { return std::tanh(x); },
                         [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_pointwise("sigmoid", a,
                         [](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); },
                         [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor exp_op(const Tensor& a) {
  return unary_pointwise("exp", a, [](Scalar x) { return std::exp(x); },
                         [](Scalar, Scalar y) { return y; });
}

Tensor log_op(const Tensor& a) {
  return unary_pointwise("log", a, [](Scalar x) { return std::log(x); },
                         [](Scalar x, Scalar) { return Scalar(1) / x; });
}

Tensor abs_op(const Tensor& a) {
  return unary_pointwise("abs", a, [](Scalar x) { return std::abs(x); },
                         [](Scalar x, Scalar) {
                           return x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0));
                         });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  // Promote 1D operands: a [k] -> [1,k], b [k] -> [k,1]; squeeze on output.
  const bool a_vec = a.ndim() == 1;
  const bool b_vec = b.ndim() == 1;
  const int m = a_vec ? 1 : a.dim(0);
  const int k = a_vec ? a.dim(0) : a.dim(1);
  const int k2 = b_vec ? b.dim(0) : b.dim(0);
  const int n = b_vec ? 1 : b.dim(1);
  if (a.ndim() > 2 || b.ndim() > 2 || k != k2)
    shape_error("matmul", "incompatible shapes " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
  std::vector<Scalar> out(static_cast<size_t>(m) * n, Scalar(0));
  const auto& av = a.v();
  const auto& bv = b.v();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const Scalar aip = av[static_cast<size_t>(i) * k + p];
      if (aip == Scalar(0)) continue;
      const size_t brow = static_cast<size_t>(p) * n;
      const size_t orow = static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) out[orow + j] += aip * bv[brow + j];
    }
  Shape oshape;
  if (a_vec && b_vec) oshape = {1};
  else if (a_vec) oshape = {n};
  else if (b_vec) oshape = {m};
  else oshape = {m, n};
  return make_op_output(
      "matmul", std::move(oshape), std::move(out), {a, b},
      [m, n, k](Tensor::Node& nd) {
        Tensor& pa = nd.parents[0];
        Tensor& pb = nd.parents[1];
        const auto& go = nd.grad;
        if (pa.requires_grad()) {  // dA = dC * B^T
          auto& ga = pa.g();
          const auto& bv = pb.v();
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              Scalar acc = 0;
              const size_t orow = static_cast<size_t>(i) * n;
              const size_t brow = static_cast<size_t>(p) * n;
              for (int j = 0; j < n; ++j) acc += go[orow + j] * bv[brow + j];
              ga[static_cast<size_t>(i) * k + p] += acc;
            }
        }
        if (pb.requires_grad()) {  // dB = A^T * dC
          auto& gb = pb.g();
          const auto& av = pa.v();
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              const Scalar aip = av[static_cast<size_t>(i) * k + p];
              if (aip == Scalar(0)) continue;
              const size_t orow = static_cast<size_t>(i) * n;
              const size_t brow = static_cast<size_t>(p) * n;
              for (int j = 0; j < n; ++j) gb[brow + j] += aip * go[orow + j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  check_2d("transpose", a);
  const int m = a.dim(0), n = a.dim(1);
  std::vector<Scalar> out(a.v().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.v()[static_cast<size_t>(i) * n + j];
  return make_op_output("transpose", {n, m}, std::move(out), {a},
                        [m, n](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j)
                              ga[static_cast<size_t>(i) * n + j] +=
                                  nd.grad[static_cast<size_t>(j) * m + i];
                        });
}

namespace {

constexpr Scalar kCosEps = 1e-12;

// Shared last-dim layout: rows × cols with cols = last dimension.
void rows_cols(const char* op, const Tensor& a, int* rows, int* cols) {
  if (a.ndim() == 1) {
    *rows = 1;
    *cols = a.dim(0);
  } else if (a.ndim() == 2) {
    *rows = a.dim(0);
    *cols = a.dim(1);
  } else {
    shape_error(op, "expected 1D or 2D tensor, got " + shape_str(a.shape()));
  }
}

}  // namespace

Tensor softmax(const Tensor& a) {
  int rows, cols;
  rows_cols("softmax", a, &rows, &cols);
  std::vector<Scalar> out(a.v().size());
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    Scalar mx = a.v()[off];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, a.v()[off + c]);
    Scalar z = 0;
    for (int c = 0; c < cols; ++c) {
      out[off + c] = std::exp(a.v()[off + c] - mx);
      z += out[off + c];
    }
    for (int c = 0; c < cols; ++c) out[off + c] /= z;
  }
  return make_op_output("softmax", a.shape(), std::move(out), {a},
                        [rows, cols](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (int r = 0; r < rows; ++r) {
                            const size_t off = static_cast<size_t>(r) * cols;
                            Scalar dot = 0;
                            for (int c = 0; c < cols; ++c)
                              dot += nd.grad[off + c] * nd.values[off + c];
                            for (int c = 0; c < cols; ++c)
                              ga[off + c] += nd.values[off + c] * (nd.grad[off + c] - dot);
                          }
                        });
}

Tensor log_softmax(const Tensor& a) {
  int rows, cols;
  rows_cols("log_softmax", a, &rows, &cols);
  std::vector<Scalar> out(a.v().size());
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    Scalar mx = a.v()[off];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, a.v()[off + c]);
    Scalar z = 0;
    for (int c = 0; c < cols; ++c) z += std::exp(a.v()[off + c] - mx);
    const Scalar lse = mx + std::log(z);
    for (int c = 0; c < cols; ++c) out[off + c] = a.v()[off + c] - lse;
  }
  return make_op_output("log_softmax", a.shape(), std::move(out), {a},
                        [rows, cols](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (int r = 0; r < rows; ++r) {
                            const size_t off = static_cast<size_t>(r) * cols;
                            Scalar gsum = 0;
                            for (int c = 0; c < cols; ++c) gsum += nd.grad[off + c];
                            for (int c = 0; c < cols; ++c)
                              ga[off + c] += nd.grad[off + c] -
                                             std::exp(nd.values[off + c]) * gsum;
                          }
                        });
}

Tensor sum(const Tensor& a) {
  Scalar acc = 0;
  for (Scalar x : a.v()) acc += x;
  return make_op_output("sum", {1}, {acc}, {a}, [](Tensor::Node& nd) {
    Tensor& pa = nd.parents[0];
    if (!pa.requires_grad()) return;
    auto& ga = pa.g();
    for (auto& g : ga) g += nd.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.numel());
  Scalar acc = 0;
  for (Scalar x : a.v()) acc += x;
  return make_op_output("mean", {1}, {acc * inv}, {a}, [inv](Tensor::Node& nd) {
    Tensor& pa = nd.parents[0];
    if (!pa.requires_grad()) return;
    auto& ga = pa.g();
    for (auto& g : ga) g += nd.grad[0] * inv;
  });
}

Tensor max_all(const Tensor& a) {
  size_t best = 0;
  for (size_t i = 1; i < a.v().size(); ++i)
    if (a.v()[i] > a.v()[best]) best = i;
  return make_op_output("max", {1}, {a.v()[best]}, {a}, [best](Tensor::Node& nd) {
    Tensor& pa = nd.parents[0];
    if (!pa.requires_grad()) return;
    pa.g()[best] += nd.grad[0];
  });
}

Tensor mean_dim0(const Tensor& a) {
  check_2d("mean_dim0", a);
  const int n = a.dim(0), f = a.dim(1);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
  std::vector<Scalar> out(static_cast<size_t>(f), Scalar(0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j) out[j] += a.v()[static_cast<size_t>(i) * f + j];
  for (auto& x : out) x *= inv;
  return make_op_output("mean_dim0", {f}, std::move(out), {a},
                        [n, f, inv](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (int i = 0; i < n; ++i)
                            for (int j = 0; j < f; ++j)
                              ga[static_cast<size_t>(i) * f + j] += nd.grad[j] * inv;
                        });
}

Tensor max_dim0(const Tensor& a) {
  check_2d("max_dim0", a);
  const int n = a.dim(0), f = a.dim(1);
  std::vector<Scalar> out(static_cast<size_t>(f));
  auto argrows = std::make_shared<std::vector<int>>(static_cast<size_t>(f), 0);
  for (int j = 0; j < f; ++j) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (a.v()[static_cast<size_t>(i) * f + j] > a.v()[static_cast<size_t>(best) * f + j])
        best = i;
    (*argrows)[j] = best;
    out[j] = a.v()[static_cast<size_t>(best) * f + j];
  }
  return make_op_output("max_dim0", {f}, std::move(out), {a},
                        [f, argrows](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (int j = 0; j < f; ++j)
                            ga[static_cast<size_t>((*argrows)[j]) * f + j] += nd.grad[j];
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    shape_error("reshape", "cannot reshape " + shape_str(a.shape()) + " to " +
                               shape_str(shape));
  return make_op_output("reshape", std::move(shape), a.v(), {a},
                        [](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (size_t i = 0; i < nd.grad.size(); ++i) ga[i] += nd.grad[i];
                        });
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const int nd = parts[0].ndim();
  if (dim < 0 || dim >= nd) shape_error("concat", "bad dim");
  Shape oshape = parts[0].shape();
  oshape[static_cast<size_t>(dim)] = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) shape_error("concat", "rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != dim && p.dim(i) != parts[0].dim(i))
        shape_error("concat", "shape mismatch " + shape_str(p.shape()) + " vs " +
                                  shape_str(parts[0].shape()));
    oshape[static_cast<size_t>(dim)] += p.dim(dim);
  }
  // Treat as [outer, inner] blocks around the concat dim.
  int64_t outer = 1;
  for (int i = 0; i < dim; ++i) outer *= parts[0].dim(i);
  std::vector<int64_t> inner(parts.size());
  int64_t inner_total = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    int64_t in = 1;
    for (int i = dim; i < nd; ++i) in *= parts[p].dim(i);
    inner[p] = in;
    inner_total += in;
  }
  std::vector<Scalar> out(static_cast<size_t>(outer * inner_total));
  int64_t dst_off = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].v();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(v.begin() + o * inner[p], v.begin() + (o + 1) * inner[p],
                out.begin() + o * inner_total + dst_off);
    dst_off += inner[p];
  }
  return make_op_output(
      "concat", std::move(oshape), std::move(out), parts,
      [outer, inner, inner_total](Tensor::Node& ndn) {
        int64_t src_off = 0;
        for (size_t p = 0; p < ndn.parents.size(); ++p) {
          Tensor& pp = ndn.parents[p];
          if (pp.requires_grad()) {
            auto& gp = pp.g();
            for (int64_t o = 0; o < outer; ++o)
              for (int64_t i = 0; i < inner[p]; ++i)
                gp[static_cast<size_t>(o * inner[p] + i)] +=
                    ndn.grad[static_cast<size_t>(o * inner_total + src_off + i)];
          }
          src_off += inner[p];
        }
      });
}

Tensor slice(const Tensor& a, int dim, int start, int len) {
  if (dim < 0 || dim >= a.ndim()) shape_error("slice", "bad dim");
  if (start < 0 || len <= 0 || start + len > a.dim(dim))
    shape_error("slice", "range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for " +
                             shape_str(a.shape()));
  Shape oshape = a.shape();
  oshape[static_cast<size_t>(dim)] = len;
  int64_t outer = 1;
  for (int i = 0; i < dim; ++i) outer *= a.dim(i);
  int64_t stride = 1;
  for (int i = dim + 1; i < a.ndim(); ++i) stride *= a.dim(i);
  const int64_t src_inner = static_cast<int64_t>(a.dim(dim)) * stride;
  const int64_t dst_inner = static_cast<int64_t>(len) * stride;
  std::vector<Scalar> out(static_cast<size_t>(outer * dst_inner));
  for (int64_t o = 0; o < outer; ++o)
    std::copy(a.v().begin() + o * src_inner + start * stride,
              a.v().begin() + o * src_inner + (start + len) * stride,
              out.begin() + o * dst_inner);
  return make_op_output("slice", std::move(oshape), std::move(out), {a},
                        [outer, stride, src_inner, dst_inner, start](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (int64_t o = 0; o < outer; ++o)
                            for (int64_t i = 0; i < dst_inner; ++i)
                              ga[static_cast<size_t>(o * src_inner + start * stride + i)] +=
                                  nd.grad[static_cast<size_t>(o * dst_inner + i)];
                        });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) shape_error("stack_rows", "no inputs");
  const int f = rows[0].dim(0);
  for (const auto& r : rows)
    if (r.ndim() != 1 || r.dim(0) != f)
      shape_error("stack_rows", "expected 1D rows of equal length, got " +
                                    shape_str(r.shape()));
  const int n = static_cast<int>(rows.size());
  std::vector<Scalar> out;
  out.reserve(static_cast<size_t>(n) * f);
  for (const auto& r : rows) out.insert(out.end(), r.v().begin(), r.v().end());
  return make_op_output("stack_rows", {n, f}, std::move(out), rows,
                        [f](Tensor::Node& nd) {
                          for (size_t i = 0; i < nd.parents.size(); ++i) {
                            Tensor& p = nd.parents[i];
                            if (!p.requires_grad()) continue;
                            auto& gp = p.g();
                            for (int j = 0; j < f; ++j)
                              gp[static_cast<size_t>(j)] += nd.grad[i * f + j];
                          }
                        });
}

Tensor gather_rows(const Tensor& a, std::vector<int> ix) {
  check_2d("gather_rows", a);
  const int n = a.dim(0), f = a.dim(1);
  for (int i : ix)
    if (i < 0 || i >= n)
      shape_error("gather_rows", "row " + std::to_string(i) + " out of range for " +
                                     shape_str(a.shape()));
  std::vector<Scalar> out(ix.size() * static_cast<size_t>(f));
  for (size_t r = 0; r < ix.size(); ++r)
    std::copy(a.v().begin() + static_cast<size_t>(ix[r]) * f,
              a.v().begin() + static_cast<size_t>(ix[r] + 1) * f, out.begin() + r * f);
  auto ixp = std::make_shared<std::vector<int>>(std::move(ix));
  return make_op_output("gather_rows", {static_cast<int>(ixp->size()), f}, std::move(out),
                        {a}, [f, ixp](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          for (size_t r = 0; r < ixp->size(); ++r)
                            for (int j = 0; j < f; ++j)
                              ga[static_cast<size_t>((*ixp)[r]) * f + j] +=
                                  nd.grad[r * f + j];
                        });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  int rows, cols;
  rows_cols("cross_entropy", logits, &rows, &cols);
  if (static_cast<int>(targets.size()) != rows)
    shape_error("cross_entropy", "got " + std::to_string(targets.size()) +
                                     " targets for " + std::to_string(rows) + " rows");
  for (int t : targets)
    if (t < 0 || t >= cols) shape_error("cross_entropy", "target id out of range");
  Scalar loss = 0;
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    Scalar mx = logits.v()[off];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, logits.v()[off + c]);
    Scalar z = 0;
    for (int c = 0; c < cols; ++c) z += std::exp(logits.v()[off + c] - mx);
    loss += mx + std::log(z) - logits.v()[off + static_cast<size_t>(targets[r])];
  }
  loss /= static_cast<Scalar>(rows);
  auto tg = std::make_shared<std::vector<int>>(targets);
  return make_op_output(
      "cross_entropy", {1}, {loss}, {logits}, [rows, cols, tg](Tensor::Node& nd) {
        Tensor& pa = nd.parents[0];
        if (!pa.requires_grad()) return;
        auto& ga = pa.g();
        const Scalar go = nd.grad[0] / static_cast<Scalar>(rows);
        for (int r = 0; r < rows; ++r) {
          const size_t off = static_cast<size_t>(r) * cols;
          Scalar mx = pa.v()[off];
          for (int c = 1; c < cols; ++c) mx = std::max(mx, pa.v()[off + c]);
          Scalar z = 0;
          for (int c = 0; c < cols; ++c) z += std::exp(pa.v()[off + c] - mx);
          for (int c = 0; c < cols; ++c) {
            Scalar p = std::exp(pa.v()[off + c] - mx) / z;
            ga[off + c] += go * (p - (c == (*tg)[r] ? Scalar(1) : Scalar(0)));
          }
        }
      });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<Scalar>& targets) {
  if (logits.v().size() != targets.size())
    shape_error("bce_with_logits", "got " + std::to_string(targets.size()) +
                                       " targets for " + shape_str(logits.shape()));
  const size_t n = targets.size();
  Scalar loss = 0;
  for (size_t i = 0; i < n; ++i) {
    const Scalar x = logits.v()[i];
    loss += std::max(x, Scalar(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<Scalar>(n);
  auto tg = std::make_shared<std::vector<Scalar>>(targets);
  return make_op_output("bce_with_logits", {1}, {loss}, {logits},
                        [n, tg](Tensor::Node& nd) {
                          Tensor& pa = nd.parents[0];
                          if (!pa.requires_grad()) return;
                          auto& ga = pa.g();
                          const Scalar go = nd.grad[0] / static_cast<Scalar>(n);
                          for (size_t i = 0; i < n; ++i) {
                            const Scalar s =
                                Scalar(1) / (Scalar(1) + std::exp(-pa.v()[i]));
                            ga[i] += go * (s - (*tg)[i]);
                          }
                        });
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error("cosine_rows", "shape mismatch " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  int rows, cols;
  rows_cols("cosine_rows", a, &rows, &cols);
  
  std::vector<Scalar> out(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * cols;
    Scalar dot = 0, na = 0, nb = 0;
    for (int c = 0; c < cols; ++c) {
      dot += a.v()[off + c] * b.v()[off + c];
      na += a.v()[off + c] * a.v()[off + c];
      nb += b.v()[off + c] * b.v()[off + c];
    }
    out[r] = dot / std::max(std::sqrt(na) * std::sqrt(nb), kCosEps);
  }
  return make_op_output(
      "cosine_rows", {rows}, std::move(out), {a, b}, [rows, cols](Tensor::Node& nd) {
        Tensor& pa = nd.parents[0];
        Tensor& pb = nd.parents[1];
        for (int r = 0; r < rows; ++r) {
          const size_t off = static_cast<size_t>(r) * cols;
          Scalar na2 = 0, nb2 = 0;
          for (int c = 0; c < cols; ++c) {
            na2 += pa.v()[off + c] * pa.v()[off + c];
            nb2 += pb.v()[off + c] * pb.v()[off + c];
          }
          const Scalar na = std::sqrt(na2), nb = std::sqrt(nb2);
          const Scalar denom = std::max(na * nb, kCosEps);
          const Scalar cosv = nd.values[static_cast<size_t>(r)];
          const Scalar go = nd.grad[static_cast<size_t>(r)];
          if (pa.requires_grad()) {
            auto& ga = pa.g();
            for (int c = 0; c < cols; ++c)
              ga[off + c] += go * (pb.v()[off + c] / denom -
                                   cosv * pa.v()[off + c] / std::max(na2, kCosEps));
          }
          if (pb.requires_grad()) {
            auto& gb = pb.g();
            for (int c = 0; c < cols; ++c)
              gb[off + c] += go * (pa.v()[off + c] / denom -
                                   cosv * pb.v()[off + c] / std::max(nb2, kCosEps));
          }
        }
      });
}

Tensor l1_norm(const Tensor& a) {
  Scalar acc = 0;
  for (Scalar x : a.v()) acc += std::abs(x);
  return make_op_output("l1_norm", {1}, {acc}, {a}, [](Tensor::Node& nd) {
    Tensor& pa = nd.parents[0];
    if (!pa.requires_grad()) return;
    auto& ga = pa.g();
    for (size_t i = 0; i < ga.size(); ++i) {
      const Scalar x = pa.v()[i];
      ga[i] += nd.grad[0] * (x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0)));
    }
  });
}

Tensor l2_norm(const Tensor& a) {
  Scalar acc = 0;
  for (Scalar x : a.v()) acc += x * x;
  const Scalar nrm = std::sqrt(acc);
  return make_op_output("l2_norm", {1}, {nrm}, {a}, [](Tensor::Node& nd) {
    Tensor& pa = nd.parents[0];
    if (!pa.requires_grad()) return;
    auto& ga = pa.g();
    const Scalar denom = std::max(nd.values[0], Scalar(1e-12));
    for (size_t i = 0; i < ga.size(); ++i)
      ga[i] += nd.grad[0] * pa.v()[i] / denom;
  });
}

}  // namespace d3desk::ad
