#include "gat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>

#include "gat/error.hpp"

namespace gat {

namespace {

using detail::Node;
using Op = Tape::Op;

bool any_requires_grad(std::span<const Tensor* const> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Wraps computed values in a tensor and records the backward rule when a tape
// is active and some input requires gradients.
template <class Backward>
Tensor finish(std::string_view name, Shape shape, std::vector<double> values,
              std::span<const Tensor* const> inputs, Backward&& backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::current();
  if (tape != nullptr && any_requires_grad(inputs)) {
    std::vector<detail::NodePtr> nodes;
    nodes.reserve(inputs.size());
    for (const Tensor* t : inputs) nodes.push_back(t->node());
    tape->record(name, std::move(nodes), out.node(), std::forward<Backward>(backward));
  }
  return out;
}

template <class Backward>
Tensor finish(std::string_view name, Shape shape, std::vector<double> values,
              std::initializer_list<const Tensor*> inputs, Backward&& backward) {
  return finish(name, std::move(shape), std::move(values),
                std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                std::forward<Backward>(backward));
}

std::vector<const Tensor*> pointers(std::span<const Tensor> parts) {
  std::vector<const Tensor*> out;
  out.reserve(parts.size());
  for (const auto& p : parts) out.push_back(&p);
  return out;
}

// Input gradient buffer, or nullptr when the input does not need one.
double* grad_of(const detail::NodePtr& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

// The exponent argument is always <= 0, so exp never overflows.
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  std::size_t batch = 1, r, s, c;
  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0)) {
    r = a.dim(0), s = a.dim(1), c = b.dim(1);
    out_shape = {r, c};
  } else if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1)) {
    batch = a.dim(0), r = a.dim(1), s = a.dim(2), c = b.dim(2);
    out_shape = {batch, r, c};
  } else {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  std::vector<double> out(batch * r * c, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* ab = av + n * r * s;
    const double* bb = bv + n * s * c;
    double* ob = out.data() + n * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t k = 0; k < s; ++k) {
        double aik = ab[i * s + k];
        const double* brow = bb + k * c;
        double* orow = ob + i * c;
        for (std::size_t j = 0; j < c; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  return finish("matmul", std::move(out_shape), std::move(out), {&a, &b},
                [batch, r, s, c](const Op& op) {
                  const double* dc = op.output->grad.data();
                  const double* av = op.inputs[0]->value.data();
                  const double* bv = op.inputs[1]->value.data();
                  double* da = grad_of(op.inputs[0]);
                  double* db = grad_of(op.inputs[1]);
                  for (std::size_t n = 0; n < batch; ++n) {
                    const double* dcb = dc + n * r * c;
                    if (da) {
                      // dA = dC . B^T
                      const double* bb = bv + n * s * c;
                      double* dab = da + n * r * s;
                      for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t k = 0; k < s; ++k) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < c; ++j) acc += dcb[i * c + j] * bb[k * c + j];
                          dab[i * s + k] += acc;
                        }
                      }
                    }
                    if (db) {
                      // dB = A^T . dC
                      const double* ab = av + n * r * s;
                      double* dbb = db + n * s * c;
                      for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t k = 0; k < s; ++k) {
                          double aik = ab[i * s + k];
                          for (std::size_t j = 0; j < c; ++j) dbb[k * c + j] += aik * dcb[i * c + j];
                        }
                      }
                    }
                  }
                });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + to_string(x.shape()));
  }
  std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  std::vector<double> out(x.size());
  const double* xv = x.values().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[n * r * c + j * r + i] = xv[n * r * c + i * c + j];
    }
  }
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return finish("transpose", std::move(shape), std::move(out), {&x},
                [batch, r, c](const Op& op) {
                  double* dx = grad_of(op.inputs[0]);
                  if (!dx) return;
                  const double* dy = op.output->grad.data();
                  for (std::size_t n = 0; n < batch; ++n) {
                    for (std::size_t i = 0; i < r; ++i) {
                      for (std::size_t j = 0; j < c; ++j) {
                        dx[n * r * c + i * c + j] += dy[n * r * c + j * r + i];
                      }
                    }
                  }
                });
}

Tensor softmax_rows(const Tensor& x) {
  std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> out(x.size());
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = xv + i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN in input row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    double total = 0.0;
    double* orow = out.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < cols; ++j) orow[j] /= total;
  }
  return finish("softmax_rows", x.shape(), std::move(out), {&x}, [rows, cols](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx) return;
    const double* y = op.output->value.data();
    const double* dy = op.output->grad.data();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* yr = y + i * cols;
      const double* dyr = dy + i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * dyr[j];
      for (std::size_t j = 0; j < cols; ++j) dx[i * cols + j] += yr[j] * (dyr[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  std::size_t rows = x.rows(), cols = x.cols();
  if (x.rank() == 0 || gamma.shape() != Shape{cols} || beta.shape() != Shape{cols}) {
    throw DimensionError("layer_norm: input " + to_string(x.shape()) + " with gamma " +
                         to_string(gamma.shape()) + " and beta " + to_string(beta.shape()));
  }
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.size());
  const double* xv = x.values().data();
  const double* g = gamma.values().data();
  const double* bt = beta.values().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = xv + i * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      double h = (row[j] - mean) * is;
      xhat[i * cols + j] = h;
      out[i * cols + j] = g[j] * h + bt[j];
    }
  }
  return finish("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Op& op) {
                  const double* dy = op.output->grad.data();
                  const double* g = op.inputs[1]->value.data();
                  double* dx = grad_of(op.inputs[0]);
                  double* dg = grad_of(op.inputs[1]);
                  double* db = grad_of(op.inputs[2]);
                  const double n = static_cast<double>(cols);
                  for (std::size_t i = 0; i < rows; ++i) {
                    const double* dyr = dy + i * cols;
                    const double* hr = xhat.data() + i * cols;
                    if (dg || db) {
                      for (std::size_t j = 0; j < cols; ++j) {
                        if (dg) dg[j] += dyr[j] * hr[j];
                        if (db) db[j] += dyr[j];
                      }
                    }
                    if (dx) {
                      double mean_dh = 0.0, mean_dh_h = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) {
                        double dh = dyr[j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                      }
                      mean_dh /= n;
                      mean_dh_h /= n;
                      for (std::size_t j = 0; j < cols; ++j) {
                        double dh = dyr[j] * g[j];
                        dx[i * cols + j] += inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                      }
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return finish("add", a.shape(), std::move(out), {&a, &b}, [](const Op& op) {
    const auto& dy = op.output->grad;
    for (int k = 0; k < 2; ++k) {
      if (double* d = grad_of(op.inputs[k])) {
        for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return finish("sub", a.shape(), std::move(out), {&a, &b}, [](const Op& op) {
    const auto& dy = op.output->grad;
    if (double* d = grad_of(op.inputs[0])) {
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
    if (double* d = grad_of(op.inputs[1])) {
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] -= dy[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return finish("mul", a.shape(), std::move(out), {&a, &b}, [](const Op& op) {
    const auto& dy = op.output->grad;
    const auto& av = op.inputs[0]->value;
    const auto& bv = op.inputs[1]->value;
    if (double* d = grad_of(op.inputs[0])) {
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * bv[i];
    }
    if (double* d = grad_of(op.inputs[1])) {
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return finish("scale", x.shape(), std::move(out), {&x}, [factor](const Op& op) {
    if (double* d = grad_of(op.inputs[0])) {
      const auto& dy = op.output->grad;
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * factor;
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return finish("relu", x.shape(), std::move(out), {&x}, [](const Op& op) {
    if (double* d = grad_of(op.inputs[0])) {
      const auto& dy = op.output->grad;
      const auto& xv = op.inputs[0]->value;
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (xv[i] > 0.0) d[i] += dy[i];
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x[i]);
  return finish("sigmoid", x.shape(), std::move(out), {&x}, [](const Op& op) {
    if (double* d = grad_of(op.inputs[0])) {
      const auto& dy = op.output->grad;
      const auto& y = op.output->value;
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  std::size_t rows = x.rows(), cols = x.cols();
  if (x.rank() == 0 || bias.shape() != Shape{cols}) {
    throw DimensionError("add_bias: input " + to_string(x.shape()) + " with bias " +
                         to_string(bias.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = x[i * cols + j] + bias[j];
  }
  return finish("add_bias", x.shape(), std::move(out), {&x, &bias}, [rows, cols](const Op& op) {
    const auto& dy = op.output->grad;
    if (double* d = grad_of(op.inputs[0])) {
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
    if (double* d = grad_of(op.inputs[1])) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) d[j] += dy[i * cols + j];
      }
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty list");
  const std::size_t rank = parts[0].rank();
  if (rank != 1 && rank != 2) {
    throw DimensionError("concat_cols: expected rank 1 or 2, got " + to_string(parts[0].shape()));
  }
  const std::size_t rows = rank == 2 ? parts[0].dim(0) : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.dim(0) != rows)) {
      throw DimensionError("concat_cols: mismatched shared extent " + to_string(parts[0].shape()) +
                           " vs " + to_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* pv = parts[k].values().data();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy_n(pv + i * widths[k], widths[k], out.data() + i * total + offset);
    }
    offset += widths[k];
  }
  Shape shape = rank == 2 ? Shape{rows, total} : Shape{total};
  auto ins = pointers(parts);
  return finish("concat_cols", std::move(shape), std::move(out), ins,
                [rows, total, widths = std::move(widths)](const Op& op) {
                  const double* dy = op.output->grad.data();
                  std::size_t offset = 0;
                  for (std::size_t k = 0; k < op.inputs.size(); ++k) {
                    if (double* d = grad_of(op.inputs[k])) {
                      for (std::size_t i = 0; i < rows; ++i) {
                        for (std::size_t j = 0; j < widths[k]; ++j) {
                          d[i * widths[k] + j] += dy[i * total + offset + j];
                        }
                      }
                    }
                    offset += widths[k];
                  }
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty list");
  const std::size_t rank = parts[0].rank();
  if (rank < 1) throw DimensionError("concat_rows: scalar parts");
  const std::size_t batch = rank == 3 ? parts[0].dim(0) : 1;
  const std::size_t cols = parts[0].cols();
  std::vector<std::size_t> heights;
  std::size_t total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank && p.cols() == cols && (rank != 3 || p.dim(0) == batch);
    if (!ok) {
      throw DimensionError("concat_rows: mismatched shared extent " + to_string(parts[0].shape()) +
                           " vs " + to_string(p.shape()));
    }
    std::size_t h = rank == 1 ? 1 : p.dim(rank - 2);
    heights.push_back(h);
    total += h;
  }
  std::vector<double> out(batch * total * cols);
  for (std::size_t n = 0; n < batch; ++n) {
    std::size_t row = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* pv = parts[k].values().data() + n * heights[k] * cols;
      std::copy_n(pv, heights[k] * cols, out.data() + (n * total + row) * cols);
      row += heights[k];
    }
  }
  Shape shape = rank == 3 ? Shape{batch, total, cols} : Shape{total, cols};
  auto ins = pointers(parts);
  return finish("concat_rows", std::move(shape), std::move(out), ins,
                [batch, total, cols, heights = std::move(heights)](const Op& op) {
                  const double* dy = op.output->grad.data();
                  for (std::size_t n = 0; n < batch; ++n) {
                    std::size_t row = 0;
                    for (std::size_t k = 0; k < op.inputs.size(); ++k) {
                      if (double* d = grad_of(op.inputs[k])) {
                        const double* src = dy + (n * total + row) * cols;
                        double* dst = d + n * heights[k] * cols;
                        for (std::size_t i = 0; i < heights[k] * cols; ++i) dst[i] += src[i];
                      }
                      row += heights[k];
                    }
                  }
                });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("slice_rows: expected rank 2 or 3, got " + to_string(x.shape()));
  }
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t height = x.dim(x.rank() - 2);
  const std::size_t cols = x.cols();
  if (start > height || len > height - start) {
    throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " +
                         to_string(x.shape()));
  }
  std::vector<double> out(batch * len * cols);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(x.values().data() + (n * height + start) * cols, len * cols,
                out.data() + n * len * cols);
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = len;
  return finish("slice_rows", std::move(shape), std::move(out), {&x},
                [batch, height, cols, start, len](const Op& op) {
                  double* d = grad_of(op.inputs[0]);
                  if (!d) return;
                  const double* dy = op.output->grad.data();
                  for (std::size_t n = 0; n < batch; ++n) {
                    double* dst = d + (n * height + start) * cols;
                    const double* src = dy + n * len * cols;
                    for (std::size_t i = 0; i < len * cols; ++i) dst[i] += src[i];
                  }
                });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + to_string(x.shape()) + " into " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t t = x.dim(0), d = x.dim(1), w = d / heads;
  std::vector<double> out(x.size());
  for (std::size_t m = 0; m < heads; ++m) {
    for (std::size_t i = 0; i < t; ++i) {
      std::copy_n(x.values().data() + i * d + m * w, w, out.data() + (m * t + i) * w);
    }
  }
  return finish("split_heads", Shape{heads, t, w}, std::move(out), {&x},
                [heads, t, d, w](const Op& op) {
                  double* dx = grad_of(op.inputs[0]);
                  if (!dx) return;
                  const double* dy = op.output->grad.data();
                  for (std::size_t m = 0; m < heads; ++m) {
                    for (std::size_t i = 0; i < t; ++i) {
                      for (std::size_t j = 0; j < w; ++j) dx[i * d + m * w + j] += dy[(m * t + i) * w + j];
                    }
                  }
                });
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("merge_heads: expected rank 3, got " + to_string(x.shape()));
  const std::size_t heads = x.dim(0), t = x.dim(1), w = x.dim(2), d = heads * w;
  std::vector<double> out(x.size());
  for (std::size_t m = 0; m < heads; ++m) {
    for (std::size_t i = 0; i < t; ++i) {
      std::copy_n(x.values().data() + (m * t + i) * w, w, out.data() + i * d + m * w);
    }
  }
  return finish("merge_heads", Shape{t, d}, std::move(out), {&x}, [heads, t, d, w](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx) return;
    const double* dy = op.output->grad.data();
    for (std::size_t m = 0; m < heads; ++m) {
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < w; ++j) dx[(m * t + i) * w + j] += dy[i * d + m * w + j];
      }
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) {
    throw DimensionError("mean_rows: expected non-empty [T x D], got " + to_string(x.shape()));
  }
  const std::size_t t = x.dim(0), d = x.dim(1);
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  }
  for (auto& v : out) v /= static_cast<double>(t);
  return finish("mean_rows", Shape{d}, std::move(out), {&x}, [t, d](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx) return;
    const double* dy = op.output->grad.data();
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += dy[j] * inv;
    }
  });
}

Tensor mean_leading(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) == 0) {
    throw DimensionError("mean_leading: expected non-empty leading axis, got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), inner = x.size() / n;
  std::vector<double> out(inner, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < inner; ++i) out[i] += x[k * inner + i];
  }
  for (auto& v : out) v /= static_cast<double>(n);
  Shape shape(x.shape().begin() + 1, x.shape().end());
  return finish("mean_leading", std::move(shape), std::move(out), {&x}, [n, inner](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx) return;
    const double* dy = op.output->grad.data();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner; ++i) dx[k * inner + i] += dy[i] * inv;
    }
  });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: empty list");
  if (parts[0].rank() > 2) throw DimensionError("stack: parts must have rank <= 2");
  const std::size_t inner = parts[0].size();
  std::vector<double> out;
  out.reserve(parts.size() * inner);
  for (const auto& p : parts) {
    require_same_shape(parts[0], p, "stack");
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts[0].shape().begin(), parts[0].shape().end());
  auto ins = pointers(parts);
  return finish("stack", std::move(shape), std::move(out), ins, [inner](const Op& op) {
    const double* dy = op.output->grad.data();
    for (std::size_t k = 0; k < op.inputs.size(); ++k) {
      if (double* d = grad_of(op.inputs[k])) {
        for (std::size_t i = 0; i < inner; ++i) d[i] += dy[k * inner + i];
      }
    }
  });
}

Tensor select(const Tensor& x, std::size_t index) {
  if (x.rank() < 1 || index >= x.dim(0)) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " +
                         to_string(x.shape()));
  }
  const std::size_t inner = x.size() / x.dim(0);
  std::vector<double> out(x.values().begin() + index * inner,
                          x.values().begin() + (index + 1) * inner);
  Shape shape(x.shape().begin() + 1, x.shape().end());
  return finish("select", std::move(shape), std::move(out), {&x}, [index, inner](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx) return;
    const double* dy = op.output->grad.data();
    for (std::size_t i = 0; i < inner; ++i) dx[index * inner + i] += dy[i];
  });
}

Tensor softmax_leading(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) == 0) {
    throw DimensionError("softmax_leading: expected non-empty leading axis, got " +
                         to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), inner = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < inner; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      double v = x[k * inner + i];
      if (std::isnan(v)) throw NumericError("softmax_leading: NaN in input");
      mx = std::max(mx, v);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      out[k * inner + i] = std::exp(x[k * inner + i] - mx);
      total += out[k * inner + i];
    }
    for (std::size_t k = 0; k < n; ++k) out[k * inner + i] /= total;
  }
  return finish("softmax_leading", x.shape(), std::move(out), {&x}, [n, inner](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx) return;
    const double* y = op.output->value.data();
    const double* dy = op.output->grad.data();
    for (std::size_t i = 0; i < inner; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += y[k * inner + i] * dy[k * inner + i];
      for (std::size_t k = 0; k < n; ++k) {
        dx[k * inner + i] += y[k * inner + i] * (dy[k * inner + i] - dot);
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return finish("sum", Shape{}, {total}, {&x}, [](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx) return;
    const double g = op.output->grad[0];
    for (std::size_t i = 0; i < op.inputs[0]->value.size(); ++i) dx[i] += g;
  });
}

Tensor frobenius_norm(const Tensor& x) {
  double sq = 0.0;
  for (double v : x.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  return finish("frobenius_norm", Shape{}, {norm}, {&x}, [norm](const Op& op) {
    double* dx = grad_of(op.inputs[0]);
    if (!dx || norm == 0.0) return;
    const double g = op.output->grad[0] / norm;
    const auto& xv = op.inputs[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g * xv[i];
  });
}

Tensor js_divergence_rows(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "js_divergence_rows");
  if (p.rank() == 0) throw DimensionError("js_divergence_rows: scalar input");
  const std::size_t rows = p.rows(), cols = p.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    double sp = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      sp += p[i * cols + j];
      sq += q[i * cols + j];
    }
    if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) {
      throw NumericError("js_divergence_rows: row " + std::to_string(i) +
                         " is not normalized (sums " + std::to_string(sp) + ", " +
                         std::to_string(sq) + ")");
    }
  }
  auto flog = [](double v) { return std::log(std::max(v, kJsLogFloor)); };
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double a = p[i], b = q[i], m = 0.5 * (a + b);
    double lm = flog(m);
    total += 0.5 * a * (flog(a) - lm) + 0.5 * b * (flog(b) - lm);
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return finish("js_divergence_rows", Shape{}, {total * inv_rows}, {&p, &q},
                [inv_rows](const Op& op) {
                  const double g = op.output->grad[0] * inv_rows;
                  const auto& pv = op.inputs[0]->value;
                  const auto& qv = op.inputs[1]->value;
                  double* dp = grad_of(op.inputs[0]);
                  double* dq = grad_of(op.inputs[1]);
                  // Exact derivative of the floored expression.
                  auto flog = [](double v) { return std::log(std::max(v, kJsLogFloor)); };
                  auto dlog = [](double v) { return v > kJsLogFloor ? 1.0 / v : 0.0; };
                  for (std::size_t i = 0; i < pv.size(); ++i) {
                    double a = pv[i], b = qv[i], m = 0.5 * (a + b);
                    double lm = flog(m), dm = dlog(m);
                    double common = -0.25 * (a + b) * dm;
                    if (dp) dp[i] += g * (0.5 * (flog(a) - lm) + 0.5 * a * dlog(a) + common);
                    if (dq) dq[i] += g * (0.5 * (flog(b) - lm) + 0.5 * b * dlog(b) + common);
                  }
                });
}

Tensor bce_loss(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_loss");
  if (logits.size() == 0) throw DimensionError("bce_loss: empty input");
  for (double y : targets.values()) {
    if (y != 0.0 && y != 1.0) throw ConfigError("bce_loss: non-binary target " + std::to_string(y));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = logits[i], y = targets[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  return finish("bce_loss", Shape{}, {total * inv_n}, {&logits, &targets}, [inv_n](const Op& op) {
    const double g = op.output->grad[0] * inv_n;
    const auto& z = op.inputs[0]->value;
    const auto& y = op.inputs[1]->value;
    if (double* dz = grad_of(op.inputs[0])) {
      for (std::size_t i = 0; i < z.size(); ++i) dz[i] += g * (stable_sigmoid(z[i]) - y[i]);
    }
    if (double* dy = grad_of(op.inputs[1])) {
      for (std::size_t i = 0; i < z.size(); ++i) dy[i] -= g * z[i];
    }
  });
}

}  // namespace gat
