#include "wm/core/ops.hpp"

#include <cmath>
#include <stdexcept>

#include "wm/core/kernels.hpp"

namespace wm::core::ops {

namespace {

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands recorded on different tapes");
}

void check_broadcast(const char* op, const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (!is_suffix(a.shape(), b.shape())) throw_shape_mismatch(op, a.shape(), b.shape());
}

template <class F, class DF>
Var unary(const Var& x, F f, DF df) {
  const Array& xv = x.value();
  Array out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape()->record(std::move(out), {x}, [df](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    const Array& xv = t.node_value(xi);
    const Array& yv = t.node_value(self);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xv[i], yv[i]);
  });
}

std::size_t last_dim(const Var& x, const char* op) {
  if (x.shape().empty()) throw ShapeError(std::string(op) + ": operand must have at least one axis");
  return x.shape().back();
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Array out = kernels::matmul(a.value(), b.value());
  return a.tape()->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t ai = t.parent(self, 0), bi = t.parent(self, 1);
    const Array& g = t.node_grad(self);
    const Array& av = t.node_value(ai);
    const Array& bv = t.node_value(bi);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (t.requires_grad(ai)) kernels::gemm(g.data(), bv.data(), t.grad_buffer(ai).data(), m, n, k, false, true, true);
    if (t.requires_grad(bi)) kernels::gemm(av.data(), g.data(), t.grad_buffer(bi).data(), k, m, n, true, false, true);
  });
}

Var add(const Var& a, const Var& b) {
  check_broadcast("add", a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  Array out = av;
  const std::size_t bs = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % bs];
  return a.tape()->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t ai = t.parent(self, 0), bi = t.parent(self, 1);
    const Array& g = t.node_grad(self);
    if (t.requires_grad(ai)) {
      Array& da = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Array& db = t.grad_buffer(bi);
      const std::size_t bs = db.size();
      for (std::size_t i = 0; i < g.size(); ++i) db[i % bs] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_broadcast("sub", a, b);
  const Array& bv = b.value();
  Array out = a.value();
  const std::size_t bs = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % bs];
  return a.tape()->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t ai = t.parent(self, 0), bi = t.parent(self, 1);
    const Array& g = t.node_grad(self);
    if (t.requires_grad(ai)) {
      Array& da = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Array& db = t.grad_buffer(bi);
      const std::size_t bs = db.size();
      for (std::size_t i = 0; i < g.size(); ++i) db[i % bs] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_broadcast("mul", a, b);
  const Array& bv = b.value();
  Array out = a.value();
  const std::size_t bs = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % bs];
  return a.tape()->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t ai = t.parent(self, 0), bi = t.parent(self, 1);
    const Array& g = t.node_grad(self);
    const Array& av = t.node_value(ai);
    const Array& bv = t.node_value(bi);
    const std::size_t bs = bv.size();
    if (t.requires_grad(ai)) {
      Array& da = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i % bs];
    }
    if (t.requires_grad(bi)) {
      Array& db = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[i % bs] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(x, [](double v) { return kernels::sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var softplus(const Var& x) {
  return unary(x, [](double v) { return kernels::softplus(v); },
               [](double v, double) { return kernels::sigmoid(v); });
}

Var softmax(const Var& x) {
  const std::size_t d = last_dim(x, "softmax");
  return x.tape()->record(kernels::softmax_last(x.value()), {x}, [d](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    const Array& y = t.node_value(self);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < y.size() / d; ++r) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
    }
  });
}

Var log_softmax(const Var& x) {
  const std::size_t d = last_dim(x, "log_softmax");
  return x.tape()->record(kernels::log_softmax_last(x.value()), {x}, [d](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    const Array& y = t.node_value(self);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < y.size() / d; ++r) {
      double gs = 0;
      for (std::size_t j = 0; j < d; ++j) gs += g[r * d + j];
      for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += g[r * d + j] - std::exp(y[r * d + j]) * gs;
    }
  });
}

Var logsumexp(const Var& x) {
  const std::size_t d = last_dim(x, "logsumexp");
  return x.tape()->record(kernels::logsumexp_last(x.value()), {x}, [d](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    const Array& y = t.node_value(self);
    const Array& xv = t.node_value(xi);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < y.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += g[r] * std::exp(xv[r * d + j] - y[r]);
  });
}

Var sum(const Var& x) {
  double s = 0;
  for (double v : x.value().storage()) s += v;
  return x.tape()->record(Array::scalar(s), {x}, [](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const double g = t.node_grad(self)[0];
    for (auto& v : t.grad_buffer(xi).storage()) v += g;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum_last(const Var& x) {
  const std::size_t d = last_dim(x, "sum_last");
  const Array& xv = x.value();
  Array out(Shape(xv.shape().begin(), xv.shape().end() - 1));
  for (std::size_t r = 0; r < out.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) out[r] += xv[r * d + j];
  return x.tape()->record(std::move(out), {x}, [d](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += g[r];
  });
}

Var reshape(const Var& x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  return x.tape()->record(std::move(out), {x}, [](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no operands");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw ShapeError("concat_last: scalar operand");
  const Shape lead(first.begin(), first.end() - 1);
  const std::size_t rows = shape_size(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_same_tape(parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
      throw_shape_mismatch("concat_last", first, s);
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Array out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  return parts[0].tape()->record(std::move(out), parts, [widths, rows, total](Tape& t, std::size_t self) {
    const Array& g = t.node_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t pi = t.parent(self, k);
      if (t.requires_grad(pi)) {
        Array& d = t.grad_buffer(pi);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) d[r * widths[k] + j] += g[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var slice_last(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t d = last_dim(x, "slice_last");
  if (begin >= end || end > d)
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_string(x.shape()));
  const Array& xv = x.value();
  Shape out_shape = xv.shape();
  const std::size_t w = end - begin;
  out_shape.back() = w;
  Array out(out_shape);
  const std::size_t rows = xv.size() / d;
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * d + begin, w, out.data() + r * w);
  return x.tape()->record(std::move(out), {x}, [d, begin, w, rows](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) dx[r * d + begin + j] += g[r * w + j];
  });
}

Var broadcast_last(const Var& x, std::size_t k) {
  if (k == 0) throw ShapeError("broadcast_last: k must be positive");
  const Array& xv = x.value();
  Shape out_shape = xv.shape();
  out_shape.push_back(k);
  Array out(out_shape);
  for (std::size_t i = 0; i < xv.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = xv[i];
  return x.tape()->record(std::move(out), {x}, [k](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0);
    if (!t.requires_grad(xi)) return;
    const Array& g = t.node_grad(self);
    Array& dx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i)
      for (std::size_t j = 0; j < k; ++j) dx[i] += g[i * k + j];
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  Array out = kernels::conv2d(x.value(), w.value(), b.value(), stride);
  return x.tape()->record(std::move(out), {x, w, b}, [stride](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0), wi = t.parent(self, 1), bi = t.parent(self, 2);
    const Array& xv = t.node_value(xi);
    const Array& wv = t.node_value(wi);
    const Array& g = t.node_grad(self);
    const kernels::ConvGeometry geo{xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), stride};
    const std::size_t n = xv.dim(0), out_c = wv.dim(0);
    const std::size_t ckk = geo.channels * geo.kernel * geo.kernel;
    const std::size_t np = n * geo.out_h() * geo.out_w();
    std::vector<double> dy(out_c * np);
    kernels::batch_to_channel_major(g.data(), n, out_c, geo.out_h() * geo.out_w(), dy.data());
    if (t.requires_grad(bi)) {
      Array& db = t.grad_buffer(bi);
      for (std::size_t o = 0; o < out_c; ++o)
        for (std::size_t j = 0; j < np; ++j) db[o] += dy[o * np + j];
    }
    if (t.requires_grad(wi)) {
      std::vector<double> cols(ckk * np);
      kernels::im2col(xv.data(), n, geo, cols.data());
      kernels::gemm(dy.data(), cols.data(), t.grad_buffer(wi).data(), out_c, np, ckk, false, true, true);
    }
    if (t.requires_grad(xi)) {
      std::vector<double> dcols(ckk * np);
      kernels::gemm(wv.data(), dy.data(), dcols.data(), ckk, out_c, np, true, false, false);
      kernels::col2im(dcols.data(), n, geo, t.grad_buffer(xi).data());
    }
  });
}

Var deconv2d(const Var& x, const Var& w, const Var& b, std::size_t stride) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  Array out = kernels::deconv2d(x.value(), w.value(), b.value(), stride);
  return x.tape()->record(std::move(out), {x, w, b}, [stride](Tape& t, std::size_t self) {
    const std::size_t xi = t.parent(self, 0), wi = t.parent(self, 1), bi = t.parent(self, 2);
    const Array& xv = t.node_value(xi);
    const Array& wv = t.node_value(wi);
    const Array& g = t.node_grad(self);
    const std::size_t n = xv.dim(0), in_c = xv.dim(1), positions = xv.dim(2) * xv.dim(3);
    const std::size_t out_c = wv.dim(1), k = wv.dim(2);
    const std::size_t okk = out_c * k * k, np = n * positions;
    if (t.requires_grad(bi)) {
      Array& db = t.grad_buffer(bi);
      const std::size_t plane = g.dim(2) * g.dim(3);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_c; ++o) {
          const double* p = g.data() + (i * out_c + o) * plane;
          double s = 0;
          for (std::size_t j = 0; j < plane; ++j) s += p[j];
          db[o] += s;
        }
    }
    if (!t.requires_grad(xi) && !t.requires_grad(wi)) return;
    const kernels::ConvGeometry geo{out_c, g.dim(2), g.dim(3), k, stride};
    std::vector<double> dcols(okk * np);
    kernels::im2col(g.data(), n, geo, dcols.data());
    if (t.requires_grad(wi)) {
      std::vector<double> xm(in_c * np);
      kernels::batch_to_channel_major(xv.data(), n, in_c, positions, xm.data());
      kernels::gemm(xm.data(), dcols.data(), t.grad_buffer(wi).data(), in_c, np, okk, false, true, true);
    }
    if (t.requires_grad(xi)) {
      std::vector<double> dxm(in_c * np);
      kernels::gemm(wv.data(), dcols.data(), dxm.data(), in_c, okk, np, false, false, false);
      std::vector<double> dx(in_c * np);
      kernels::channel_to_batch_major(dxm.data(), n, in_c, positions, dx.data());
      Array& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
    }
  });
}

Var bce_with_logits(const Var& logits, const Var& targets) {
  check_same_tape(logits, targets);
  if (logits.shape() != targets.shape()) throw_shape_mismatch("bce_with_logits", logits.shape(), targets.shape());
  const Array& l = logits.value();
  const Array& y = targets.value();
  Array out(l.shape());
  for (std::size_t i = 0; i < l.size(); ++i) out[i] = kernels::softplus(l[i]) - y[i] * l[i];
  return logits.tape()->record(std::move(out), {logits, targets}, [](Tape& t, std::size_t self) {
    const std::size_t li = t.parent(self, 0), yi = t.parent(self, 1);
    if (!t.requires_grad(li)) return;
    const Array& g = t.node_grad(self);
    const Array& l = t.node_value(li);
    const Array& y = t.node_value(yi);
    Array& dl = t.grad_buffer(li);
    for (std::size_t i = 0; i < g.size(); ++i) dl[i] += g[i] * (kernels::sigmoid(l[i]) - y[i]);
  });
}

}  // namespace wm::core::ops
