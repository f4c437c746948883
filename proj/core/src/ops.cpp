#include "evmamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evmamba/tape.hpp"

namespace evm {

namespace {

double sigmoid_of(double x) {
  if (x >= 0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

double softplus_of(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

const char* kind_name(OpKind k) {
  switch (k) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::exp: return "exp";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::silu: return "silu";
    case OpKind::softplus: return "softplus";
    case OpKind::relu: return "relu";
  }
  return "?";
}

bool is_binary(OpKind k) { return k == OpKind::add || k == OpKind::sub || k == OpKind::mul; }

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                shape_str(t.shape()));
  }
}

Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw Error(std::string("elementwise ") + kind_name(kind) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel_of(out_shape);
  auto ad = a.data();
  auto bd = b.data();
  auto av = [&](std::size_t i) { return a_scalar ? ad[0] : ad[i]; };
  auto bv = [&](std::size_t i) { return b_scalar ? bd[0] : bd[i]; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case OpKind::add: out[i] = av(i) + bv(i); break;
      case OpKind::sub: out[i] = av(i) - bv(i); break;
      default: out[i] = av(i) * bv(i); break;
    }
  }
  return track({a, b}, make_result(out_shape, std::move(out)),
               [kind, a, b, a_scalar, b_scalar, n](std::span<const double> g, GradSlots gi) {
                 auto ad = a.data();
                 auto bd = b.data();
                 if (auto* ga = gi[0]) {
                   for (std::size_t i = 0; i < n; ++i) {
                     double d = g[i];
                     if (kind == OpKind::mul) d *= b_scalar ? bd[0] : bd[i];
                     (*ga)[a_scalar ? 0 : i] += d;
                   }
                 }
                 if (auto* gb = gi[1]) {
                   for (std::size_t i = 0; i < n; ++i) {
                     double d = g[i];
                     if (kind == OpKind::sub) d = -d;
                     if (kind == OpKind::mul) d *= a_scalar ? ad[0] : ad[i];
                     (*gb)[b_scalar ? 0 : i] += d;
                   }
                 }
               });
}

Tensor unary(OpKind kind, const Tensor& a) {
  const std::size_t n = a.numel();
  auto ad = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[i];
    switch (kind) {
      case OpKind::exp: out[i] = std::exp(x); break;
      case OpKind::sigmoid: out[i] = sigmoid_of(x); break;
      case OpKind::silu: out[i] = x * sigmoid_of(x); break;
      case OpKind::softplus: out[i] = softplus_of(x); break;
      default: out[i] = x > 0 ? x : 0.0; break;
    }
  }
  return track({a}, make_result(a.shape(), std::move(out)), [kind, a, n](std::span<const double> g, GradSlots gi) {
    auto* ga = gi[0];
    auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double x = ad[i];
      double d = 0.0;
      switch (kind) {
        case OpKind::exp: d = std::exp(x); break;
        case OpKind::sigmoid: {
          const double s = sigmoid_of(x);
          d = s * (1.0 - s);
          break;
        }
        case OpKind::silu: {
          const double s = sigmoid_of(x);
          d = s + x * s * (1.0 - s);
          break;
        }
        case OpKind::softplus: d = sigmoid_of(x); break;
        default: d = x > 0 ? 1.0 : 0.0; break;
      }
      (*ga)[i] += g[i] * d;
    }
  });
}

}  // namespace

Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b) {
  if (is_binary(kind)) {
    if (!b) throw Error(std::string("elementwise ") + kind_name(kind) + " needs two operands");
    return binary(kind, a, *b);
  }
  if (b) throw Error(std::string("elementwise ") + kind_name(kind) + " takes one operand");
  return unary(kind, a);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::mul, a, b); }
Tensor exp(const Tensor& a) { return unary(OpKind::exp, a); }
Tensor sigmoid(const Tensor& a) { return unary(OpKind::sigmoid, a); }
Tensor silu(const Tensor& a) { return unary(OpKind::silu, a); }
Tensor softplus(const Tensor& a) { return unary(OpKind::softplus, a); }
Tensor relu(const Tensor& a) { return unary(OpKind::relu, a); }
Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return track({a}, make_result(a.shape(), std::move(out)), [factor](std::span<const double> g, GradSlots gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) {
    throw Error("matmul: inner dimension mismatch " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != n)) {
    throw Error("linear: bias shape " + shape_str(bias->shape()) + " does not match output width " +
                std::to_string(n));
  }
  auto xd = x.data();
  auto wd = w.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    if (bias) std::copy(bias->data().begin(), bias->data().end(), row);
    for (std::size_t p = 0; p < k; ++p) {
      const double a = xd[i * k + p];
      const double* wr = wd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += a * wr[j];
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return track(std::move(inputs), make_result({m, n}, std::move(out)),
               [x, w, m, k, n](std::span<const double> g, GradSlots gi) {
                 auto xd = x.data();
                 auto wd = w.data();
                 if (auto* gx = gi[0]) {
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t p = 0; p < k; ++p) {
                       double s = 0.0;
                       for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * wd[p * n + j];
                       (*gx)[i * k + p] += s;
                     }
                 }
                 if (auto* gw = gi[1]) {
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t p = 0; p < k; ++p) {
                       const double a = xd[i * k + p];
                       double* gr = gw->data() + p * n;
                       for (std::size_t j = 0; j < n; ++j) gr[j] += a * g[i * n + j];
                     }
                 }
                 if (gi.size() > 2 && gi[2]) {
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j) (*gi[2])[j] += g[i * n + j];
                 }
               });
}

Tensor matmul(const Tensor& a, const Tensor& b) { return linear(a, b, nullptr); }

namespace {

struct ConvGeom {
  std::size_t cin, h, w, cout, k, stride, pad, groups, ho, wo, cin_g, cout_g;
};

// Range of output columns whose input column ox*stride + kx - pad lies in [0, w).
void col_range(const ConvGeom& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  const long pad = static_cast<long>(g.pad), s = static_cast<long>(g.stride), k = static_cast<long>(kx);
  long first = pad - k;
  long l = first <= 0 ? 0 : (first + s - 1) / s;
  long last = static_cast<long>(g.w) - 1 + pad - k;
  long h = last < 0 ? -1 : last / s;
  h = std::min<long>(h, static_cast<long>(g.wo) - 1);
  lo = static_cast<std::size_t>(l);
  hi = h < l ? lo : static_cast<std::size_t>(h + 1);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, Conv2dOptions opt) {
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  ConvGeom g{};
  g.cin = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cout = w.dim(0);
  g.k = w.dim(2);
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.groups = opt.groups;
  if (w.dim(3) != g.k) throw Error("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (g.k % 2 == 0) throw Error("conv2d: kernel size must be odd, got " + std::to_string(g.k));
  if (g.stride == 0) throw Error("conv2d: stride must be positive");
  if (g.groups == 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw Error("conv2d: groups=" + std::to_string(g.groups) + " must divide C_in=" + std::to_string(g.cin) +
                " and C_out=" + std::to_string(g.cout));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (w.dim(1) != g.cin_g) {
    throw Error("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()) +
                " and groups=" + std::to_string(g.groups));
  }
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw Error("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout)) {
    throw Error("conv2d: bias shape " + shape_str(bias->shape()) + " does not match C_out=" + std::to_string(g.cout));
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  auto xd = x.data();
  auto wd = w.data();
  const std::size_t plane = g.ho * g.wo;
  std::vector<double> out(g.cout * plane, 0.0);

  for (std::size_t co = 0; co < g.cout; ++co) {
    double* op = out.data() + co * plane;
    if (bias) std::fill(op, op + plane, bias->data()[co]);
    const std::size_t grp = co / g.cout_g;
    for (std::size_t cl = 0; cl < g.cin_g; ++cl) {
      const double* ip = xd.data() + (grp * g.cin_g + cl) * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double wv = wd[((co * g.cin_g + cl) * g.k + ky) * g.k + kx];
          std::size_t lo, hi;
          col_range(g, kx, lo, hi);
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const double* irow = ip + static_cast<std::size_t>(iy) * g.w;
            double* orow = op + oy * g.wo;
            if (g.stride == 1) {
              const double* src = irow + kx - g.pad;
              for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
            }
          }
        }
      }
    }
  }

  std::vector<Tensor> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return track(std::move(inputs), make_result({g.cout, g.ho, g.wo}, std::move(out)),
               [x, w, g, plane](std::span<const double> gout, GradSlots gi) {
                 auto xd = x.data();
                 auto wd = w.data();
                 auto* gx = gi[0];
                 auto* gw = gi[1];
                 for (std::size_t co = 0; co < g.cout; ++co) {
                   const double* gp = gout.data() + co * plane;
                   const std::size_t grp = co / g.cout_g;
                   for (std::size_t cl = 0; cl < g.cin_g; ++cl) {
                     const std::size_t ci = grp * g.cin_g + cl;
                     const double* ip = xd.data() + ci * g.h * g.w;
                     for (std::size_t ky = 0; ky < g.k; ++ky) {
                       for (std::size_t kx = 0; kx < g.k; ++kx) {
                         const std::size_t widx = ((co * g.cin_g + cl) * g.k + ky) * g.k + kx;
                         const double wv = wd[widx];
                         std::size_t lo, hi;
                         col_range(g, kx, lo, hi);
                         double acc = 0.0;
                         for (std::size_t oy = 0; oy < g.ho; ++oy) {
                           const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                           if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                           const std::size_t ioff = static_cast<std::size_t>(iy) * g.w;
                           const double* grow = gp + oy * g.wo;
                           for (std::size_t ox = lo; ox < hi; ++ox) {
                             const std::size_t ix = ox * g.stride + kx - g.pad;
                             acc += grow[ox] * ip[ioff + ix];
                             if (gx) (*gx)[ci * g.h * g.w + ioff + ix] += wv * grow[ox];
                           }
                         }
                         if (gw) (*gw)[widx] += acc;
                       }
                     }
                   }
                   if (gi.size() > 2 && gi[2]) {
                     double s = 0.0;
                     for (std::size_t i = 0; i < plane; ++i) s += gp[i];
                     (*gi[2])[co] += s;
                   }
                 }
               });
}

Tensor reduce(ReduceKind kind, const Tensor& x, std::span<const std::size_t> axes) {
  if (axes.empty()) throw Error("reduce: no axes given");
  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, false);
  for (auto a : axes) {
    if (a >= rank) throw Error("reduce: axis " + std::to_string(a) + " invalid for shape " + shape_str(x.shape()));
    if (reduced[a]) throw Error("reduce: axis " + std::to_string(a) + " listed twice");
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      count *= x.dim(i);
    } else {
      out_shape.push_back(x.dim(i));
    }
  }
  if (out_shape.empty()) out_shape = {1};

  // Map every input flat index to its output flat index.
  const std::size_t n = x.numel();
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t f = 0; f < n; ++f) {
      std::size_t o = 0;
      for (std::size_t i = 0; i < rank; ++i)
        if (!reduced[i]) o = o * x.dim(i) + idx[i];
      target[f] = o;
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < x.dim(i)) break;
        idx[i] = 0;
      }
    }
  }
  const double factor = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<double> out(numel_of(out_shape), 0.0);
  auto xd = x.data();
  for (std::size_t f = 0; f < n; ++f) out[target[f]] += xd[f];
  if (factor != 1.0)
    for (auto& v : out) v *= factor;
  return track({x}, make_result(out_shape, std::move(out)),
               [target = std::move(target), factor](std::span<const double> g, GradSlots gi) {
                 for (std::size_t f = 0; f < target.size(); ++f) (*gi[0])[f] += g[target[f]] * factor;
               });
}

Tensor sum(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceKind::sum, x, axes);
}

Tensor mean(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceKind::mean, x, axes);
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t axes[] = {1, 2};
  return reduce(ReduceKind::mean, x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw Error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return track({x}, make_result(std::move(shape), std::move(out)), [](std::span<const double> g, GradSlots gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

Tensor channel_scale(const Tensor& x, const Tensor& gate) {
  require_rank(x, 3, "channel_scale input");
  if (gate.numel() != x.dim(0)) {
    throw Error("channel_scale: gate " + shape_str(gate.shape()) + " does not match channels of " +
                shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  auto xd = x.data();
  auto gd = gate.data();
  std::vector<double> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = xd[ch * plane + i] * gd[ch];
  return track({x, gate}, make_result(x.shape(), std::move(out)),
               [x, gate, c, plane](std::span<const double> g, GradSlots gi) {
                 auto xd = x.data();
                 auto gd = gate.data();
                 for (std::size_t ch = 0; ch < c; ++ch) {
                   double s = 0.0;
                   for (std::size_t i = 0; i < plane; ++i) {
                     const std::size_t f = ch * plane + i;
                     if (gi[0]) (*gi[0])[f] += g[f] * gd[ch];
                     s += g[f] * xd[f];
                   }
                   if (gi[1]) (*gi[1])[ch] += s;
                 }
               });
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps) {
  require_rank(x, 3, "layer_norm_channels");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (weight.numel() != c || bias.numel() != c) {
    throw Error("layer_norm_channels: affine parameters must have " + std::to_string(c) + " entries");
  }
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(plane);
  std::vector<double> out(x.numel());
  for (std::size_t p = 0; p < plane; ++p) {
    double mu = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) mu += xd[ch * plane + p];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = xd[ch * plane + p] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[p] = is;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t f = ch * plane + p;
      xhat[f] = (xd[f] - mu) * is;
      out[f] = xhat[f] * wd[ch] + bd[ch];
    }
  }
  return track({x, weight, bias}, make_result(x.shape(), std::move(out)),
               [weight, xhat = std::move(xhat), inv_std = std::move(inv_std), c, plane](std::span<const double> g,
                                                                                        GradSlots gi) {
                 auto wd = weight.data();
                 for (std::size_t p = 0; p < plane; ++p) {
                   double mg = 0.0, mgx = 0.0;
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     const std::size_t f = ch * plane + p;
                     const double gg = g[f] * wd[ch];
                     mg += gg;
                     mgx += gg * xhat[f];
                     if (gi[1]) (*gi[1])[ch] += g[f] * xhat[f];
                     if (gi[2]) (*gi[2])[ch] += g[f];
                   }
                   if (!gi[0]) continue;
                   mg /= static_cast<double>(c);
                   mgx /= static_cast<double>(c);
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     const std::size_t f = ch * plane + p;
                     (*gi[0])[f] += inv_std[p] * (g[f] * wd[ch] - mg - xhat[f] * mgx);
                   }
                 }
               });
}

namespace {
std::vector<double> softmax_rows(const Tensor& logits, std::size_t rows, std::size_t cols) {
  auto d = logits.data();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = d.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = std::exp(row[j] - mx);
      s += out[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= s;
  }
  return out;
}
}  // namespace

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  auto probs = softmax_rows(logits, rows, cols);
  Tensor out = make_result(logits.shape(), probs);
  return track({logits}, out, [probs = std::move(probs), rows, cols](std::span<const double> g, GradSlots gi) {
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * probs[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) (*gi[0])[r * cols + j] += probs[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& logits) {
  require_rank(logits, 2, "log_softmax");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  auto probs = softmax_rows(logits, rows, cols);
  auto d = logits.data();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = d.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = row[j] - lse;
  }
  return track({logits}, make_result(logits.shape(), std::move(out)),
               [probs = std::move(probs), rows, cols](std::span<const double> g, GradSlots gi) {
                 for (std::size_t r = 0; r < rows; ++r) {
                   double gs = 0.0;
                   for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
                   for (std::size_t j = 0; j < cols; ++j)
                     (*gi[0])[r * cols + j] += g[r * cols + j] - probs[r * cols + j] * gs;
                 }
               });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) {
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw Error("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(cols) + ")");
    }
  }
  auto probs = softmax_rows(logits, rows, cols);
  auto d = logits.data();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = d.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
    loss -= row[labels[r]] - mx - std::log(s);
  }
  loss /= static_cast<double>(rows);
  std::vector<int> lab(labels.begin(), labels.end());
  return track({logits}, make_result({1}, {loss}),
               [probs = std::move(probs), lab = std::move(lab), rows, cols](std::span<const double> g, GradSlots gi) {
                 const double s = g[0] / static_cast<double>(rows);
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t j = 0; j < cols; ++j) {
                     const double target = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
                     (*gi[0])[r * cols + j] += s * (probs[r * cols + j] - target);
                   }
               });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error("stack: no tensors");
  const Shape& inner = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != inner) {
      throw Error("stack: shape mismatch " + shape_str(inner) + " vs " + shape_str(p.shape()));
    }
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  const std::size_t n = parts[0].numel();
  std::vector<double> out;
  out.reserve(n * parts.size());
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return track(std::move(inputs), make_result(std::move(shape), std::move(out)),
               [n](std::span<const double> g, GradSlots gi) {
                 for (std::size_t k = 0; k < gi.size(); ++k) {
                   if (!gi[k]) continue;
                   for (std::size_t i = 0; i < n; ++i) (*gi[k])[i] += g[k * n + i];
                 }
               });
}

Tensor select(const Tensor& x, std::size_t index) {
  if (x.rank() < 2) throw Error("select: need rank >= 2, got " + shape_str(x.shape()));
  if (index >= x.dim(0)) {
    throw Error("select: index " + std::to_string(index) + " out of range for " + shape_str(x.shape()));
  }
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t n = numel_of(shape);
  std::vector<double> out(x.data().begin() + index * n, x.data().begin() + (index + 1) * n);
  return track({x}, make_result(std::move(shape), std::move(out)),
               [n, index](std::span<const double> g, GradSlots gi) {
                 for (std::size_t i = 0; i < n; ++i) (*gi[0])[index * n + i] += g[i];
               });
}

Tensor spatial_take(const Tensor& x, std::span<const std::size_t> pixels, bool token_major, std::size_t out_h,
                    std::size_t out_w) {
  require_rank(x, 3, "spatial_take");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2), len = pixels.size();
  if (len == 0) throw Error("spatial_take: empty pixel list");
  for (auto p : pixels) {
    if (p >= plane) throw Error("spatial_take: pixel " + std::to_string(p) + " outside " + shape_str(x.shape()));
  }
  Shape shape;
  if (token_major) {
    shape = {len, c};
  } else {
    if (out_h * out_w != len) throw Error("spatial_take: output grid does not hold " + std::to_string(len) + " pixels");
    shape = {c, out_h, out_w};
  }
  auto xd = x.data();
  std::vector<double> out(len * c);
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = xd[ch * plane + pixels[l]];
      out[token_major ? l * c + ch : ch * len + l] = v;
    }
  std::vector<std::size_t> pix(pixels.begin(), pixels.end());
  return track({x}, make_result(std::move(shape), std::move(out)),
               [pix = std::move(pix), token_major, c, plane](std::span<const double> g, GradSlots gi) {
                 const std::size_t len = pix.size();
                 for (std::size_t l = 0; l < len; ++l)
                   for (std::size_t ch = 0; ch < c; ++ch)
                     (*gi[0])[ch * plane + pix[l]] += g[token_major ? l * c + ch : ch * len + l];
               });
}

Tensor spatial_merge(std::span<const Tensor> parts, std::span<const std::vector<std::size_t>> pixels,
                     bool token_major, std::size_t channels, std::size_t height, std::size_t width) {
  if (parts.size() != pixels.size()) {
    throw Error("spatial_merge: " + std::to_string(parts.size()) + " parts for " + std::to_string(pixels.size()) +
                " pixel lists");
  }
  const std::size_t plane = height * width;
  std::vector<double> out(channels * plane, 0.0);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& part = parts[k];
    const auto& pix = pixels[k];
    if (part.numel() != pix.size() * channels) {
      throw Error("spatial_merge: part " + std::to_string(k) + " of shape " + shape_str(part.shape()) +
                  " does not hold " + std::to_string(pix.size()) + " pixels of " + std::to_string(channels) +
                  " channels");
    }
    auto pd = part.data();
    const std::size_t len = pix.size();
    for (std::size_t l = 0; l < len; ++l) {
      if (pix[l] >= plane) throw Error("spatial_merge: pixel index out of range");
      for (std::size_t ch = 0; ch < channels; ++ch)
        out[ch * plane + pix[l]] += pd[token_major ? l * channels + ch : ch * len + l];
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::vector<std::size_t>> pix(pixels.begin(), pixels.end());
  return track(std::move(inputs), make_result({channels, height, width}, std::move(out)),
               [pix = std::move(pix), token_major, channels, plane](std::span<const double> g, GradSlots gi) {
                 for (std::size_t k = 0; k < gi.size(); ++k) {
                   if (!gi[k]) continue;
                   const std::size_t len = pix[k].size();
                   for (std::size_t l = 0; l < len; ++l)
                     for (std::size_t ch = 0; ch < channels; ++ch)
                       (*gi[k])[token_major ? l * channels + ch : ch * len + l] += g[ch * plane + pix[k][l]];
                 }
               });
}

}  // namespace evm
