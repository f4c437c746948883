#include "evmamba/ssm.hpp"

#include <cmath>

#include "evmamba/ops.hpp"
#include "evmamba/tape.hpp"

namespace evm {

namespace {

thread_local std::uint64_t t_scan_steps = 0;

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

void require_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw Error(std::string(what) + ": expected " + shape_str(shape) + ", got " + shape_str(t.shape()));
  }
}

// a_bar[l,d,n] = exp(dt[l,d] * a[d,n])
Tensor outer_decay(const Tensor& dt, const Tensor& a) {
  const std::size_t len = dt.dim(0), ch = dt.dim(1), ns = a.dim(1);
  auto dd = dt.data();
  auto ad = a.data();
  std::vector<double> out(len * ch * ns);
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t d = 0; d < ch; ++d) {
      const double delta = dd[l * ch + d];
      if (!(delta > 0.0)) throw Error("discretize: step size must be positive, got " + std::to_string(delta));
      for (std::size_t n = 0; n < ns; ++n) out[(l * ch + d) * ns + n] = std::exp(delta * ad[d * ns + n]);
    }
  Tensor result = make_result({len, ch, ns}, std::move(out));
  return track({dt, a}, result, [dt, a, result, len, ch, ns](std::span<const double> g, GradSlots gi) {
    auto dd = dt.data();
    auto ad = a.data();
    auto od = result.data();
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t d = 0; d < ch; ++d)
        for (std::size_t n = 0; n < ns; ++n) {
          const std::size_t f = (l * ch + d) * ns + n;
          const double go = g[f] * od[f];
          if (gi[0]) (*gi[0])[l * ch + d] += go * ad[d * ns + n];
          if (gi[1]) (*gi[1])[d * ns + n] += go * dd[l * ch + d];
        }
  });
}

// b_bar[l,d,n] = dt[l,d] * b[l,n]
Tensor outer_drive(const Tensor& dt, const Tensor& b) {
  const std::size_t len = dt.dim(0), ch = dt.dim(1), ns = b.dim(1);
  auto dd = dt.data();
  auto bd = b.data();
  std::vector<double> out(len * ch * ns);
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t d = 0; d < ch; ++d)
      for (std::size_t n = 0; n < ns; ++n) out[(l * ch + d) * ns + n] = dd[l * ch + d] * bd[l * ns + n];
  return track({dt, b}, make_result({len, ch, ns}, std::move(out)),
               [dt, b, len, ch, ns](std::span<const double> g, GradSlots gi) {
                 auto dd = dt.data();
                 auto bd = b.data();
                 for (std::size_t l = 0; l < len; ++l)
                   for (std::size_t d = 0; d < ch; ++d)
                     for (std::size_t n = 0; n < ns; ++n) {
                       const double gv = g[(l * ch + d) * ns + n];
                       if (gi[0]) (*gi[0])[l * ch + d] += gv * bd[l * ns + n];
                       if (gi[1]) (*gi[1])[l * ns + n] += gv * dd[l * ch + d];
                     }
               });
}

// c_bar[l,d,n] = c[l,n]
Tensor broadcast_readout(const Tensor& c, std::size_t ch) {
  const std::size_t len = c.dim(0), ns = c.dim(1);
  auto cd = c.data();
  std::vector<double> out(len * ch * ns);
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t d = 0; d < ch; ++d)
      for (std::size_t n = 0; n < ns; ++n) out[(l * ch + d) * ns + n] = cd[l * ns + n];
  return track({c}, make_result({len, ch, ns}, std::move(out)),
               [len, ch, ns](std::span<const double> g, GradSlots gi) {
                 for (std::size_t l = 0; l < len; ++l)
                   for (std::size_t d = 0; d < ch; ++d)
                     for (std::size_t n = 0; n < ns; ++n) (*gi[0])[l * ns + n] += g[(l * ch + d) * ns + n];
               });
}

}  // namespace

SsmParams SsmParams::init(std::size_t channels, std::size_t state_dim, Rng& rng) {
  SsmParams p = zeros(channels, state_dim);
  auto a = p.a_log.mutable_data();
  for (std::size_t d = 0; d < channels; ++d)
    for (std::size_t n = 0; n < state_dim; ++n) a[d * state_dim + n] = std::log(static_cast<double>(n + 1));
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  p.b_proj = rng.uniform_tensor({channels, state_dim}, -bound, bound);
  p.c_proj = rng.uniform_tensor({channels, state_dim}, -bound, bound);
  p.dt_proj = rng.uniform_tensor({channels, channels}, -bound, bound);
  auto bias = p.dt_bias.mutable_data();
  for (auto& v : bias) v = inverse_softplus(rng.uniform(0.001, 0.1));
  return p;
}

SsmParams SsmParams::zeros(std::size_t channels, std::size_t state_dim) {
  if (channels == 0 || state_dim == 0) throw Error("SsmParams: channels and state_dim must be >= 1");
  SsmParams p;
  p.channels = channels;
  p.state_dim = state_dim;
  p.a_log = Tensor::zeros({channels, state_dim});
  p.b_proj = Tensor::zeros({channels, state_dim});
  p.c_proj = Tensor::zeros({channels, state_dim});
  p.dt_proj = Tensor::zeros({channels, channels});
  p.dt_bias = Tensor::zeros({channels});
  return p;
}

Tensor SsmParams::a() const { return neg(exp(a_log)); }

std::size_t SsmParams::param_count() const { return channels * (3 * state_dim + channels + 1); }

DiscreteParams DiscreteParams::time_invariant(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c_bar,
                                              std::size_t length) {
  if (a_bar.rank() != 2 || b_bar.shape() != a_bar.shape() || c_bar.shape() != a_bar.shape()) {
    throw Error("time_invariant: expected three equal [D×N] tensors");
  }
  auto repeat = [length](const Tensor& t) {
    std::vector<double> v;
    v.reserve(t.numel() * length);
    for (std::size_t l = 0; l < length; ++l) v.insert(v.end(), t.data().begin(), t.data().end());
    return Tensor({length, t.dim(0), t.dim(1)}, std::move(v));
  };
  return {repeat(a_bar), repeat(b_bar), repeat(c_bar)};
}

bool DiscreteParams::is_time_invariant() const {
  const std::size_t step = channels() * state_dim();
  for (const Tensor* t : {&a_bar, &b_bar, &c_bar}) {
    auto d = t->data();
    for (std::size_t i = step; i < d.size(); ++i)
      if (d[i] != d[i % step]) return false;
  }
  return true;
}

std::pair<Tensor, Tensor> discretize(const Tensor& a, const Tensor& b, const Tensor& dt) {
  if (a.shape() != b.shape()) {
    throw Error("discretize: A " + shape_str(a.shape()) + " and B " + shape_str(b.shape()) + " differ in shape");
  }
  if (dt.numel() != 1 && dt.shape() != a.shape()) {
    throw Error("discretize: Δ " + shape_str(dt.shape()) + " must be scalar or match " + shape_str(a.shape()));
  }
  for (double v : dt.data()) {
    if (!(v > 0.0)) throw Error("discretize: step size must be positive, got " + std::to_string(v));
  }
  return {exp(mul(dt, a)), mul(dt, b)};
}

Tensor zoh_exact_b(const Tensor& a, const Tensor& b, const Tensor& dt) {
  if (a.shape() != b.shape() || (dt.numel() != 1 && dt.shape() != a.shape())) {
    throw Error("zoh_exact_b: incompatible shapes");
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double delta = dt.numel() == 1 ? dt[0] : dt[i];
    if (a[i] == 0.0) throw Error("zoh_exact_b: A must be invertible");
    out[i] = std::expm1(delta * a[i]) / a[i] * b[i];
  }
  return Tensor(a.shape(), std::move(out));
}

DiscreteParams select_params(const Tensor& x, const SsmParams& params) {
  if (x.rank() != 2) throw Error("select_params: expected x[L×D], got " + shape_str(x.shape()));
  if (x.dim(1) != params.channels) {
    throw Error("select_params: x has " + std::to_string(x.dim(1)) + " channels, projections expect " +
                std::to_string(params.channels));
  }
  require_shape(params.b_proj, {params.channels, params.state_dim}, "select_params B_proj");
  require_shape(params.c_proj, {params.channels, params.state_dim}, "select_params C_proj");
  require_shape(params.dt_proj, {params.channels, params.channels}, "select_params Δ_proj");
  const Tensor b = matmul(x, params.b_proj);
  const Tensor c = matmul(x, params.c_proj);
  const Tensor dt = softplus(linear(x, params.dt_proj, &params.dt_bias));
  return {outer_decay(dt, params.a()), outer_drive(dt, b), broadcast_readout(c, params.channels)};
}

Tensor selective_scan(const Tensor& x, const DiscreteParams& dp, const Tensor& h0) {
  if (x.rank() != 2) throw Error("selective_scan: expected x[L×D], got " + shape_str(x.shape()));
  const std::size_t len = x.dim(0), ch = x.dim(1);
  if (dp.a_bar.rank() != 3) throw Error("selective_scan: discrete parameters must be [L×D×N]");
  const std::size_t ns = dp.state_dim();
  const Shape pshape{len, ch, ns};
  if (dp.a_bar.shape() != pshape || dp.b_bar.shape() != pshape || dp.c_bar.shape() != pshape) {
    throw Error("selective_scan: parameter length/shape mismatch, x is " + shape_str(x.shape()) + ", A_bar is " +
                shape_str(dp.a_bar.shape()));
  }
  require_shape(h0, {ch, ns}, "selective_scan h0");

  auto xd = x.data();
  auto ad = dp.a_bar.data();
  auto bd = dp.b_bar.data();
  auto cd = dp.c_bar.data();
  const std::size_t step = ch * ns;
  // states[t] holds h_{t-1}; states[0] = h0.
  std::vector<double> states((len + 1) * step);
  std::copy(h0.data().begin(), h0.data().end(), states.begin());
  std::vector<double> y(len * ch, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double* prev = states.data() + t * step;
    double* cur = states.data() + (t + 1) * step;
    for (std::size_t d = 0; d < ch; ++d) {
      const double xv = xd[t * ch + d];
      double acc = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        const std::size_t f = t * step + d * ns + n;
        const double h = ad[f] * prev[d * ns + n] + bd[f] * xv;
        cur[d * ns + n] = h;
        acc += cd[f] * h;
      }
      y[t * ch + d] = acc;
    }
  }
  t_scan_steps += len;

  return track({x, dp.a_bar, dp.b_bar, dp.c_bar, h0}, make_result({len, ch}, std::move(y)),
               [x, dp, states = std::move(states), len, ch, ns, step](std::span<const double> g, GradSlots gi) {
                 auto xd = x.data();
                 auto ad = dp.a_bar.data();
                 auto bd = dp.b_bar.data();
                 auto cd = dp.c_bar.data();
                 std::vector<double> carry(step, 0.0);
                 for (std::size_t t = len; t-- > 0;) {
                   const double* prev = states.data() + t * step;
                   const double* cur = states.data() + (t + 1) * step;
                   for (std::size_t d = 0; d < ch; ++d) {
                     const double gy = g[t * ch + d];
                     const double xv = xd[t * ch + d];
                     double gx = 0.0;
                     for (std::size_t n = 0; n < ns; ++n) {
                       const std::size_t s = d * ns + n;
                       const std::size_t f = t * step + s;
                       const double gh = carry[s] + cd[f] * gy;
                       if (gi[3]) (*gi[3])[f] += gy * cur[s];
                       if (gi[1]) (*gi[1])[f] += gh * prev[s];
                       if (gi[2]) (*gi[2])[f] += gh * xv;
                       gx += gh * bd[f];
                       carry[s] = gh * ad[f];
                     }
                     if (gi[0]) (*gi[0])[t * ch + d] += gx;
                   }
                 }
                 if (gi[4])
                   for (std::size_t s = 0; s < step; ++s) (*gi[4])[s] += carry[s];
               });
}

Tensor conv_kernel_form(const DiscreteParams& dp, std::size_t length) {
  if (!dp.is_time_invariant()) {
    throw Error("conv_kernel_form: parameters vary over time; the convolution form needs selection disabled");
  }
  if (length == 0) throw Error("conv_kernel_form: length must be >= 1");
  const std::size_t ch = dp.channels(), ns = dp.state_dim();
  auto ad = dp.a_bar.data();
  auto bd = dp.b_bar.data();
  auto cd = dp.c_bar.data();
  std::vector<double> k(ch * length, 0.0);
  for (std::size_t d = 0; d < ch; ++d)
    for (std::size_t n = 0; n < ns; ++n) {
      const std::size_t s = d * ns + n;
      double term = cd[s] * bd[s];
      for (std::size_t i = 0; i < length; ++i) {
        k[d * length + i] += term;
        term *= ad[s];
      }
    }
  return Tensor({ch, length}, std::move(k));
}

Tensor causal_conv(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 2 || kernel.rank() != 2 || kernel.dim(0) != x.dim(1) || kernel.dim(1) < x.dim(0)) {
    throw Error("causal_conv: x " + shape_str(x.shape()) + " incompatible with kernel " +
                shape_str(kernel.shape()));
  }
  const std::size_t len = x.dim(0), ch = x.dim(1), klen = kernel.dim(1);
  std::vector<double> y(len * ch, 0.0);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t d = 0; d < ch; ++d) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= t; ++k) acc += kernel[d * klen + k] * x[(t - k) * ch + d];
      y[t * ch + d] = acc;
    }
  return make_result({len, ch}, std::move(y));
}

ScanStepCounter::ScanStepCounter() : start_(t_scan_steps) {}
std::uint64_t ScanStepCounter::steps() const { return t_scan_steps - start_; }

}  // namespace evm
