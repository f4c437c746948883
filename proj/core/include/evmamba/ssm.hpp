#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

#include "evmamba/random.hpp"
#include "evmamba/tensor.hpp"

namespace evm {

/// Continuous selective-SSM parameters for D channels and N states per
/// channel. The diagonal state matrix is stored as log(-A), so A stays
/// strictly negative under any update.
struct SsmParams {
  std::size_t channels = 0;   // D
  std::size_t state_dim = 0;  // N
  Tensor a_log;               // [D×N]
  Tensor b_proj;              // [D×N], token -> B
  Tensor c_proj;              // [D×N], token -> C
  Tensor dt_proj;             // [D×D], token -> Δ pre-activation
  Tensor dt_bias;             // [D]

  /// -A initialised to 1..N per channel; Δ_bias chosen so softplus(Δ_bias)
  /// is uniform in [0.001, 0.1].
  static SsmParams init(std::size_t channels, std::size_t state_dim, Rng& rng);
  static SsmParams zeros(std::size_t channels, std::size_t state_dim);

  /// A = -exp(a_log), differentiable.
  Tensor a() const;

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("a_log", a_log);
    fn("b_proj", b_proj);
    fn("c_proj", c_proj);
    fn("dt_proj", dt_proj);
    fn("dt_bias", dt_bias);
  }

  std::size_t param_count() const;
};

/// Per-timestep discrete parameters, each [L×D×N].
struct DiscreteParams {
  Tensor a_bar;
  Tensor b_bar;
  Tensor c_bar;

  std::size_t length() const { return a_bar.dim(0); }
  std::size_t channels() const { return a_bar.dim(1); }
  std::size_t state_dim() const { return a_bar.dim(2); }

  /// Repeats one [D×N] triple over `length` steps.
  static DiscreteParams time_invariant(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c_bar,
                                       std::size_t length);
  bool is_time_invariant() const;
};

/// Simplified zero-order hold: A_bar = exp(Δ⊙A), B_bar = Δ⊙B. `dt` must be
/// positive and either share the shape of `a`/`b` or be a single element.
std::pair<Tensor, Tensor> discretize(const Tensor& a, const Tensor& b, const Tensor& dt);

/// Exact ZOH input matrix (exp(ΔA) - 1)/A ⊙ B for diagonal A (no gradient).
Tensor zoh_exact_b(const Tensor& a, const Tensor& b, const Tensor& dt);

/// Input-dependent parameters for x[L×D]:
///   B_t = x_t·B_proj, C_t = x_t·C_proj, Δ_t = softplus(Δ_bias + x_t·Δ_proj)
/// followed by per-step discretization.
DiscreteParams select_params(const Tensor& x, const SsmParams& params);

/// h_t = A_bar_t ⊙ h_{t-1} + B_bar_t x_t,  y_t = Σ_n C_bar_t ⊙ h_t.
/// x[L×D], h0[D×N] -> y[L×D]. Differentiable in every argument.
Tensor selective_scan(const Tensor& x, const DiscreteParams& dp, const Tensor& h0);

/// Convolution kernel K[d, k] = Σ_n C[d,n] A[d,n]^k B[d,n] for k < length,
/// returned as [D×length]. Requires time-invariant parameters.
Tensor conv_kernel_form(const DiscreteParams& dp, std::size_t length);

/// Causal convolution y[t,d] = Σ_{k≤t} K[d,k] x[t-k,d] of x[L×D] with K[D×≥L].
Tensor causal_conv(const Tensor& x, const Tensor& kernel);

/// Total recurrence steps (tokens) processed by selective_scan on this
/// thread since the counter was created.
class ScanStepCounter {
 public:
  ScanStepCounter();
  std::uint64_t steps() const;

 private:
  std::uint64_t start_;
};

}  // namespace evm
