#include "evmamba/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "evmamba/blocks.hpp"
#include "evmamba/ops.hpp"
#include "evmamba/random.hpp"
#include "evmamba/scan_plan.hpp"
#include "evmamba/ssm.hpp"
#include "evmamba/tape.hpp"

namespace evm {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport gradcheck(const LossFn& loss, std::vector<Tensor> inputs, std::vector<std::string> names,
                          double step, double threshold) {
  if (precision() != Precision::f64) throw Error("gradcheck: requires 64-bit precision");
  if (names.size() != inputs.size()) throw Error("gradcheck: one name per input required");
  if (!(step > 0.0)) throw Error("gradcheck: step must be positive");

  std::vector<bool> had_grad;
  for (auto& t : inputs) {
    had_grad.push_back(t.requires_grad());
    t.set_requires_grad(true);
  }
  Tape tape;
  Tensor out;
  {
    TapeScope scope(tape);
    out = loss();
  }
  if (out.numel() != 1) throw Error("gradcheck: loss must be scalar, got shape " + shape_str(out.shape()));
  const Gradients grads = tape.backward(out);

  GradCheckReport rep;
  rep.step = step;
  rep.threshold = threshold;
  NoGradScope no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    const Tensor analytic = grads.of(t);
    GradCheckEntry e;
    e.name = names[k];
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double orig = d[i];
      d[i] = orig + step;
      const double up = loss().item();
      d[i] = orig - step;
      const double down = loss().item();
      d[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[i], numeric);
      if (err > e.max_rel_error || i == 0) {
        e.max_rel_error = err;
        e.worst_index = i;
        e.analytic = analytic[i];
        e.numeric = numeric;
      }
    }
    rep.entries.push_back(e);
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].zero_grad();
    inputs[k].set_requires_grad(had_grad[k]);
  }
  return rep;
}

bool SuiteReport::passed() const { return failures() == 0; }

std::size_t SuiteReport::failures() const {
  return static_cast<std::size_t>(std::count_if(cases.begin(), cases.end(), [](const SuiteCase& c) { return !c.passed; }));
}

void SuiteReport::print(std::ostream& os, bool verbose) const {
  for (const auto& c : cases) {
    if (verbose || !c.passed) {
      os << (c.passed ? "  ok   " : "  FAIL ") << c.name << "  " << c.detail << '\n';
    }
  }
  os << title << ": " << (cases.size() - failures()) << "/" << cases.size() << " passed";
  if (!passed()) os << " (seed " << seed << ")";
  os << '\n';
}

namespace {

/// Restores the previous precision on scope exit.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : prev_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(prev_); }

 private:
  Precision prev_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void merge(SuiteReport& into, const SuiteReport& part) {
  for (auto c : part.cases) {
    c.name = part.title + "/" + c.name;
    into.cases.push_back(std::move(c));
  }
}

}  // namespace

std::vector<double> naive_conv_scan(const std::vector<double>& x, const std::vector<double>& a_bar,
                                    const std::vector<double>& b_bar, const std::vector<double>& c_bar,
                                    std::size_t length, std::size_t channels, std::size_t states) {
  std::vector<double> y(length * channels, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t d = 0; d < channels; ++d) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= t; ++k) {
        double kern = 0.0;
        for (std::size_t n = 0; n < states; ++n) {
          const std::size_t i = d * states + n;
          kern += c_bar[i] * std::pow(a_bar[i], static_cast<double>(k)) * b_bar[i];
        }
        acc += kern * x[(t - k) * channels + d];
      }
      y[t * channels + d] = acc;
    }
  }
  return y;
}

SuiteReport recurrence_equivalence(std::uint64_t seed, std::size_t count, double tol) {
  PrecisionScope prec(Precision::f64);
  NoGradScope no_grad;
  SuiteReport rep{"recurrence-vs-convolution", seed, {}};
  Rng rng(seed);
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t d = 1 + rng.below(4), n = 1 + rng.below(4), l = 1 + rng.below(32);
    std::vector<double> a(d * n), b(d * n), cc(d * n), x(l * d);
    for (auto& v : a) v = rng.uniform(0.05, 0.99);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);
    for (auto& v : cc) v = rng.uniform(-1.0, 1.0);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const Tensor at({d, n}, a), bt({d, n}, b), ct({d, n}, cc), xt({l, d}, x);
    const auto dp = DiscreteParams::time_invariant(at, bt, ct, l);
    const Tensor rec = selective_scan(xt, dp, Tensor::zeros({d, n}));
    const Tensor conv = causal_conv(xt, conv_kernel_form(dp, l));
    const auto naive = naive_conv_scan(x, a, b, cc, l, d, n);
    double worst = max_abs_diff(rec, conv);
    for (std::size_t i = 0; i < naive.size(); ++i) worst = std::max(worst, std::abs(rec[i] - naive[i]));
    rep.cases.push_back({"case" + std::to_string(c) + "[D=" + std::to_string(d) + ",N=" + std::to_string(n) +
                             ",L=" + std::to_string(l) + "]",
                         worst <= tol, worst, "max |diff| " + fmt("%.3g", worst)});
  }
  return rep;
}

SuiteReport partition_roundtrips(std::uint64_t seed, std::size_t count) {
  NoGradScope no_grad;
  SuiteReport rep{"partition-roundtrip", seed, {}};
  Rng rng(seed);
  for (std::size_t h = 3; h <= 9; ++h) {
    for (std::size_t w = 3; w <= 9; ++w) {
      for (std::size_t p = 1; p <= 3; ++p) {
        const ScanPlan plan = build_plan(h, w, p);
        std::string problem;

        // Partition oracle: concatenated index sets, sorted, must be 0..HW-1.
        std::vector<std::size_t> all;
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
          auto px = plan.subgrid_pixels(g);
          auto tr = plan.groups[g].traversal;
          std::sort(px.begin(), px.end());
          std::sort(tr.begin(), tr.end());
          if (px != tr) problem = "traversal of group " + std::to_string(g) + " differs from its pixel set";
          for (auto i : px) {
            if (i / w % p != plan.groups[g].offset_m || i % w % p != plan.groups[g].offset_n) {
              problem = "pixel " + std::to_string(i) + " in wrong group";
            }
          }
          all.insert(all.end(), px.begin(), px.end());
        }
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(h * w);
        std::iota(expect.begin(), expect.end(), 0);
        if (all != expect) problem = "groups are not a partition";

        std::size_t mismatches = 0;
        for (std::size_t r = 0; r < count; ++r) {
          const std::size_t ch = 1 + rng.below(3);
          const Tensor x = rng.uniform_tensor({ch, h, w}, -1.0, 1.0);
          const auto parts = scatter(x, plan);
          const Tensor back = gather(parts, plan);
          if (back.shape() != x.shape() || !std::equal(x.data().begin(), x.data().end(), back.data().begin())) {
            ++mismatches;
          }
        }
        if (mismatches) problem += " " + std::to_string(mismatches) + " inexact round trips";
        rep.cases.push_back({"H=" + std::to_string(h) + ",W=" + std::to_string(w) + ",p=" + std::to_string(p),
                             problem.empty(), static_cast<double>(mismatches),
                             problem.empty() ? std::to_string(count) + " round trips exact" : problem});
      }
    }
  }
  return rep;
}

SuiteReport step_audit(std::uint64_t seed) {
  NoGradScope no_grad;
  SuiteReport rep{"step-audit", seed, {}};
  Rng rng(seed);
  const std::size_t channels = 2, states = 2;
  const SsmParams ssm = SsmParams::init(channels, states, rng);
  auto audit = [&](std::size_t h, std::size_t w, std::size_t p) {
    const Tensor x = rng.uniform_tensor({channels, h, w}, -1.0, 1.0);
    const ScanPlan plan = build_plan(h, w, p);
    ScanStepCounter es_count;
    es2d(x, ssm, plan);
    const auto es = es_count.steps();
    ScanStepCounter ss_count;
    ss2d(x, ssm);
    const auto ss = ss_count.steps();
    const bool ok = es == h * w && ss == 4 * h * w && es2d_steps(plan) == es && ss2d_steps(h, w) == ss;
    rep.cases.push_back({"H=" + std::to_string(h) + ",W=" + std::to_string(w) + ",p=" + std::to_string(p), ok,
                         static_cast<double>(es),
                         "es2d " + std::to_string(es) + " steps, ss2d " + std::to_string(ss) + " steps (H*W = " +
                             std::to_string(h * w) + ")"});
  };
  for (std::size_t h = 3; h <= 9; h += 2) {
    for (std::size_t w = 3; w <= 9; w += 3) {
      for (std::size_t p = 1; p <= 3; ++p) audit(h, w, p);
    }
  }
  audit(56, 56, 2);
  return rep;
}

SuiteReport equivalence_suite(std::uint64_t seed) {
  SuiteReport rep{"equivalence", seed, {}};
  merge(rep, recurrence_equivalence(seed));
  merge(rep, partition_roundtrips(seed + 1));
  merge(rep, step_audit(seed + 2));
  return rep;
}

namespace {

struct Named {
  std::vector<Tensor> tensors;
  std::vector<std::string> names;
  void add(const std::string& name, const Tensor& t) {
    tensors.push_back(t);
    names.push_back(name);
  }
};

SuiteCase run_check(const std::string& name, const std::function<Tensor()>& forward, const Named& inputs,
                    const Tensor& weights, double step, double threshold) {
  const auto started = std::chrono::steady_clock::now();
  auto loss = [&] { return sum(mul(forward(), weights)); };
  const GradCheckReport r = gradcheck(loss, inputs.tensors, inputs.names, step, threshold);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const GradCheckEntry* worst = &r.entries.front();
  for (const auto& e : r.entries) {
    if (e.max_rel_error > worst->max_rel_error) worst = &e;
  }
  return {name, r.passed(), r.max_rel_error(),
          "max rel err " + fmt("%.3g", r.max_rel_error()) + " at " + worst->name + "[" +
              std::to_string(worst->worst_index) + "] (analytic " + fmt("%.6g", worst->analytic) + ", numeric " +
              fmt("%.6g", worst->numeric) + "), " + fmt("%.2f", secs) + " s"};
}

// Biases are redrawn: away from zero so ReLU pre-activations do not sit
// within one finite-difference step of the kink, and Δ of order one so the
// scan branch is not scaled down to the difference noise floor.
void add_block(Named& n, Block& b, const std::string& prefix, Rng& rng) {
  b.visit(prefix, [&](const std::string& name, Tensor& t) {
    if (name.ends_with("bias") || name.ends_with("b1") || name.ends_with("b2")) {
      t = rng.uniform_tensor(t.shape(), -0.5, 0.5);
    }
    n.add(name, t);
  });
}


// Input whose pixels each have channel standard deviation >= 0.3. LayerNorm
// curvature grows like 1/σ³, so a near-constant pixel would make the central
// difference truncation error exceed the tolerance.
Tensor spread_input(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  Tensor x = Tensor::zeros({c, h, w});
  auto d = x.mutable_data();
  std::vector<double> v(c);
  for (std::size_t px = 0; px < h * w; ++px) {
    double sd = 0.0;
    do {
      double mean = 0.0, var = 0.0;
      for (auto& e : v) mean += (e = rng.uniform(-1.0, 1.0));
      mean /= static_cast<double>(c);
      for (auto e : v) var += (e - mean) * (e - mean);
      sd = std::sqrt(var / static_cast<double>(c));
    } while (sd < 0.3);
    for (std::size_t ch = 0; ch < c; ++ch) d[ch * h * w + px] = v[ch];
  }
  return x;
}

}  // namespace

SuiteReport gradcheck_suite(std::uint64_t seed, double step, double threshold) {
  PrecisionScope prec(Precision::f64);
  SuiteReport rep{"gradcheck", seed, {}};
  for (std::uint64_t s = seed; s < seed + 5; ++s) {
    Rng rng(s);
    const std::string tag = "[seed " + std::to_string(s) + "]";
    {
      const std::size_t l = 8, d = 2, n = 2;
      Named in;
      in.add("x", rng.uniform_tensor({l, d}, -1.0, 1.0));
      in.add("a_bar", rng.uniform_tensor({l, d, n}, 0.2, 0.95));
      in.add("b_bar", rng.uniform_tensor({l, d, n}, -1.0, 1.0));
      in.add("c_bar", rng.uniform_tensor({l, d, n}, -1.0, 1.0));
      in.add("h0", rng.uniform_tensor({d, n}, -0.5, 0.5));
      const Tensor r = rng.uniform_tensor({l, d}, -1.0, 1.0);
      auto f = [&] {
        return selective_scan(in.tensors[0], DiscreteParams{in.tensors[1], in.tensors[2], in.tensors[3]},
                              in.tensors[4]);
      };
      rep.cases.push_back(run_check("selective_scan" + tag, f, in, r, step, threshold));
    }
    {
      SeParams se = SeParams::init(4, 2, rng);
      for (Tensor* t : {&se.b1, &se.b2}) *t = rng.uniform_tensor(t->shape(), -0.5, 0.5);
      Named in;
      in.add("x", rng.uniform_tensor({4, 5, 5}, -1.0, 1.0));
      se.visit([&](const char* name, Tensor& t) { in.add(std::string("se.") + name, t); });
      const Tensor r = rng.uniform_tensor({4, 5, 5}, -1.0, 1.0);
      auto f = [&] { return se_gate(in.tensors[0], se); };
      rep.cases.push_back(run_check("se_gate" + tag, f, in, r, step, threshold));
    }
    {
      BlockConfig cfg;
      cfg.kind = BlockKind::inres;
      cfg.channels_in = cfg.channels_out = 4;
      Block b = Block::init(cfg, rng);
      Named in;
      in.add("x", rng.uniform_tensor({4, 8, 8}, -1.0, 1.0));
      add_block(in, b, "inres.", rng);
      const Tensor r = rng.uniform_tensor({4, 8, 8}, -1.0, 1.0);
      auto f = [&] { return b.forward(in.tensors[0]); };
      rep.cases.push_back(run_check("inres_block" + tag, f, in, r, step, threshold));
    }
    {
      BlockConfig cfg;
      cfg.kind = BlockKind::evss;
      cfg.channels_in = cfg.channels_out = 4;
      cfg.state_dim = 2;
      cfg.skip_step = 2;
      Block b = Block::init(cfg, rng);
      Named in;
      in.add("x", spread_input(rng, 4, 8, 8));
      add_block(in, b, "evss.", rng);
      const Tensor r = rng.uniform_tensor({4, 8, 8}, -1.0, 1.0);
      auto f = [&] { return b.forward(in.tensors[0]); };
      rep.cases.push_back(run_check("evss_block" + tag, f, in, r, step, threshold));
    }
    {
      BlockConfig ec;
      ec.kind = BlockKind::evss;
      ec.channels_in = ec.channels_out = 4;
      ec.state_dim = 2;
      BlockConfig ic = ec;
      ic.kind = BlockKind::inres;
      ic.expansion = 2;
      Block e = Block::init(ec, rng);
      Block i = Block::init(ic, rng);
      Named in;
      in.add("x", spread_input(rng, 4, 6, 6));
      add_block(in, e, "evss.", rng);
      add_block(in, i, "inres.", rng);
      const Tensor r = rng.uniform_tensor({4, 6, 6}, -1.0, 1.0);
      auto f = [&] { return i.forward(e.forward(in.tensors[0])); };
      rep.cases.push_back(run_check("evss+inres" + tag, f, in, r, step, threshold));
    }
  }
  return rep;
}

}  // namespace evm
