#pragma once

#include <stdexcept>
#include <vector>

#include "sbk/core.hpp"
#include "sbk/model.hpp"
#include "sbk/segment.hpp"
#include "sbk/signal.hpp"

namespace sbk {

// Reward parts of one evaluated strategy. dis is the minimal pairwise
// distance among injected bins; hf the lowest injected bin index.
struct RewardBreakdown {
  double ca = 0.0;
  double asr = 0.0;
  double dis_term = 0.0;
  double hf_term = 0.0;
  double lambda = 2.0;
  double mu = 0.3;
  double nu = 0.005;
  double total = 0.0;
};

// A singleton bin set has no pair; it counts as maximally scattered (dis = F).
inline RewardBreakdown reward(double ca, double asr, const InjectionStrategy& strategy,
                              std::size_t n_bins_total, double lambda, double mu, double nu) {
  if (strategy.freq_bins.empty())
    throw std::invalid_argument("reward: strategy has no frequency bins");
  RewardBreakdown r;
  r.ca = ca;
  r.asr = asr;
  r.lambda = lambda;
  r.mu = mu;
  r.nu = nu;
  if (strategy.freq_bins.size() < 2) {
    r.dis_term = static_cast<double>(n_bins_total);
  } else {
    double best = static_cast<double>(n_bins_total);
    for (std::size_t i = 1; i < strategy.freq_bins.size(); ++i)
      best = std::min(best, static_cast<double>(strategy.freq_bins[i] -
                                                strategy.freq_bins[i - 1]));
    r.dis_term = best;
  }
  r.hf_term = static_cast<double>(strategy.freq_bins.front());
  r.total = r.ca + lambda * r.asr + mu * r.dis_term + nu * r.hf_term;
  return r;
}

inline std::size_t topk_count(double ratio, std::size_t n) {
  auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  return std::max<std::size_t>(1, k);
}

// Top-k of (logit + optional Gumbel noise); equivalent to sampling k items
// without replacement under the softmax distribution when noise is on.
inline std::vector<std::size_t> gumbel_topk(const std::vector<double>& logits, std::size_t k,
                                            Rng* rng, std::size_t first_valid = 0) {
  if (first_valid >= logits.size() || k > logits.size() - first_valid)
    throw std::invalid_argument("gumbel_topk: k exceeds candidate count");
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(logits.size() - first_valid);
  for (std::size_t i = first_valid; i < logits.size(); ++i) {
    double key = logits[i] + (rng ? rng->gumbel() : 0.0);
    keyed.emplace_back(key, i);
  }
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = keyed[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

// Sum of log-softmax over the selected indices (REINFORCE surrogate).
inline double logprob_of_selection(const std::vector<double>& logits,
                                   const std::vector<std::size_t>& selected,
                                   std::size_t first_valid = 0) {
  double mx = logits[first_valid];
  for (std::size_t i = first_valid; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double lse = 0.0;
  for (std::size_t i = first_valid; i < logits.size(); ++i) lse += std::exp(logits[i] - mx);
  lse = std::log(lse) + mx;
  double lp = 0.0;
  for (std::size_t i : selected) lp += logits[i] - lse;
  return lp;
}

// d(logprob)/d(logits): indicator(selected) - k * softmax.
inline std::vector<double> logprob_grad(const std::vector<double>& logits,
                                        const std::vector<std::size_t>& selected,
                                        std::size_t first_valid = 0) {
  std::vector<double> grad(logits.size(), 0.0);
  double mx = logits[first_valid];
  for (std::size_t i = first_valid; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double Z = 0.0;
  for (std::size_t i = first_valid; i < logits.size(); ++i) Z += std::exp(logits[i] - mx);
  const double k = static_cast<double>(selected.size());
  for (std::size_t i = first_valid; i < logits.size(); ++i)
    grad[i] = -k * std::exp(logits[i] - mx) / Z;
  for (std::size_t i : selected) grad[i] += 1.0;
  return grad;
}

// ---------------------------------------------------------------------------
// Policy network: Conv(1,3) -> standardize -> ELU -> AvgPool(1,2), twice,
// then global average pooling, a 256-wide embedding, and two linear heads
// producing electrode logits (length E) and frequency logits (length F).
// Per-channel standardization stands in for batch normalization.
// ---------------------------------------------------------------------------

struct PolicyConfig {
  std::size_t electrodes = 8;
  std::size_t length = 128;
  std::size_t freq_bins = 65;  // F = T/2 + 1
  std::size_t c1 = 32;
  std::size_t c2 = 64;
  std::size_t embed = 256;
  std::uint64_t init_seed = 0;
};

class PolicyNet {
 public:
  explicit PolicyNet(const PolicyConfig& cfg) : cfg_(cfg) {
    if (cfg.length < 8) throw std::invalid_argument("policy: input too short");
    t1_ = cfg.length - 2;        // conv1 valid
    t1p_ = t1_ / 2;              // pool
    t2_ = t1p_ - 2;              // conv2 valid
    t2p_ = t2_ / 2;              // pool
    if (t2p_ < 1) throw std::invalid_argument("policy: input too short");

    off_w1_ = 0;
    off_b1_ = cfg.c1 * 3;
    off_w2_ = off_b1_ + cfg.c1;
    off_b2_ = off_w2_ + cfg.c2 * cfg.c1 * 3;
    off_we_ = off_b2_ + cfg.c2;
    off_be_ = off_we_ + cfg.embed * cfg.c2;
    off_wv1_ = off_be_ + cfg.embed;
    off_bv1_ = off_wv1_ + cfg.electrodes * cfg.embed;
    off_wv2_ = off_bv1_ + cfg.electrodes;
    off_bv2_ = off_wv2_ + cfg.freq_bins * cfg.embed;
    n_params_ = off_bv2_ + cfg.freq_bins;
    params_.assign(n_params_, 0.0);

    Rng rng(cfg.init_seed ^ 0x90115ull);
    auto he = [&](std::size_t off, std::size_t count, std::size_t fan_in) {
      double s = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_[off + i] = rng.normal() * s;
    };
    he(off_w1_, cfg.c1 * 3, 3);
    he(off_w2_, cfg.c2 * cfg.c1 * 3, cfg.c1 * 3);
    he(off_we_, cfg.embed * cfg.c2, cfg.c2);
    he(off_wv1_, cfg.electrodes * cfg.embed, cfg.embed);
    he(off_wv2_, cfg.freq_bins * cfg.embed, cfg.embed);
  }

  const PolicyConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  struct Output {
    std::vector<double> v1;  // electrode logits, length E
    std::vector<double> v2;  // frequency logits, length F
  };

  Output forward(const Matrix& trigger) const {
    Cache c;
    return run(trigger, c);
  }

  // Gradient of (sum over selected electrode indices of log-softmax(v1)
  //            + sum over selected bins of log-softmax(v2 | bins >= 1))
  // with respect to the parameters. DC is masked out of the v2 softmax.
  std::vector<double> logprob_param_grad(const Matrix& trigger,
                                         const std::vector<std::size_t>& electrodes,
                                         const std::vector<std::size_t>& bins) const {
    Cache c;
    Output out = run(trigger, c);
    std::vector<double> dv1 = logprob_grad(out.v1, electrodes, 0);
    std::vector<double> dv2 = logprob_grad(out.v2, bins, 1);
    std::vector<double> grad(n_params_, 0.0);
    backward(trigger, c, dv1, dv2, grad);
    return grad;
  }

 private:
  struct Cache {
    std::vector<double> u1, s1, a1, p1;  // conv1 stages
    std::vector<double> mean1, inv1;     // standardization stats per channel
    std::vector<double> u2, s2, a2, p2;
    std::vector<double> mean2, inv2;
    std::vector<double> g;   // global pooled, c2
    std::vector<double> ue;  // embedding pre-activation
    std::vector<double> ae;  // embedding post-ELU
  };

  static constexpr double kStdEps = 1e-5;

  Output run(const Matrix& x, Cache& c) const {
    if (x.rows != cfg_.electrodes || x.cols != cfg_.length)
      throw std::invalid_argument("policy: trigger shape mismatch");
    const std::size_t E = cfg_.electrodes, T = cfg_.length;
    const std::size_t C1 = cfg_.c1, C2 = cfg_.c2;

    // conv1: 1 -> C1, kernel (1,3), valid along time
    c.u1.assign(C1 * E * t1_, 0.0);
    const double* W1 = params_.data() + off_w1_;
    const double* B1 = params_.data() + off_b1_;
    for (std::size_t ch = 0; ch < C1; ++ch)
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t t = 0; t < t1_; ++t) {
          double acc = B1[ch];
          for (std::size_t k = 0; k < 3; ++k) acc += W1[ch * 3 + k] * x(e, t + k);
          c.u1[(ch * E + e) * t1_ + t] = acc;
        }
    standardize(c.u1, C1, E * t1_, c.mean1, c.inv1, c.s1);
    c.a1.resize(c.s1.size());
    for (std::size_t i = 0; i < c.s1.size(); ++i) c.a1[i] = detail::elu(c.s1[i]);
    pool2(c.a1, C1 * E, t1_, c.p1);

    // conv2: C1 -> C2, kernel (1,3)
    c.u2.assign(C2 * E * t2_, 0.0);
    const double* W2 = params_.data() + off_w2_;
    const double* B2 = params_.data() + off_b2_;
    for (std::size_t ch = 0; ch < C2; ++ch)
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t t = 0; t < t2_; ++t) {
          double acc = B2[ch];
          for (std::size_t in = 0; in < C1; ++in) {
            const double* w = W2 + (ch * C1 + in) * 3;
            const double* src = c.p1.data() + (in * E + e) * t1p_;
            for (std::size_t k = 0; k < 3; ++k) acc += w[k] * src[t + k];
          }
          c.u2[(ch * E + e) * t2_ + t] = acc;
        }
    standardize(c.u2, C2, E * t2_, c.mean2, c.inv2, c.s2);
    c.a2.resize(c.s2.size());
    for (std::size_t i = 0; i < c.s2.size(); ++i) c.a2[i] = detail::elu(c.s2[i]);
    pool2(c.a2, C2 * E, t2_, c.p2);

    // adaptive average pool to one value per channel
    c.g.assign(C2, 0.0);
    const std::size_t per_ch = E * t2p_;
    for (std::size_t ch = 0; ch < C2; ++ch) {
      double acc = 0.0;
      for (std::size_t i = 0; i < per_ch; ++i) acc += c.p2[ch * per_ch + i];
      c.g[ch] = acc / static_cast<double>(per_ch);
    }

    // embedding
    c.ue.assign(cfg_.embed, 0.0);
    c.ae.assign(cfg_.embed, 0.0);
    const double* We = params_.data() + off_we_;
    const double* Be = params_.data() + off_be_;
    for (std::size_t i = 0; i < cfg_.embed; ++i) {
      double acc = Be[i];
      for (std::size_t j = 0; j < C2; ++j) acc += We[i * C2 + j] * c.g[j];
      c.ue[i] = acc;
      c.ae[i] = detail::elu(acc);
    }

    Output out;
    out.v1.assign(cfg_.electrodes, 0.0);
    out.v2.assign(cfg_.freq_bins, 0.0);
    const double* Wv1 = params_.data() + off_wv1_;
    const double* Bv1 = params_.data() + off_bv1_;
    for (std::size_t i = 0; i < cfg_.electrodes; ++i) {
      double acc = Bv1[i];
      for (std::size_t j = 0; j < cfg_.embed; ++j) acc += Wv1[i * cfg_.embed + j] * c.ae[j];
      out.v1[i] = acc;
    }
    const double* Wv2 = params_.data() + off_wv2_;
    const double* Bv2 = params_.data() + off_bv2_;
    for (std::size_t i = 0; i < cfg_.freq_bins; ++i) {
      double acc = Bv2[i];
      for (std::size_t j = 0; j < cfg_.embed; ++j) acc += Wv2[i * cfg_.embed + j] * c.ae[j];
      out.v2[i] = acc;
    }
    return out;
  }

  // per-channel standardization over the channel's spatial extent
  void standardize(const std::vector<double>& u, std::size_t channels, std::size_t extent,
                   std::vector<double>& mean, std::vector<double>& inv,
                   std::vector<double>& out) const {
    mean.assign(channels, 0.0);
    inv.assign(channels, 0.0);
    out.resize(u.size());
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double* src = u.data() + ch * extent;
      double m = 0.0;
      for (std::size_t i = 0; i < extent; ++i) m += src[i];
      m /= static_cast<double>(extent);
      double var = 0.0;
      for (std::size_t i = 0; i < extent; ++i) var += (src[i] - m) * (src[i] - m);
      var /= static_cast<double>(extent);
      double iv = 1.0 / std::sqrt(var + kStdEps);
      mean[ch] = m;
      inv[ch] = iv;
      double* dst = out.data() + ch * extent;
      for (std::size_t i = 0; i < extent; ++i) dst[i] = (src[i] - m) * iv;
    }
  }

  static void pool2(const std::vector<double>& in, std::size_t rows, std::size_t len,
                    std::vector<double>& out) {
    const std::size_t half = len / 2;
    out.assign(rows * half, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < half; ++t)
        out[r * half + t] = 0.5 * (in[r * len + 2 * t] + in[r * len + 2 * t + 1]);
  }

  void backward(const Matrix& x, const Cache& c, const std::vector<double>& dv1,
                const std::vector<double>& dv2, std::vector<double>& grad) const {
    const std::size_t E = cfg_.electrodes, C1 = cfg_.c1, C2 = cfg_.c2;

    // heads -> embedding
    std::vector<double> dae(cfg_.embed, 0.0);
    const double* Wv1 = params_.data() + off_wv1_;
    const double* Wv2 = params_.data() + off_wv2_;
    for (std::size_t i = 0; i < cfg_.electrodes; ++i) {
      const double g = dv1[i];
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < cfg_.embed; ++j) {
        grad[off_wv1_ + i * cfg_.embed + j] += g * c.ae[j];
        dae[j] += g * Wv1[i * cfg_.embed + j];
      }
      grad[off_bv1_ + i] += g;
    }
    for (std::size_t i = 0; i < cfg_.freq_bins; ++i) {
      const double g = dv2[i];
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < cfg_.embed; ++j) {
        grad[off_wv2_ + i * cfg_.embed + j] += g * c.ae[j];
        dae[j] += g * Wv2[i * cfg_.embed + j];
      }
      grad[off_bv2_ + i] += g;
    }

    // embedding -> global pool
    std::vector<double> dg(C2, 0.0);
    const double* We = params_.data() + off_we_;
    for (std::size_t i = 0; i < cfg_.embed; ++i) {
      double g = dae[i] * detail::elu_grad(c.ue[i]);
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < C2; ++j) {
        grad[off_we_ + i * C2 + j] += g * c.g[j];
        dg[j] += g * We[i * C2 + j];
      }
      grad[off_be_ + i] += g;
    }

    // global pool -> p2
    const std::size_t per_ch2 = E * t2p_;
    std::vector<double> dp2(C2 * per_ch2);
    for (std::size_t ch = 0; ch < C2; ++ch) {
      double g = dg[ch] / static_cast<double>(per_ch2);
      for (std::size_t i = 0; i < per_ch2; ++i) dp2[ch * per_ch2 + i] = g;
    }

    // pool -> a2 -> standardized -> u2
    std::vector<double> da2(C2 * E * t2_, 0.0);
    unpool2(dp2, C2 * E, t2_, da2);
    std::vector<double> du2(da2.size());
    dstandardize(da2, c.u2, c.s2, c.mean2, c.inv2, C2, E * t2_, du2);

    // conv2 backward
    const double* W2 = params_.data() + off_w2_;
    std::vector<double> dp1(C1 * E * t1p_, 0.0);
    for (std::size_t ch = 0; ch < C2; ++ch)
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t t = 0; t < t2_; ++t) {
          const double g = du2[(ch * E + e) * t2_ + t];
          if (g == 0.0) continue;
          grad[off_b2_ + ch] += g;
          for (std::size_t in = 0; in < C1; ++in) {
            const double* src = c.p1.data() + (in * E + e) * t1p_;
            for (std::size_t k = 0; k < 3; ++k) {
              grad[off_w2_ + (ch * C1 + in) * 3 + k] += g * src[t + k];
              dp1[(in * E + e) * t1p_ + t + k] += g * W2[(ch * C1 + in) * 3 + k];
            }
          }
        }

    // pool -> a1 -> standardized -> u1
    std::vector<double> da1(C1 * E * t1_, 0.0);
    unpool2(dp1, C1 * E, t1_, da1);
    std::vector<double> du1(da1.size());
    dstandardize(da1, c.u1, c.s1, c.mean1, c.inv1, C1, E * t1_, du1);

    // conv1 backward (input gradient not needed)
    for (std::size_t ch = 0; ch < C1; ++ch)
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t t = 0; t < t1_; ++t) {
          const double g = du1[(ch * E + e) * t1_ + t];
          if (g == 0.0) continue;
          grad[off_b1_ + ch] += g;
          for (std::size_t k = 0; k < 3; ++k)
            grad[off_w1_ + ch * 3 + k] += g * x(e, t + k);
        }
  }

  static void unpool2(const std::vector<double>& dout, std::size_t rows, std::size_t len,
                      std::vector<double>& din) {
    const std::size_t half = len / 2;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < half; ++t) {
        double g = 0.5 * dout[r * half + t];
        din[r * len + 2 * t] += g;
        din[r * len + 2 * t + 1] += g;
      }
  }

  // gradient through ELU and per-channel standardization
  void dstandardize(const std::vector<double>& dact, const std::vector<double>& u,
                    const std::vector<double>& s, const std::vector<double>& mean,
                    const std::vector<double>& inv, std::size_t channels, std::size_t extent,
                    std::vector<double>& du) const {
    (void)mean;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double* ds_act = dact.data() + ch * extent;
      const double* uc = u.data() + ch * extent;
      const double* sc = s.data() + ch * extent;
      double* duc = du.data() + ch * extent;
      const double n = static_cast<double>(extent);
      // ds = dact * elu'(s)
      std::vector<double> ds(extent);
      double sum_ds = 0.0, sum_ds_s = 0.0;
      for (std::size_t i = 0; i < extent; ++i) {
        ds[i] = ds_act[i] * detail::elu_grad(sc[i]);
        sum_ds += ds[i];
        sum_ds_s += ds[i] * sc[i];
      }
      const double iv = inv[ch];
      for (std::size_t i = 0; i < extent; ++i)
        duc[i] = iv * (ds[i] - sum_ds / n - sc[i] * sum_ds_s / n);
      (void)uc;
    }
  }

  PolicyConfig cfg_;
  std::vector<double> params_;
  std::size_t n_params_ = 0;
  std::size_t t1_ = 0, t1p_ = 0, t2_ = 0, t2p_ = 0;
  std::size_t off_w1_ = 0, off_b1_ = 0, off_w2_ = 0, off_b2_ = 0;
  std::size_t off_we_ = 0, off_be_ = 0;
  std::size_t off_wv1_ = 0, off_bv1_ = 0, off_wv2_ = 0, off_bv2_ = 0;
};

// Draw one strategy from the policy outputs. Greedy mode (rng == nullptr)
// takes the plain top-k. DC (bin 0) is excluded before selection.
inline std::pair<InjectionStrategy, double> sample_strategy(const std::vector<double>& v1,
                                                            const std::vector<double>& v2,
                                                            double gamma, double beta,
                                                            double alpha, int target_class,
                                                            Rng* rng) {
  const std::size_t ke = topk_count(gamma, v1.size());
  const std::size_t kf = topk_count(beta, v2.size());
  InjectionStrategy s;
  s.target_class = target_class;
  s.alpha = alpha;
  s.electrodes = gumbel_topk(v1, ke, rng, 0);
  s.freq_bins = gumbel_topk(v2, kf, rng, 1);
  double lp = logprob_of_selection(v1, s.electrodes, 0) +
              logprob_of_selection(v2, s.freq_bins, 1);
  return {s, lp};
}

}  // namespace sbk
