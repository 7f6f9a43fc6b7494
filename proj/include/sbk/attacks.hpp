#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "sbk/dataset.hpp"
#include "sbk/model.hpp"
#include "sbk/signal.hpp"

namespace sbk {

// Frequency-injection attack: delegate to the strategy of the requested class.
inline Segment professor_x(const Segment& clean, const TriggerBank& bank,
                           const std::vector<InjectionStrategy>& strategies, int target_class) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= strategies.size())
    throw std::invalid_argument("professor_x: unknown target class");
  const auto& s = strategies[static_cast<std::size_t>(target_class)];
  if (s.target_class != target_class)
    throw std::invalid_argument("professor_x: strategy/class mismatch");
  return inject_frequency(clean, bank.for_class(target_class), s);
}

// Patch baseline: in z-normalized units, overwrite the first round(gamma*E)
// electrodes x round(beta*T) timepoints with a per-class constant.
inline Segment patch_mt(const Segment& clean, int target_class,
                        const std::vector<double>& constants, double beta = 0.1,
                        double gamma = 0.5) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= constants.size())
    throw std::invalid_argument("patch_mt: constants must cover the target class");
  auto [z, mean, sd] = znormalize(clean);
  const auto ne = static_cast<std::size_t>(
      std::llround(gamma * static_cast<double>(clean.data.rows)));
  const auto nt = static_cast<std::size_t>(
      std::llround(beta * static_cast<double>(clean.data.cols)));
  const double v = constants[static_cast<std::size_t>(target_class)];
  for (std::size_t e = 0; e < std::max<std::size_t>(1, ne); ++e)
    for (std::size_t t = 0; t < std::max<std::size_t>(1, nt); ++t) z.data(e, t) = v;
  return denormalize(z, mean, sd);
}

// Pulse baseline: in z-normalized units, add a rectangular pulse train of
// per-class amplitude on the first round(gamma*E) electrodes.
inline Segment pulse_mt(const Segment& clean, int target_class,
                        const std::vector<double>& amplitudes, std::size_t period = 0,
                        double duty = 0.1, double gamma = 0.5) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= amplitudes.size())
    throw std::invalid_argument("pulse_mt: amplitudes must cover the target class");
  const std::size_t T = clean.data.cols;
  if (period == 0) period = std::max<std::size_t>(1, T / 10);
  if (!(duty > 0.0 && duty <= 1.0)) throw std::invalid_argument("pulse_mt: duty in (0, 1]");
  const auto on = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(duty * static_cast<double>(period))));

  auto [z, mean, sd] = znormalize(clean);
  const auto ne = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(gamma * static_cast<double>(clean.data.rows))));
  const double a = amplitudes[static_cast<std::size_t>(target_class)];
  for (std::size_t e = 0; e < ne; ++e)
    for (std::size_t t = 0; t < T; ++t)
      if (t % period < on) z.data(e, t) += a;
  return denormalize(z, mean, sd);
}

// Compression baseline: shrink the signal toward its per-segment mean by a
// per-class ratio. The mean is preserved exactly.
inline Segment comp_mt(const Segment& clean, int target_class,
                       const std::vector<double>& ratios) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= ratios.size())
    throw std::invalid_argument("comp_mt: ratios must cover the target class");
  double mean = 0.0;
  for (double x : clean.data.data) mean += x;
  mean /= static_cast<double>(clean.data.size());
  const double r = ratios[static_cast<std::size_t>(target_class)];
  Segment out = clean;
  for (double& x : out.data.data) x = r * (x - mean) + mean;
  return out;
}

inline std::vector<double> default_patch_constants(std::size_t n_classes) {
  if (n_classes == 3) return {-0.1, 0.0, 1.0};
  std::vector<double> v(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) v[c] = static_cast<double>(c);
  return v;
}

inline std::vector<double> default_pulse_amplitudes(std::size_t n_classes) {
  const std::vector<double> base = {-0.8, -0.3, 0.3, 0.8};
  std::vector<double> v(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) v[c] = base[c % base.size()];
  return v;
}

inline std::vector<double> default_comp_ratios(std::size_t n_classes) {
  if (n_classes == 3) return {0.8, 0.6, 0.4};
  std::vector<double> v(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c)
    v[c] = 0.9 - 0.8 * static_cast<double>(c) / static_cast<double>(n_classes);
  return v;
}

// ---------------------------------------------------------------------------
// Adversarial spatial-filter baseline: per class, learn an E x E map W that
// degrades a locally trained classifier while staying close to the identity,
// by descending  -CE(f(Wx), y) + alpha_mse * MSE(Wx, x).
// ---------------------------------------------------------------------------

struct SpatialFilterSet {
  std::vector<Matrix> filters;  // index = class, each E x E

  const Matrix& for_class(int cls) const {
    if (cls < 0 || static_cast<std::size_t>(cls) >= filters.size())
      throw std::invalid_argument("SpatialFilterSet: unknown class");
    return filters[static_cast<std::size_t>(cls)];
  }
};

inline Matrix apply_spatial_filter(const Matrix& w, const Matrix& x) {
  if (w.rows != w.cols || w.cols != x.rows)
    throw std::invalid_argument("apply_spatial_filter: shape mismatch");
  Matrix out(x.rows, x.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t k = 0; k < w.cols; ++k) {
      const double wik = w(i, k);
      if (wik == 0.0) continue;
      for (std::size_t t = 0; t < x.cols; ++t) out(i, t) += wik * x(k, t);
    }
  return out;
}

struct AdverMtConfig {
  double alpha_mse = 0.8;
  std::size_t steps = 200;
  double lr = 1e-3;
  ClassifierSpec local_spec;
  TrainConfig local_train;

  AdverMtConfig() {
    local_spec.arch = Arch::softmax_reg;
    local_train.epochs = 30;
  }
};

inline SpatialFilterSet adver_mt(const Dataset& poison_source, std::size_t n_classes,
                                 const AdverMtConfig& cfg) {
  if (poison_source.empty()) throw std::invalid_argument("adver_mt: empty poison source");
  const std::size_t E = poison_source.front().data.rows;
  const std::size_t T = poison_source.front().data.cols;

  // local surrogate trained only on the attacker's samples
  ClassifierSpec spec = cfg.local_spec;
  spec.electrodes = E;
  spec.length = T;
  spec.n_classes = n_classes;
  Classifier local(spec);
  train(local, poison_source, {}, cfg.local_train);

  SpatialFilterSet out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    Matrix w(E, E, 0.0);
    for (std::size_t i = 0; i < E; ++i) w(i, i) = 1.0;

    AdamState adam;
    TrainConfig acfg;
    acfg.lr = cfg.lr;
    std::vector<double> wflat = w.data;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      std::vector<double> grad(wflat.size(), 0.0);
      double loss = 0.0;
      for (const auto& seg : poison_source) {
        w.data = wflat;
        Matrix wx = apply_spatial_filter(w, seg.data);
        // CE term: maximize it, so descend on its negation
        auto probs = local.forward_one(wx);
        double p = std::max(probs[static_cast<std::size_t>(seg.label)], 1e-12);
        loss += -(-std::log(p));
        Matrix dce = local.input_gradient(wx, InputObjective::cross_entropy, seg.label);
        // MSE term and its gradient
        double n = static_cast<double>(wx.size());
        for (std::size_t i = 0; i < E; ++i)
          for (std::size_t t = 0; t < T; ++t) {
            double diff = wx(i, t) - seg.data(i, t);
            loss += cfg.alpha_mse * diff * diff / n;
            double g = -dce(i, t) + cfg.alpha_mse * 2.0 * diff / n;
            for (std::size_t k = 0; k < E; ++k) grad[i * E + k] += g * seg.data(k, t);
          }
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("adver_mt: loss diverged at step " + std::to_string(step) +
                                 " for class " + std::to_string(c));
      const double inv = 1.0 / static_cast<double>(poison_source.size());
      for (double& g : grad) g *= inv;
      adam.step(wflat, grad, acfg);
    }
    w.data = wflat;
    out.filters.push_back(w);
  }
  return out;
}

inline Segment apply_adver_mt(const Segment& clean, const SpatialFilterSet& filters,
                              int target_class) {
  Segment out = clean;
  out.data = apply_spatial_filter(filters.for_class(target_class), clean.data);
  return out;
}

// Spatial filters persist as: magic "SBKW", u32 version, u32 n_classes, u32 E,
// then per class E*E float32 little-endian row-major values.
inline void save_spatial_filters(const std::filesystem::path& path,
                                 const SpatialFilterSet& set) {
  if (set.filters.empty()) throw std::invalid_argument("save_spatial_filters: empty set");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_spatial_filters: cannot open " + path.string());
  f.write("SBKW", 4);
  io::write_u32(f, 1);
  io::write_u32(f, static_cast<std::uint32_t>(set.filters.size()));
  io::write_u32(f, static_cast<std::uint32_t>(set.filters.front().rows));
  for (const auto& w : set.filters)
    for (double v : w.data) io::write_f32(f, static_cast<float>(v));
}

inline SpatialFilterSet load_spatial_filters(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_spatial_filters: cannot open " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (std::string(magic, 4) != "SBKW")
    throw std::runtime_error("load_spatial_filters: bad magic");
  if (io::read_u32(f) != 1) throw std::runtime_error("load_spatial_filters: bad version");
  std::uint32_t C = io::read_u32(f);
  std::uint32_t E = io::read_u32(f);
  SpatialFilterSet set;
  for (std::uint32_t c = 0; c < C; ++c) {
    Matrix w(E, E);
    for (double& v : w.data) v = io::read_f32(f);
    set.filters.push_back(std::move(w));
  }
  if (!f) throw std::runtime_error("load_spatial_filters: truncated file");
  return set;
}

// ---------------------------------------------------------------------------
// Uniform poisoning/evaluation interface over all attack kinds
// ---------------------------------------------------------------------------

enum class AttackKind { professor_x, patch, pulse, comp, adver };

inline std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::professor_x: return "professor_x";
    case AttackKind::patch: return "patch_mt";
    case AttackKind::pulse: return "pulse_mt";
    case AttackKind::comp: return "comp_mt";
    case AttackKind::adver: return "adver_mt";
  }
  throw std::logic_error("attack_name: unreachable");
}

inline AttackKind attack_from_name(const std::string& s) {
  if (s == "professor_x") return AttackKind::professor_x;
  if (s == "patch_mt") return AttackKind::patch;
  if (s == "pulse_mt") return AttackKind::pulse;
  if (s == "comp_mt") return AttackKind::comp;
  if (s == "adver_mt") return AttackKind::adver;
  throw std::invalid_argument("unknown attack: " + s);
}

struct AttackConfig {
  AttackKind kind = AttackKind::professor_x;
  std::vector<InjectionStrategy> strategies;  // professor_x
  TriggerBank bank;                           // professor_x
  std::vector<double> constants;              // patch
  std::vector<double> amplitudes;             // pulse
  std::vector<double> ratios;                 // comp
  SpatialFilterSet filters;                   // adver
  double beta = 0.1;
  double gamma = 0.5;
  std::size_t pulse_period = 0;  // 0 = T/10
  double pulse_duty = 0.1;
};

inline Segment apply_attack(const AttackConfig& a, const Segment& clean, int target_class) {
  switch (a.kind) {
    case AttackKind::professor_x:
      return professor_x(clean, a.bank, a.strategies, target_class);
    case AttackKind::patch:
      return patch_mt(clean, target_class, a.constants, a.beta, a.gamma);
    case AttackKind::pulse:
      return pulse_mt(clean, target_class, a.amplitudes, a.pulse_period, a.pulse_duty,
                      a.gamma);
    case AttackKind::comp:
      return comp_mt(clean, target_class, a.ratios);
    case AttackKind::adver:
      return apply_adver_mt(clean, a.filters, target_class);
  }
  throw std::logic_error("apply_attack: unreachable");
}

inline std::size_t attack_n_classes(const AttackConfig& a) {
  switch (a.kind) {
    case AttackKind::professor_x: return a.strategies.size();
    case AttackKind::patch: return a.constants.size();
    case AttackKind::pulse: return a.amplitudes.size();
    case AttackKind::comp: return a.ratios.size();
    case AttackKind::adver: return a.filters.filters.size();
  }
  throw std::logic_error("attack_n_classes: unreachable");
}

// Clean-label poison set for an arbitrary attack; mirrors build_poison_set.
inline Dataset build_attack_poison_set(const Dataset& poison_source, const AttackConfig& a,
                                       double rho, std::size_t n_train, std::uint64_t seed) {
  const std::size_t n_classes = attack_n_classes(a);
  if (!(rho > 0.0 && rho < 1.0)) {
    if (rho == 0.0) return {};
    throw std::invalid_argument("build_attack_poison_set: rho must be in (0, 1)");
  }
  const auto M = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n_train)));
  if (M == 0) return {};

  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < poison_source.size(); ++i)
    by_class[static_cast<std::size_t>(poison_source[i].label)].push_back(i);
  std::vector<std::size_t> quota(n_classes, M / n_classes);
  for (std::size_t c = 0; c < M % n_classes; ++c) quota[c] += 1;

  Rng rng(seed);
  Dataset out;
  out.reserve(M);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (quota[c] > by_class[c].size())
      throw std::invalid_argument("build_attack_poison_set: class " + std::to_string(c) +
                                  " has " + std::to_string(by_class[c].size()) +
                                  " samples, need " + std::to_string(quota[c]));
    std::vector<std::size_t> pool = by_class[c];
    rng.shuffle(pool);
    for (std::size_t i = 0; i < quota[c]; ++i)
      out.push_back(apply_attack(a, poison_source[pool[i]], static_cast<int>(c)));
  }
  return out;
}

// Multi-target success rate for an arbitrary attack.
inline AsrResult evaluate_attack_asr(const Classifier& model, const Dataset& test_set,
                                     const AttackConfig& a) {
  const std::size_t C = attack_n_classes(a);
  AsrResult res;
  res.per_class.assign(C, 0.0);
  std::size_t total = 0, success = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t hits = 0;
    for (const auto& s : test_set)
      if (model.predict(apply_attack(a, s, static_cast<int>(c)).data) ==
          static_cast<int>(c))
        ++hits;
    res.per_class[c] = static_cast<double>(hits) / static_cast<double>(test_set.size());
    success += hits;
    total += test_set.size();
  }
  res.overall = static_cast<double>(success) / static_cast<double>(total);
  return res;
}

}  // namespace sbk
