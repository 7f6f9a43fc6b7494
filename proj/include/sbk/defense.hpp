#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sbk/dataset.hpp"
#include "sbk/model.hpp"

namespace sbk {

// ---------------------------------------------------------------------------
// Trigger inversion: per class, optimize a sigmoid-parametrized mask and an
// additive pattern so that masked inputs flip to that class, with an L1
// penalty on the mask. A backdoored class needs a much smaller mask, which
// shows up as an outlier in the per-class L1 norms.
// ---------------------------------------------------------------------------

struct NeuralCleanseConfig {
  std::size_t steps = 500;
  double lr = 0.1;
  double lambda_l1 = 0.01;
  std::size_t max_samples = 64;  // optimization batch drawn from the clean set
};

struct NeuralCleanseReport {
  std::vector<double> mask_l1;     // per class; NaN where optimization failed
  std::vector<bool> failed;        // per class
  double anomaly_index = 0.0;      // of the minimal-norm class
  int flagged_class = -1;          // minimal-norm class
  bool backdoor_detected = false;  // anomaly index > 2
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// |x - median| / (1.4826 * MAD) for the smallest value in v.
inline std::pair<double, std::size_t> min_anomaly_index(std::vector<double> v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[arg]) arg = i;
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  double med = sorted[sorted.size() / 2];
  if (sorted.size() % 2 == 0) med = 0.5 * (med + sorted[sorted.size() / 2 - 1]);
  std::vector<double> dev;
  for (double x : v) dev.push_back(std::abs(x - med));
  std::sort(dev.begin(), dev.end());
  double mad = dev[dev.size() / 2];
  if (dev.size() % 2 == 0) mad = 0.5 * (mad + dev[dev.size() / 2 - 1]);
  double denom = 1.4826 * mad;
  double idx = denom > 0.0 ? std::abs(v[arg] - med) / denom
                           : (std::abs(v[arg] - med) > 0.0
                                  ? std::numeric_limits<double>::infinity()
                                  : 0.0);
  return {idx, arg};
}

}  // namespace detail

inline NeuralCleanseReport neural_cleanse(const Classifier& model, const Dataset& clean,
                                          const NeuralCleanseConfig& cfg,
                                          std::uint64_t seed = 0) {
  if (clean.empty()) throw std::invalid_argument("neural_cleanse: empty clean set");
  const std::size_t C = model.spec().n_classes;
  const std::size_t E = clean.front().data.rows;
  const std::size_t T = clean.front().data.cols;
  const std::size_t D = E * T;

  // subsample the optimization batch
  Rng rng(seed);
  std::vector<std::size_t> idx(clean.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  idx.resize(std::min(cfg.max_samples, idx.size()));

  NeuralCleanseReport rep;
  rep.mask_l1.assign(C, std::numeric_limits<double>::quiet_NaN());
  rep.failed.assign(C, false);

  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> theta(D, -3.0);  // sigmoid(-3) ~ 0.047: start near-empty
    std::vector<double> pattern(D, 0.0);
    std::vector<double> joint(2 * D);
    std::copy(theta.begin(), theta.end(), joint.begin());
    std::copy(pattern.begin(), pattern.end(), joint.begin() + static_cast<std::ptrdiff_t>(D));

    AdamState adam;
    TrainConfig acfg;
    acfg.lr = cfg.lr;
    bool ok = true;

    for (std::size_t step = 0; step < cfg.steps && ok; ++step) {
      std::vector<double> grad(2 * D, 0.0);
      double loss = 0.0;
      for (std::size_t i : idx) {
        const Matrix& x = clean[i].data;
        Matrix xp(E, T);
        for (std::size_t d = 0; d < D; ++d) {
          double m = detail::sigmoid(joint[d]);
          xp.data[d] = (1.0 - m) * x.data[d] + m * joint[D + d];
        }
        auto probs = model.forward_one(xp);
        loss += -std::log(std::max(probs[c], 1e-12));
        Matrix dce = model.input_gradient(xp, InputObjective::cross_entropy,
                                          static_cast<int>(c));
        for (std::size_t d = 0; d < D; ++d) {
          double m = detail::sigmoid(joint[d]);
          grad[d] += dce.data[d] * (joint[D + d] - x.data[d]) * m * (1.0 - m);
          grad[D + d] += dce.data[d] * m;
        }
      }
      const double inv = 1.0 / static_cast<double>(idx.size());
      loss *= inv;
      for (double& g : grad) g *= inv;
      for (std::size_t d = 0; d < D; ++d) {
        double m = detail::sigmoid(joint[d]);
        loss += cfg.lambda_l1 * m;
        grad[d] += cfg.lambda_l1 * m * (1.0 - m);
      }
      if (!std::isfinite(loss)) {
        ok = false;
        break;
      }
      adam.step(joint, grad, acfg);
    }

    if (!ok) {
      rep.failed[c] = true;
      continue;
    }
    double l1 = 0.0;
    for (std::size_t d = 0; d < D; ++d) l1 += detail::sigmoid(joint[d]);
    rep.mask_l1[c] = l1;
  }

  std::vector<double> valid;
  for (double v : rep.mask_l1)
    if (std::isfinite(v)) valid.push_back(v);
  if (valid.size() >= 2) {
    auto [aidx, arg] = detail::min_anomaly_index(valid);
    rep.anomaly_index = aidx;
    // map back to a class index
    std::size_t seen = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (!std::isfinite(rep.mask_l1[c])) continue;
      if (seen == arg) {
        rep.flagged_class = static_cast<int>(c);
        break;
      }
      ++seen;
    }
    rep.backdoor_detected = rep.anomaly_index > 2.0;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Input-perturbation entropy: overlay the input with clean samples and score
// the mean prediction entropy. Backdoored inputs keep a confident (low
// entropy) prediction under superposition.
// ---------------------------------------------------------------------------

enum class StripBlend { add, mean };

inline double strip_entropy(const Classifier& model, const Segment& input,
                            const Dataset& overlays, std::size_t n_overlays,
                            StripBlend blend = StripBlend::add, std::uint64_t seed = 0) {
  if (overlays.empty()) throw std::invalid_argument("strip: empty overlay set");
  if (n_overlays < 1) throw std::invalid_argument("strip: need at least one overlay");
  auto [zx, mx, sx] = znormalize(input);
  (void)mx;
  (void)sx;
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t i = 0; i < n_overlays; ++i) {
    const Segment& o = overlays[rng.index(overlays.size())];
    auto [zo, mo, so] = znormalize(o);
    (void)mo;
    (void)so;
    Matrix b(zx.data.rows, zx.data.cols);
    for (std::size_t d = 0; d < b.size(); ++d) {
      double v = zx.data.data[d] + zo.data.data[d];
      b.data[d] = blend == StripBlend::mean ? 0.5 * v : v;
    }
    auto probs = model.forward_one(b);
    double h = 0.0;
    for (double p : probs)
      if (p > 0.0) h -= p * std::log(p);
    total += h;
  }
  return total / static_cast<double>(n_overlays);
}

struct StripReport {
  std::vector<double> clean_scores;
  std::vector<double> poison_scores;
  double auc = 0.0;  // poisoned = positive, low entropy = positive
};

// Rank-based AUC; ties contribute one half.
inline double rank_auc_low_positive(const std::vector<double>& positives,
                                    const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty())
    throw std::invalid_argument("auc: need both classes");
  double wins = 0.0;
  for (double p : positives)
    for (double n : negatives) {
      if (p < n)
        wins += 1.0;
      else if (p == n)
        wins += 0.5;
    }
  return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

inline StripReport strip_sweep(const Classifier& model, const Dataset& clean_inputs,
                               const Dataset& poisoned_inputs, const Dataset& overlays,
                               std::size_t n_overlays = 100, StripBlend blend = StripBlend::add,
                               std::uint64_t seed = 0) {
  StripReport rep;
  Rng rng(seed);
  for (const auto& s : clean_inputs)
    rep.clean_scores.push_back(
        strip_entropy(model, s, overlays, n_overlays, blend, rng.next_u64()));
  for (const auto& s : poisoned_inputs)
    rep.poison_scores.push_back(
        strip_entropy(model, s, overlays, n_overlays, blend, rng.next_u64()));
  rep.auc = rank_auc_low_positive(rep.poison_scores, rep.clean_scores);
  return rep;
}

// ---------------------------------------------------------------------------
// Latent-space outlier scoring: per predicted class, center the penultimate
// representations and score each sample by its squared projection onto the
// top right singular vector (power iteration).
// ---------------------------------------------------------------------------

struct SpectralSignatureReport {
  std::vector<double> scores;        // per input sample; NaN for skipped classes
  std::vector<bool> flagged;         // in the top-1.5*eps quantile of its class
  double poison_capture = 0.0;       // fraction of true poisons flagged
  std::size_t n_skipped_classes = 0;
};

namespace detail {

// Top right singular vector of a centered n x d matrix via power iteration
// on rows: v <- normalize(sum_i <r_i, v> r_i).
inline std::vector<double> top_singular_vector(const std::vector<std::vector<double>>& rows,
                                               std::size_t dim, std::size_t iters,
                                               double tol, Rng& rng) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;

  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> nv(dim, 0.0);
    for (const auto& r : rows) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += r[d] * v[d];
      for (std::size_t d = 0; d < dim; ++d) nv[d] += dot * r[d];
    }
    double nn = 0.0;
    for (double x : nv) nn += x * x;
    nn = std::sqrt(nn);
    if (nn == 0.0) return v;
    for (double& x : nv) x /= nn;
    double diff = 0.0;
    for (std::size_t d = 0; d < dim; ++d) diff += (nv[d] - v[d]) * (nv[d] - v[d]);
    double diff_flip = 0.0;
    for (std::size_t d = 0; d < dim; ++d) diff_flip += (nv[d] + v[d]) * (nv[d] + v[d]);
    v = nv;
    if (std::min(diff, diff_flip) < tol * tol) break;
  }
  return v;
}

}  // namespace detail

inline SpectralSignatureReport spectral_signature(const Classifier& model,
                                                  const Dataset& mixed,
                                                  const std::vector<bool>& is_poison,
                                                  std::uint64_t seed = 0) {
  if (mixed.size() != is_poison.size())
    throw std::invalid_argument("spectral_signature: flag vector size mismatch");
  if (mixed.empty()) throw std::invalid_argument("spectral_signature: empty dataset");
  const std::size_t C = model.spec().n_classes;
  const std::size_t n = mixed.size();

  std::size_t n_poison = 0;
  for (bool b : is_poison)
    if (b) ++n_poison;
  const double eps = static_cast<double>(n_poison) / static_cast<double>(n);

  SpectralSignatureReport rep;
  rep.scores.assign(n, std::numeric_limits<double>::quiet_NaN());
  rep.flagged.assign(n, false);

  std::vector<std::vector<std::size_t>> by_pred(C);
  for (std::size_t i = 0; i < n; ++i) {
    int p = model.predict(mixed[i].data);
    by_pred[static_cast<std::size_t>(p)].push_back(i);
  }

  Rng rng(seed);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& members = by_pred[c];
    if (members.size() < 2) {
      if (!members.empty()) ++rep.n_skipped_classes;
      continue;
    }
    std::vector<std::vector<double>> reps;
    for (std::size_t i : members) reps.push_back(model.features(mixed[i].data));
    const std::size_t dim = reps.front().size();
    std::vector<double> mu(dim, 0.0);
    for (const auto& r : reps)
      for (std::size_t d = 0; d < dim; ++d) mu[d] += r[d];
    for (double& x : mu) x /= static_cast<double>(reps.size());
    for (auto& r : reps)
      for (std::size_t d = 0; d < dim; ++d) r[d] -= mu[d];

    std::vector<double> v = detail::top_singular_vector(reps, dim, 100, 1e-8, rng);
    std::vector<double> scores(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += reps[k][d] * v[d];
      scores[k] = dot * dot;
      rep.scores[members[k]] = scores[k];
    }

    // flag the top 1.5*eps fraction within this class
    auto n_flag = static_cast<std::size_t>(
        std::floor(1.5 * eps * static_cast<double>(members.size())));
    if (n_flag == 0) continue;
    std::vector<std::size_t> order(members.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (std::size_t k = 0; k < std::min(n_flag, order.size()); ++k)
      rep.flagged[members[order[k]]] = true;
  }

  if (n_poison > 0) {
    std::size_t caught = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (is_poison[i] && rep.flagged[i]) ++caught;
    rep.poison_capture = static_cast<double>(caught) / static_cast<double>(n_poison);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Channel pruning: rank feature channels by mean absolute activation over a
// clean calibration set and zero the least active fraction, optionally
// fine-tuning afterwards. Reports CA/ASR at each ratio.
// ---------------------------------------------------------------------------

struct PruneCurvePoint {
  double ratio = 0.0;
  std::size_t n_pruned = 0;
  double ca = 0.0;
  double asr = 0.0;
};

struct FinePruneConfig {
  std::vector<double> ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t finetune_epochs = 0;  // 0 = pruning only
  TrainConfig finetune;
};

template <typename AsrFn>
inline std::vector<PruneCurvePoint> fine_prune(const Classifier& model,
                                               const Dataset& calibration,
                                               const Dataset& test_set, AsrFn asr_of,
                                               const FinePruneConfig& cfg) {
  if (calibration.empty()) throw std::invalid_argument("fine_prune: empty calibration set");
  const std::size_t Q = model.n_feature_channels();
  if (Q == 0)
    throw std::invalid_argument("fine_prune: model has no prunable feature channels");
  for (double r : cfg.ratios)
    if (!(r >= 0.0 && r < 1.0))
      throw std::invalid_argument("fine_prune: ratios must lie in [0, 1)");

  std::vector<const Matrix*> cal;
  for (const auto& s : calibration) cal.push_back(&s.data);
  std::vector<double> act = model.channel_activation(cal);

  std::vector<std::size_t> order(Q);
  for (std::size_t i = 0; i < Q; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return act[a] < act[b]; });

  std::vector<PruneCurvePoint> curve;
  for (double r : cfg.ratios) {
    Classifier pruned = model;  // fresh copy per ratio
    auto n_prune = static_cast<std::size_t>(std::floor(r * static_cast<double>(Q)));
    std::vector<double> mask(Q, 1.0);
    for (std::size_t i = 0; i < n_prune; ++i) mask[order[i]] = 0.0;
    pruned.set_channel_mask(mask);
    if (cfg.finetune_epochs > 0) {
      TrainConfig ft = cfg.finetune;
      ft.epochs = cfg.finetune_epochs;
      train(pruned, calibration, {}, ft);
    }
    PruneCurvePoint pt;
    pt.ratio = r;
    pt.n_pruned = n_prune;
    pt.ca = evaluate_ca(pruned, test_set);
    pt.asr = asr_of(pruned);
    curve.push_back(pt);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// CSV exports for external plotting
// ---------------------------------------------------------------------------

inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_csv: cannot open " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i)
    f << header[i] << (i + 1 < header.size() ? "," : "\n");
  f.precision(12);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      f << row[i] << (i + 1 < row.size() ? "," : "\n");
  }
}

inline void export_strip_report(const std::filesystem::path& path, const StripReport& rep) {
  std::vector<std::vector<double>> rows;
  for (double s : rep.clean_scores) rows.push_back({0.0, s});
  for (double s : rep.poison_scores) rows.push_back({1.0, s});
  write_csv(path, {"poisoned", "entropy"}, rows);
}

inline void export_prune_curve(const std::filesystem::path& path,
                               const std::vector<PruneCurvePoint>& curve) {
  std::vector<std::vector<double>> rows;
  for (const auto& p : curve)
    rows.push_back({p.ratio, static_cast<double>(p.n_pruned), p.ca, p.asr});
  write_csv(path, {"ratio", "n_pruned", "ca", "asr"}, rows);
}

inline void export_spectral_report(const std::filesystem::path& path,
                                   const SpectralSignatureReport& rep,
                                   const std::vector<bool>& is_poison) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rep.scores.size(); ++i)
    rows.push_back({is_poison[i] ? 1.0 : 0.0, rep.scores[i], rep.flagged[i] ? 1.0 : 0.0});
  write_csv(path, {"poisoned", "score", "flagged"}, rows);
}

}  // namespace sbk
