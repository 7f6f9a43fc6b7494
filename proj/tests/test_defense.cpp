#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "sbk/attacks.hpp"
#include "sbk/defense.hpp"
#include "test_oracles.hpp"

using namespace sbk;

static Segment random_seg(std::uint64_t seed, std::size_t E = 2, std::size_t T = 16,
                          double fs = 16.0) {
  Rng rng(seed);
  return testutil::random_segment(rng, E, T, fs);
}

// ---------------------------------------------------------------------------
// anomaly index
// ---------------------------------------------------------------------------

TEST_CASE("anomaly index flags a far outlier and is permutation invariant") {
  std::vector<double> norms = {50.0, 52.0, 2.0, 49.0, 51.0};
  auto [idx, arg] = sbk::detail::min_anomaly_index(norms);
  CHECK(arg == 2);
  CHECK(idx > 2.0);

  std::vector<double> perm = {49.0, 2.0, 51.0, 50.0, 52.0};
  auto [idx2, arg2] = sbk::detail::min_anomaly_index(perm);
  CHECK(arg2 == 1);
  CHECK(idx2 == doctest::Approx(idx));
}

TEST_CASE("anomaly index of near-uniform norms is small") {
  std::vector<double> norms = {50.0, 51.0, 49.5, 50.2, 50.8};
  auto [idx, arg] = sbk::detail::min_anomaly_index(norms);
  (void)arg;
  CHECK(idx <= 2.0);
}

// ---------------------------------------------------------------------------
// neural cleanse
// ---------------------------------------------------------------------------

// Plant an always-class-0 shortcut: a softmax model whose class-0 logit reads
// a single input cell with a huge weight. Inverting a trigger for class 0
// then needs only that one cell, while other classes need broad masks.
TEST_CASE("neural cleanse flags a planted single-cell shortcut") {
  ClassifierSpec spec;
  spec.arch = Arch::softmax_reg;
  spec.electrodes = 2;
  spec.length = 16;
  spec.n_classes = 3;
  spec.init_seed = 1;
  Classifier model(spec);
  // weight layout: class-major over E*T features, then biases
  const std::size_t D = spec.input_dim();
  for (double& p : model.params()) p *= 0.01;
  model.params()[0 * D + 5] = 50.0;  // class 0 fires on cell 5

  Dataset clean;
  for (int i = 0; i < 12; ++i) {
    Segment s = random_seg(40 + static_cast<std::uint64_t>(i));
    s.data(0, 5) = 0.0;  // shortcut off in clean data
    clean.push_back(s);
  }

  NeuralCleanseConfig cfg;
  cfg.steps = 200;
  NeuralCleanseReport rep = neural_cleanse(model, clean, cfg, 7);
  REQUIRE(rep.mask_l1.size() == 3);
  for (double v : rep.mask_l1) CHECK(std::isfinite(v));
  CHECK(rep.flagged_class == 0);
  CHECK(rep.mask_l1[0] < rep.mask_l1[1]);
  CHECK(rep.mask_l1[0] < rep.mask_l1[2]);
  CHECK(rep.anomaly_index > 2.0);
  CHECK(rep.backdoor_detected);
}

TEST_CASE("neural cleanse zero-regularizer run terminates and reports norms") {
  ClassifierSpec spec;
  spec.arch = Arch::softmax_reg;
  spec.electrodes = 2;
  spec.length = 8;
  spec.n_classes = 2;
  spec.init_seed = 3;
  Classifier model(spec);
  Dataset clean;
  for (int i = 0; i < 6; ++i) clean.push_back(random_seg(60 + static_cast<std::uint64_t>(i), 2, 8, 8.0));
  NeuralCleanseConfig cfg;
  cfg.steps = 20;
  cfg.lambda_l1 = 0.0;
  NeuralCleanseReport rep = neural_cleanse(model, clean, cfg, 1);
  for (double v : rep.mask_l1) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
  CHECK_THROWS_AS(neural_cleanse(model, {}, cfg), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// strip
// ---------------------------------------------------------------------------

static Classifier uniform_model(std::size_t C, std::size_t E, std::size_t T) {
  ClassifierSpec spec;
  spec.arch = Arch::softmax_reg;
  spec.electrodes = E;
  spec.length = T;
  spec.n_classes = C;
  Classifier m(spec);
  std::fill(m.params().begin(), m.params().end(), 0.0);
  return m;
}

TEST_CASE("strip entropy of a uniform model is log C") {
  Classifier m = uniform_model(3, 2, 16);
  Dataset overlays;
  for (int i = 0; i < 5; ++i) overlays.push_back(random_seg(70 + static_cast<std::uint64_t>(i)));
  double h = strip_entropy(m, random_seg(80), overlays, 10);
  CHECK(h == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("strip entropy of a deterministic model is ~0") {
  ClassifierSpec spec;
  spec.arch = Arch::softmax_reg;
  spec.electrodes = 2;
  spec.length = 16;
  spec.n_classes = 3;
  Classifier m(spec);
  std::fill(m.params().begin(), m.params().end(), 0.0);
  m.params()[m.params().size() - 3] = 200.0;  // class-0 bias dominates
  Dataset overlays;
  for (int i = 0; i < 5; ++i) overlays.push_back(random_seg(90 + static_cast<std::uint64_t>(i)));
  double h = strip_entropy(m, random_seg(95), overlays, 10);
  CHECK(h < 1e-6);
  CHECK_THROWS_AS(strip_entropy(m, random_seg(95), {}, 10), std::invalid_argument);
  CHECK_THROWS_AS(strip_entropy(m, random_seg(95), overlays, 0), std::invalid_argument);
}

TEST_CASE("strip entropies lie in [0, log C] and auc behaves") {
  Classifier m = uniform_model(3, 2, 16);
  Rng rng(5);
  for (double& p : m.params()) p = 0.3 * rng.normal();
  Dataset clean, pois, overlays;
  for (int i = 0; i < 6; ++i) {
    clean.push_back(random_seg(200 + static_cast<std::uint64_t>(i)));
    pois.push_back(random_seg(300 + static_cast<std::uint64_t>(i)));
    overlays.push_back(random_seg(400 + static_cast<std::uint64_t>(i)));
  }
  StripReport rep = strip_sweep(m, clean, pois, overlays, 8, StripBlend::add, 3);
  for (double s : rep.clean_scores) CHECK((s >= 0.0 && s <= std::log(3.0) + 1e-12));
  for (double s : rep.poison_scores) CHECK((s >= 0.0 && s <= std::log(3.0) + 1e-12));
  CHECK((rep.auc >= 0.0 && rep.auc <= 1.0));

  // perfectly separated scores give auc 1 (low score = positive)
  CHECK(rank_auc_low_positive({0.1, 0.2}, {0.8, 0.9}) == doctest::Approx(1.0));
  CHECK(rank_auc_low_positive({0.8, 0.9}, {0.1, 0.2}) == doctest::Approx(0.0));
  CHECK(rank_auc_low_positive({0.5}, {0.5}) == doctest::Approx(0.5));
}

// ---------------------------------------------------------------------------
// spectral signature
// ---------------------------------------------------------------------------

TEST_CASE("power iteration matches a dense svd oracle") {
  // small matrix with a known dominant direction
  Rng rng(11);
  const std::size_t n = 30, d = 4;
  std::vector<double> dir = {0.5, -0.5, 0.5, 0.5};
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(d);
    double c = 5.0 * rng.normal();
    for (std::size_t j = 0; j < d; ++j) r[j] = c * dir[j] + 0.1 * rng.normal();
    rows.push_back(r);
  }
  // center
  std::vector<double> mu(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j] / static_cast<double>(n);
  for (auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) r[j] -= mu[j];

  Rng prng(13);
  auto v = sbk::detail::top_singular_vector(rows, d, 100, 1e-8, prng);

  // oracle: eigenvector of X^T X via Jacobi-free brute force — power iterate
  // the 4x4 Gram matrix explicitly with a different start, many iterations.
  std::vector<std::vector<double>> gram(d, std::vector<double>(d, 0.0));
  for (const auto& r : rows)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) gram[a][b] += r[a] * r[b];
  std::vector<double> w = {1.0, 0.0, 0.0, 0.0};
  for (int it = 0; it < 500; ++it) {
    std::vector<double> nw(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) nw[a] += gram[a][b] * w[b];
    double nn = 0.0;
    for (double x : nw) nn += x * x;
    nn = std::sqrt(nn);
    for (std::size_t a = 0; a < d; ++a) w[a] = nw[a] / nn;
  }
  double cosine = 0.0;
  for (std::size_t j = 0; j < d; ++j) cosine += v[j] * w[j];
  CHECK(std::abs(cosine) > 0.999);
}

TEST_CASE("spectral signature catches latent displacement") {
  // Model whose features are the raw input (softmax feature channels = 0, so
  // use an mlp whose hidden layer passes information); simpler: craft data
  // where poisons are displaced along a fixed input direction and the model
  // is an mlp trained lightly — instead verify with an identity-ish mlp.
  ClassifierSpec spec;
  spec.arch = Arch::mlp;
  spec.electrodes = 2;
  spec.length = 8;
  spec.n_classes = 2;
  spec.hidden = {6};
  spec.init_seed = 21;
  Classifier model(spec);
  // force a single predicted class so the flag quota covers all poisons
  model.params()[model.params().size() - 2] = 100.0;

  // Poisons carry a large common offset which survives into the hidden layer.
  Dataset mixed;
  std::vector<bool> is_poison;
  for (int i = 0; i < 40; ++i) {
    Segment s = random_seg(500 + static_cast<std::uint64_t>(i), 2, 8, 8.0);
    bool p = i < 4;  // 10:1 clean-to-poison, mirroring a 5000:500 style split
    if (p)
      for (double& v : s.data.data) v += 8.0;
    mixed.push_back(s);
    is_poison.push_back(p);
  }

  SpectralSignatureReport rep = spectral_signature(model, mixed, is_poison, 3);
  CHECK(rep.poison_capture >= 0.9);
  for (std::size_t i = 0; i < rep.scores.size(); ++i)
    if (std::isfinite(rep.scores[i])) CHECK(rep.scores[i] >= 0.0);
}

TEST_CASE("spectral signature identical representations score zero") {
  ClassifierSpec spec;
  spec.arch = Arch::mlp;
  spec.electrodes = 2;
  spec.length = 8;
  spec.n_classes = 2;
  spec.hidden = {4};
  spec.init_seed = 23;
  Classifier model(spec);
  Segment proto = random_seg(600, 2, 8, 8.0);
  Dataset mixed;
  std::vector<bool> flags;
  for (int i = 0; i < 6; ++i) {
    mixed.push_back(proto);
    flags.push_back(false);
  }
  SpectralSignatureReport rep = spectral_signature(model, mixed, flags, 1);
  for (double s : rep.scores)
    if (std::isfinite(s)) CHECK(s == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(spectral_signature(model, mixed, {true}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// fine pruning
// ---------------------------------------------------------------------------

TEST_CASE("fine prune zeroes exactly floor(r*Q) channels and keeps the identity point") {
  ClassifierSpec spec;
  spec.arch = Arch::mlp;
  spec.electrodes = 2;
  spec.length = 8;
  spec.n_classes = 2;
  spec.hidden = {10};
  spec.init_seed = 31;
  Classifier model(spec);

  Dataset cal, test;
  for (int i = 0; i < 8; ++i) {
    Segment s = random_seg(700 + static_cast<std::uint64_t>(i), 2, 8, 8.0);
    s.label = i % 2;
    cal.push_back(s);
    Segment t = random_seg(800 + static_cast<std::uint64_t>(i), 2, 8, 8.0);
    t.label = i % 2;
    test.push_back(t);
  }

  double base_ca = evaluate_ca(model, test);
  FinePruneConfig cfg;
  auto curve = fine_prune(model, cal, test, [](const Classifier& m) {
    (void)m;
    return 0.5;
  }, cfg);
  REQUIRE(curve.size() == cfg.ratios.size());
  CHECK(curve[0].ratio == 0.0);
  CHECK(curve[0].n_pruned == 0);
  CHECK(curve[0].ca == doctest::Approx(base_ca));
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].n_pruned ==
          static_cast<std::size_t>(std::floor(cfg.ratios[i] * 10.0)));
    CHECK((curve[i].ca >= 0.0 && curve[i].ca <= 1.0));
  }

  FinePruneConfig bad;
  bad.ratios = {1.0};
  CHECK_THROWS_AS(
      fine_prune(model, cal, test, [](const Classifier&) { return 0.0; }, bad),
      std::invalid_argument);
}

TEST_CASE("fine prune rejects models without feature channels") {
  ClassifierSpec spec;
  spec.arch = Arch::softmax_reg;
  spec.electrodes = 2;
  spec.length = 8;
  spec.n_classes = 2;
  Classifier model(spec);
  Dataset cal = {random_seg(900, 2, 8, 8.0)};
  Dataset test = {random_seg(901, 2, 8, 8.0)};
  CHECK_THROWS_AS(
      fine_prune(model, cal, test, [](const Classifier&) { return 0.0; }, FinePruneConfig{}),
      std::invalid_argument);
}

// ---------------------------------------------------------------------------
// exports
// ---------------------------------------------------------------------------

TEST_CASE("csv exports write one row per record") {
  auto dir = std::filesystem::temp_directory_path();
  auto p1 = dir / "sbk_test_strip.csv";
  StripReport rep;
  rep.clean_scores = {0.9, 1.0};
  rep.poison_scores = {0.1};
  rep.auc = 1.0;
  export_strip_report(p1, rep);
  std::ifstream f(p1);
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  CHECK(n == 4);  // header + 3 rows
  std::filesystem::remove(p1);

  auto p2 = dir / "sbk_test_prune.csv";
  std::vector<PruneCurvePoint> curve(3);
  export_prune_curve(p2, curve);
  std::ifstream f2(p2);
  n = 0;
  while (std::getline(f2, line))
    if (!line.empty()) ++n;
  CHECK(n == 4);
  std::filesystem::remove(p2);
}
