#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "sbk/dataset.hpp"
#include "test_oracles.hpp"

using namespace sbk;

static DatasetManifest small_manifest() {
  DatasetManifest m = default_manifest();
  m.n_subjects = 5;
  m.segments_per_subject_per_class = 10;
  return m;
}

TEST_CASE("generate_synthetic shape contract and determinism") {
  DatasetManifest m = default_manifest();
  Dataset d = generate_synthetic(m, 1);
  CHECK(d.size() == 10 * 3 * 60);
  for (const auto& s : d) {
    CHECK(s.data.rows == 8);
    CHECK(s.data.cols == 128);
    CHECK(s.data.all_finite());
  }
  Dataset d2 = generate_synthetic(m, 1);
  REQUIRE(d2.size() == d.size());
  bool identical = true;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i].data.data != d2[i].data.data || d[i].label != d2[i].label) identical = false;
  CHECK(identical);
  Dataset d3 = generate_synthetic(m, 2);
  CHECK(d3[0].data.data != d[0].data.data);
}

TEST_CASE("class band power separates classes") {
  DatasetManifest m = small_manifest();
  Dataset d = generate_synthetic(m, 3);
  const auto& prof = m.profiles[0];
  double p0 = 0.0, p1 = 0.0;
  std::size_t n0 = 0, n1 = 0;
  for (const auto& s : d) {
    double bp = testutil::band_power(s, prof.lo_hz, prof.hi_hz, prof.electrodes);
    if (s.label == 0) {
      p0 += bp;
      ++n0;
    } else if (s.label == 1) {
      p1 += bp;
      ++n1;
    }
  }
  p0 /= static_cast<double>(n0);
  p1 /= static_cast<double>(n1);
  CHECK(p0 >= (prof.boost / 2.0) * p1);
}

TEST_CASE("softmax probe on band-power features reaches 0.8 on held-out subjects") {
  DatasetManifest m = default_manifest();
  m.segments_per_subject_per_class = 20;
  Dataset d = generate_synthetic(m, 5);

  auto features = [&](const Segment& s) {
    std::vector<double> f;
    for (const auto& p : m.profiles)
      f.push_back(std::log(1e-12 + testutil::band_power(s, p.lo_hz, p.hi_hz, p.electrodes)));
    f.push_back(1.0);
    return f;
  };

  const std::size_t C = m.n_classes, D = m.n_classes + 1;
  std::vector<double> W(C * D, 0.0);
  auto logits = [&](const std::vector<double>& f) {
    std::vector<double> z(C, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < D; ++j) z[c] += W[c * D + j] * f[j];
    return z;
  };

  std::vector<std::vector<double>> train_f, test_f;
  std::vector<int> train_y, test_y;
  for (const auto& s : d) {
    if (s.subject >= 8) {
      test_f.push_back(features(s));
      test_y.push_back(s.label);
    } else {
      train_f.push_back(features(s));
      train_y.push_back(s.label);
    }
  }

  // plain batch gradient descent on cross-entropy
  for (int epoch = 0; epoch < 300; ++epoch) {
    std::vector<double> grad(C * D, 0.0);
    for (std::size_t i = 0; i < train_f.size(); ++i) {
      auto z = logits(train_f[i]);
      double mx = *std::max_element(z.begin(), z.end());
      double Z = 0.0;
      for (double& v : z) {
        v = std::exp(v - mx);
        Z += v;
      }
      for (std::size_t c = 0; c < C; ++c) {
        double p = z[c] / Z;
        double delta = p - (static_cast<int>(c) == train_y[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < D; ++j) grad[c * D + j] += delta * train_f[i][j];
      }
    }
    for (std::size_t k = 0; k < W.size(); ++k)
      W[k] -= 0.5 / static_cast<double>(train_f.size()) * grad[k];
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_f.size(); ++i) {
    auto z = logits(test_f[i]);
    std::size_t argmax = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (z[c] > z[argmax]) argmax = c;
    if (static_cast<int>(argmax) == test_y[i]) ++correct;
  }
  double acc = static_cast<double>(correct) / static_cast<double>(test_f.size());
  CHECK(acc >= 0.8);
}

TEST_CASE("infeasible manifest rejected") {
  DatasetManifest m = default_manifest();
  m.profiles[1].hi_hz = 70.0;  // above Nyquist for fs = 128
  CHECK_THROWS_AS(generate_synthetic(m, 1), std::invalid_argument);
}

TEST_CASE("split_loso partitions subjects") {
  DatasetManifest m = small_manifest();
  Dataset d = generate_synthetic(m, 7);
  DatasetSplits sp = split_loso(d, 0, 1);

  auto subjects_of = [](const Dataset& part) {
    std::set<int> s;
    for (const auto& seg : part) s.insert(seg.subject);
    return s;
  };
  CHECK(subjects_of(sp.poison_source) == std::set<int>{0});
  CHECK(subjects_of(sp.test) == std::set<int>{1});
  CHECK(subjects_of(sp.validation).size() == 1);
  CHECK(sp.train.size() + sp.test.size() + sp.poison_source.size() + sp.validation.size() ==
        d.size());

  // disjoint subject sets
  auto tr = subjects_of(sp.train), va = subjects_of(sp.validation);
  for (int s : va) CHECK(tr.count(s) == 0);
  CHECK(tr.count(0) == 0);
  CHECK(tr.count(1) == 0);

  // every class in every part
  for (const Dataset* part : {&sp.train, &sp.test, &sp.poison_source, &sp.validation}) {
    std::set<int> classes;
    for (const auto& seg : *part) classes.insert(seg.label);
    CHECK(classes.size() == m.n_classes);
  }
}

TEST_CASE("split_loso train subject count matches protocol") {
  DatasetManifest m = default_manifest();
  m.segments_per_subject_per_class = 2;
  Dataset d = generate_synthetic(m, 9);
  DatasetSplits sp = split_loso(d, 0, 1);
  std::set<int> tr;
  for (const auto& s : sp.train) tr.insert(s.subject);
  CHECK(tr.size() == 7);  // 10 - poison - test - validation
}

TEST_CASE("split_loso rejects bad arguments") {
  DatasetManifest m = small_manifest();
  Dataset d = generate_synthetic(m, 7);
  CHECK_THROWS_AS(split_loso(d, 2, 2), std::invalid_argument);
  Dataset tiny;
  for (const auto& s : d)
    if (s.subject < 3) tiny.push_back(s);
  CHECK_THROWS_AS(split_loso(tiny, 0, 1), std::invalid_argument);
}

TEST_CASE("select_triggers") {
  DatasetManifest m = small_manifest();
  Dataset d = generate_synthetic(m, 7);
  DatasetSplits sp = split_loso(d, 0, 1);

  TriggerBank first = select_triggers(sp.poison_source, 3, TriggerPolicy::first);
  REQUIRE(first.triggers.size() == 3);
  for (int c = 0; c < 3; ++c) {
    CHECK(first.triggers[c].label == c);
    // lowest-index segment of each class
    for (const auto& s : sp.poison_source)
      if (s.label == c) {
        CHECK(s.data.data == first.triggers[c].data.data);
        break;
      }
  }

  TriggerBank r1 = select_triggers(sp.poison_source, 3, TriggerPolicy::random, 42);
  TriggerBank r2 = select_triggers(sp.poison_source, 3, TriggerPolicy::random, 42);
  for (int c = 0; c < 3; ++c) CHECK(r1.triggers[c].data.data == r2.triggers[c].data.data);

  Dataset missing;
  for (const auto& s : sp.poison_source)
    if (s.label != 2) missing.push_back(s);
  CHECK_THROWS_AS(select_triggers(missing, 3, TriggerPolicy::first), std::invalid_argument);
}

static std::vector<InjectionStrategy> default_strategies(std::size_t C, std::size_t E,
                                                         std::size_t F) {
  std::vector<InjectionStrategy> out;
  for (std::size_t c = 0; c < C; ++c) {
    InjectionStrategy s;
    s.target_class = static_cast<int>(c);
    s.electrodes = {0, 1, 2, 3};
    s.freq_bins = {3 + c, 10 + c, 20 + c, 30 + c};
    s.alpha = 0.8;
    (void)E;
    (void)F;
    out.push_back(s);
  }
  return out;
}

TEST_CASE("build_poison_set counts, balance, clean labels, determinism") {
  DatasetManifest m = small_manifest();
  m.segments_per_subject_per_class = 60;
  Dataset d = generate_synthetic(m, 11);
  DatasetSplits sp = split_loso(d, 0, 1);
  TriggerBank bank = select_triggers(sp.poison_source, 3, TriggerPolicy::first);
  auto strategies = default_strategies(3, m.electrodes, m.length / 2 + 1);

  Dataset poison = build_poison_set(sp.poison_source, bank, strategies, 0.4, 400, 123);
  CHECK(poison.size() == 160);
  std::vector<std::size_t> counts(3, 0);
  for (const auto& s : poison) counts[static_cast<std::size_t>(s.label)]++;
  std::size_t mn = *std::min_element(counts.begin(), counts.end());
  std::size_t mx = *std::max_element(counts.begin(), counts.end());
  CHECK(mx - mn <= 1);

  Dataset poison2 = build_poison_set(sp.poison_source, bank, strategies, 0.4, 400, 123);
  REQUIRE(poison2.size() == poison.size());
  for (std::size_t i = 0; i < poison.size(); ++i)
    CHECK(poison[i].data.data == poison2[i].data.data);

  CHECK(build_poison_set(sp.poison_source, bank, strategies, 0.0004, 400, 1).empty());
  CHECK_THROWS_AS(build_poison_set(sp.poison_source, bank, strategies, 0.9, 5000, 1),
                  std::invalid_argument);
}

TEST_CASE("dataset save/load roundtrip") {
  DatasetManifest m = small_manifest();
  Dataset d = generate_synthetic(m, 13);
  auto dir = std::filesystem::temp_directory_path() / "sbk_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(dir, m, d);
  auto [m2, d2] = load_dataset(dir);
  CHECK(m2.n_subjects == m.n_subjects);
  CHECK(m2.profiles.size() == m.profiles.size());
  REQUIRE(d2.size() == d.size());
  // float32 on disk
  double max_err = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d2[i].label == d[i].label);
    CHECK(d2[i].subject == d[i].subject);
    for (std::size_t k = 0; k < d[i].data.data.size(); ++k)
      max_err = std::max(max_err, std::abs(d2[i].data.data[k] - d[i].data.data[k]));
  }
  CHECK(max_err < 1e-4);
  std::filesystem::remove_all(dir);
}
