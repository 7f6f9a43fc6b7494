#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sbk/signal.hpp"
#include "test_oracles.hpp"

using namespace sbk;

static InjectionStrategy strat(std::vector<std::size_t> el, std::vector<std::size_t> fb,
                               double alpha = 0.5, int cls = 0) {
  InjectionStrategy s;
  s.target_class = cls;
  s.electrodes = std::move(el);
  s.freq_bins = std::move(fb);
  s.alpha = alpha;
  return s;
}

TEST_CASE("make_mask single cell") {
  Matrix m = make_mask(strat({0}, {1}), 2, 3);
  CHECK(m(0, 0) == 0.0);
  CHECK(m(0, 1) == 1.0);
  CHECK(m(0, 2) == 0.0);
  CHECK(m(1, 0) == 0.0);
  CHECK(m(1, 1) == 0.0);
  CHECK(m(1, 2) == 0.0);
}

TEST_CASE("make_mask rejects empty electrode set") {
  CHECK_THROWS_AS(make_mask(strat({}, {1}), 2, 3), std::invalid_argument);
}

TEST_CASE("make_mask rejects DC and out-of-range bins") {
  CHECK_THROWS_AS(make_mask(strat({0}, {0}), 2, 3), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(strat({0}, {3}), 2, 3), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(strat({2}, {1}), 2, 3), std::invalid_argument);
}

TEST_CASE("make_mask popcount is product of cardinalities") {
  Matrix m = make_mask(strat({0, 1}, {1, 2}), 2, 3);
  double pop = 0.0;
  for (double v : m.data) pop += v;
  CHECK(pop == 4.0);
}

TEST_CASE("inject_frequency 4-point hand case") {
  // clean = [2,0,0,0], trigger = [0,1,0,0], mask bin 1 only, alpha = 0.5
  Segment clean = testutil::make_segment({{2, 0, 0, 0}});
  Segment trigger = testutil::make_segment({{0, 1, 0, 0}});
  Segment out = inject_frequency(clean, trigger, strat({0}, {1}, 0.5));
  const double expect[4] = {1.75, 0.0, 0.25, 0.0};
  for (std::size_t t = 0; t < 4; ++t)
    CHECK(out.data(0, t) == doctest::Approx(expect[t]).epsilon(1e-9));
  // DC untouched: mean preserved
  double mean = (out.data(0, 0) + out.data(0, 1) + out.data(0, 2) + out.data(0, 3)) / 4.0;
  CHECK(mean == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("alpha 0 validation mode reproduces clean input") {
  Rng rng(5);
  Segment clean = testutil::random_segment(rng, 2, 16);
  Segment trigger = testutil::random_segment(rng, 2, 16);
  Segment out = detail::inject_frequency_alpha(clean, trigger, strat({0, 1}, {1, 3}), 0.0);
  CHECK(max_abs_diff(out.data, clean.data) < 1e-9);
}

TEST_CASE("alpha outside (0,1] rejected by the public entry point") {
  Segment clean = testutil::make_segment({{2, 0, 0, 0}});
  Segment trigger = testutil::make_segment({{0, 1, 0, 0}});
  CHECK_THROWS_AS(inject_frequency(clean, trigger, strat({0}, {1}, 0.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(inject_frequency(clean, trigger, strat({0}, {1}, 1.5)),
                  std::invalid_argument);
}

TEST_CASE("full mask with alpha 1 replaces amplitude, keeps clean phase") {
  Rng rng(9);
  Segment clean = testutil::random_segment(rng, 2, 32);
  Segment trigger = testutil::random_segment(rng, 2, 32);
  Segment out = inject_frequency(clean, trigger, strat({0, 1}, {1, 2, 3, 4, 5, 6, 7, 8,
                                                          9, 10, 11, 12, 13, 14, 15, 16},
                                                        1.0));
  Spectrum so = rfft(out);
  Spectrum st = rfft(trigger);
  Spectrum sc = rfft(clean);
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t k = 1; k < so.bins(); ++k) {
      CHECK(so.amplitude(e, k) == doctest::Approx(st.amplitude(e, k)).epsilon(1e-7));
      if (k + 1 < so.bins() && so.amplitude(e, k) > 1e-12)
        CHECK(so.phase(e, k) == doctest::Approx(sc.phase(e, k)).epsilon(1e-6));
    }
}

TEST_CASE("injection locality: unmasked amplitudes bitwise unchanged") {
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    Segment clean = testutil::random_segment(rng, 4, 64);
    Segment trigger = testutil::random_segment(rng, 4, 64);
    auto strategy = strat({1, 3}, {2, 7, 20}, 0.8);
    // re-run the interpolation on spectra exactly as inject_frequency does
    Spectrum sx = rfft(clean);
    Spectrum st = rfft(trigger);
    Spectrum mod = sx;
    for (std::size_t e : strategy.electrodes)
      for (std::size_t k : strategy.freq_bins)
        mod.amplitude(e, k) =
            (1.0 - strategy.alpha) * sx.amplitude(e, k) + strategy.alpha * st.amplitude(e, k);
    Matrix mask = make_mask(strategy, 4, 33);
    for (std::size_t e = 0; e < 4; ++e)
      for (std::size_t k = 0; k < 33; ++k)
        if (mask(e, k) == 0.0) CHECK(mod.amplitude(e, k) == sx.amplitude(e, k));
  }
}

TEST_CASE("DC preservation: poisoned mean equals clean mean") {
  Rng rng(17);
  Segment clean = testutil::random_segment(rng, 3, 64);
  Segment trigger = testutil::random_segment(rng, 3, 64);
  Segment out = inject_frequency(clean, trigger, strat({0, 2}, {3, 9, 17}, 0.8));
  for (std::size_t e = 0; e < 3; ++e) {
    double mc = 0.0, mp = 0.0;
    for (std::size_t t = 0; t < 64; ++t) {
      mc += clean.data(e, t);
      mp += out.data(e, t);
    }
    CHECK(std::abs(mc - mp) / 64.0 < 1e-9);
  }
}

TEST_CASE("shape and fs mismatches rejected") {
  Rng rng(1);
  Segment a = testutil::random_segment(rng, 2, 16);
  Segment b = testutil::random_segment(rng, 2, 32);
  CHECK_THROWS_AS(inject_frequency(a, b, strat({0}, {1})), std::invalid_argument);
  Segment c = testutil::random_segment(rng, 2, 16);
  c.fs = 99.0;
  CHECK_THROWS_AS(inject_frequency(a, c, strat({0}, {1})), std::invalid_argument);
}

static Segment tone(double hz, double fs, std::size_t E, std::size_t T, double amp = 1.0) {
  Segment s;
  s.data = Matrix(E, T);
  s.fs = fs;
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t t = 0; t < T; ++t)
      s.data(e, t) = amp * std::cos(2.0 * M_PI * hz * static_cast<double>(t) / fs);
  return s;
}

static double energy(const Segment& s) {
  double total = 0.0;
  for (double v : s.data.data) total += v * v;
  return total;
}

TEST_CASE("spectral_filter removes single tones") {
  Segment low = tone(5.0, 128.0, 2, 128);
  Segment high = tone(40.0, 128.0, 2, 128);
  CHECK(energy(spectral_filter(low, FilterMode::remove_below, 20.0)) < 1e-9);
  CHECK(energy(spectral_filter(high, FilterMode::remove_above, 30.0)) < 1e-9);
}

TEST_CASE("spectral_filter keeps the passband component") {
  Segment low = tone(5.0, 128.0, 1, 128);
  Segment high = tone(40.0, 128.0, 1, 128);
  Segment mix = low;
  for (std::size_t i = 0; i < mix.data.data.size(); ++i)
    mix.data.data[i] += high.data.data[i];
  Segment f = spectral_filter(mix, FilterMode::remove_above, 30.0);
  CHECK(max_abs_diff(f.data, low.data) < 1e-6);
}

TEST_CASE("spectral_filter is idempotent bitwise") {
  Rng rng(21);
  Segment s = testutil::random_segment(rng, 2, 64, 64.0);
  Segment once = spectral_filter(s, FilterMode::remove_below, 10.0);
  Segment twice = spectral_filter(once, FilterMode::remove_below, 10.0);
  Spectrum a = rfft(once), b = rfft(twice);
  for (std::size_t i = 0; i < a.amplitude.data.size(); ++i)
    CHECK(std::abs(a.amplitude.data[i] - b.amplitude.data[i]) < 1e-9);
}

TEST_CASE("spectral_filter rejects out-of-range cutoff") {
  Segment s = tone(5.0, 128.0, 1, 128);
  CHECK_THROWS_AS(spectral_filter(s, FilterMode::remove_below, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(spectral_filter(s, FilterMode::remove_below, 64.0), std::invalid_argument);
}

TEST_CASE("downsample keeps DC") {
  Segment s;
  s.data = Matrix(1, 128, 3.25);
  s.fs = 128.0;
  Segment d = downsample(s, 0.75);
  CHECK(d.length() == 96);
  CHECK(d.fs == doctest::Approx(96.0));
  for (double v : d.data.data) CHECK(v == doctest::Approx(3.25).epsilon(1e-9));
}

TEST_CASE("downsample preserves tones below the new Nyquist") {
  Segment s = tone(8.0, 128.0, 1, 128, 2.0);
  Segment d = downsample(s, 0.75);
  Segment expect = tone(8.0, 96.0, 1, 96, 2.0);
  CHECK(max_abs_diff(d.data, expect.data) < 1e-6);
}

TEST_CASE("downsample removes tones above the new Nyquist") {
  Segment s = tone(60.0, 128.0, 1, 128);
  Segment d = downsample(s, 0.75);  // new Nyquist 48 Hz
  CHECK(energy(d) < 1e-9);
}

TEST_CASE("znormalize two-point case and roundtrip") {
  Segment s = testutil::make_segment({{1, 3}});
  auto [n, mean, sd] = znormalize(s);
  CHECK(mean == 2.0);
  CHECK(sd == 1.0);
  CHECK(n.data(0, 0) == -1.0);
  CHECK(n.data(0, 1) == 1.0);

  Rng rng(33);
  Segment r = testutil::random_segment(rng, 3, 32);
  auto [rn, rm, rs] = znormalize(r);
  Segment back = denormalize(rn, rm, rs);
  CHECK(max_abs_diff(back.data, r.data) < 1e-12);
}

TEST_CASE("znormalize direct arithmetic oracle") {
  Segment s = testutil::make_segment({{0, 0, 4, 4}});
  auto [n, mean, sd] = znormalize(s);
  CHECK(mean == 2.0);
  CHECK(sd == 2.0);
  CHECK(n.data(0, 0) == -1.0);
  CHECK(n.data(0, 1) == -1.0);
  CHECK(n.data(0, 2) == 1.0);
  CHECK(n.data(0, 3) == 1.0);
}

TEST_CASE("znormalize rejects constant segments") {
  Segment s = testutil::make_segment({{2, 2, 2, 2}});
  CHECK_THROWS_AS(znormalize(s), std::invalid_argument);
}
