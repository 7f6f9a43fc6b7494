#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>

#include "sbk/fft.hpp"
#include "test_oracles.hpp"

using namespace sbk;

TEST_CASE("unit impulse has flat unit spectrum") {
  Segment s = testutil::make_segment({{1, 0, 0, 0}});
  Spectrum sp = rfft(s);
  REQUIRE(sp.bins() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(sp.amplitude(0, k) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sp.phase(0, k) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("scaled impulse") {
  Segment s = testutil::make_segment({{2, 0, 0, 0}});
  Spectrum sp = rfft(s);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(sp.amplitude(0, k) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(sp.phase(0, k) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("rfft matches naive DFT oracle") {
  Rng rng(42);
  Segment s = testutil::random_segment(rng, 4, 128);
  Spectrum sp = rfft(s);
  for (std::size_t e = 0; e < 4; ++e) {
    auto full = testutil::naive_dft_row(s.data, e);
    for (std::size_t k = 0; k < sp.bins(); ++k) {
      CHECK(std::abs(std::abs(full[k]) - sp.amplitude(e, k)) < 1e-9);
      if (k != 0 && k != sp.bins() - 1)
        CHECK(std::abs(std::arg(full[k]) - sp.phase(e, k)) < 1e-9);
    }
  }
}

TEST_CASE("rfft oracle on non-power-of-two length") {
  Rng rng(7);
  Segment s = testutil::random_segment(rng, 2, 60);
  Spectrum sp = rfft(s);
  for (std::size_t e = 0; e < 2; ++e) {
    auto full = testutil::naive_dft_row(s.data, e);
    for (std::size_t k = 0; k < sp.bins(); ++k)
      CHECK(std::abs(std::abs(full[k]) - sp.amplitude(e, k)) < 1e-9);
  }
}

TEST_CASE("roundtrip identity") {
  Rng rng(3);
  for (std::size_t T : {4u, 6u, 50u, 128u, 256u}) {
    Segment s = testutil::random_segment(rng, 3, T);
    Matrix back = irfft(rfft(s));
    CHECK(max_abs_diff(back, s.data) < 1e-9);
  }
}

TEST_CASE("irfft of hand spectrum") {
  // amplitude [2, 1.5, 2], phase 0, T = 4 -> [1.75, 0, 0.25, 0]
  Spectrum sp;
  sp.amplitude = Matrix(1, 3);
  sp.phase = Matrix(1, 3, 0.0);
  sp.amplitude(0, 0) = 2.0;
  sp.amplitude(0, 1) = 1.5;
  sp.amplitude(0, 2) = 2.0;
  sp.original_length = 4;
  sp.fs = 4.0;
  Matrix x = irfft(sp);
  const double expect[4] = {1.75, 0.0, 0.25, 0.0};
  for (std::size_t t = 0; t < 4; ++t) CHECK(x(0, t) == doctest::Approx(expect[t]).epsilon(1e-12));
}

TEST_CASE("all-zero amplitude gives all-zero signal") {
  Spectrum sp;
  sp.amplitude = Matrix(2, 5, 0.0);
  sp.phase = Matrix(2, 5, 0.0);
  sp.original_length = 8;
  sp.fs = 8.0;
  Matrix x = irfft(sp);
  for (double v : x.data) CHECK(v == 0.0);
}

TEST_CASE("odd T rejected") {
  Segment s;
  s.data = Matrix(1, 5, 1.0);
  s.fs = 5.0;
  CHECK_THROWS_AS(rfft(s), std::invalid_argument);
}

TEST_CASE("Parseval") {
  Rng rng(11);
  for (std::size_t T : {32u, 100u}) {
    Segment s = testutil::random_segment(rng, 2, T);
    Spectrum sp = rfft(s);
    for (std::size_t e = 0; e < 2; ++e) {
      double time_energy = 0.0;
      for (std::size_t t = 0; t < T; ++t) time_energy += s.data(e, t) * s.data(e, t);
      double spec_energy = 0.0;
      for (std::size_t k = 0; k < sp.bins(); ++k) {
        double a2 = sp.amplitude(e, k) * sp.amplitude(e, k);
        bool shared = (k == 0 || k == sp.bins() - 1);
        spec_energy += shared ? a2 : 2.0 * a2;
      }
      spec_energy /= static_cast<double>(T);
      CHECK(std::abs(spec_energy - time_energy) / time_energy < 1e-9);
    }
  }
}
