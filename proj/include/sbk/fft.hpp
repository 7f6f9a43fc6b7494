#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

#include "sbk/core.hpp"
#include "sbk/segment.hpp"

namespace sbk {

namespace detail {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey. n must be a power of two.
// Unnormalized in both directions; callers scale the inverse by 1/n.
inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        cplx u = a[i + j];
        cplx v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Bluestein's algorithm for arbitrary n, expressed as a convolution that is
// evaluated with a power-of-two FFT.
inline void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::size_t m = 1;
  while (m < 2 * n + 1) m <<= 1;

  std::vector<cplx> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small
    std::size_t k2 = (static_cast<std::size_t>(k) * k) % (2 * n);
    double ang = M_PI * static_cast<double>(k2) / static_cast<double>(n);
    w[k] = cplx(std::cos(ang), sign * std::sin(ang));
  }

  std::vector<cplx> x(m, cplx(0.0)), y(m, cplx(0.0));
  for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * w[k];
  for (std::size_t k = 0; k < n; ++k) {
    cplx c = std::conj(w[k]);
    y[k] = c;
    if (k != 0) y[m - k] = c;
  }
  fft_pow2(x, false);
  fft_pow2(y, false);
  for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
  fft_pow2(x, true);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * scale * w[k];
}

inline void fft_inplace(std::vector<cplx>& a, bool inverse) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size()))
    fft_pow2(a, inverse);
  else
    fft_bluestein(a, inverse);
}

}  // namespace detail

// Amplitude/phase view of the nonnegative-frequency half of a real FFT.
// Bins 0 and F-1 (Nyquist) are real-valued: their phase is exactly 0 or pi.
struct Spectrum {
  Matrix amplitude;               // E x F, nonnegative
  Matrix phase;                   // E x F, radians in (-pi, pi]
  std::size_t original_length = 0;  // T, with F = T/2 + 1
  double fs = 0.0;

  std::size_t electrodes() const { return amplitude.rows; }
  std::size_t bins() const { return amplitude.cols; }

  double bin_hz(std::size_t k) const {
    return static_cast<double>(k) * fs / static_cast<double>(original_length);
  }

  void validate() const {
    if (!amplitude.same_shape(phase)) throw std::invalid_argument("Spectrum: shape mismatch");
    if (amplitude.cols != original_length / 2 + 1 || original_length % 2 != 0)
      throw std::invalid_argument("Spectrum: F must equal T/2 + 1 with T even");
    for (double a : amplitude.data)
      if (!(a >= 0.0)) throw std::invalid_argument("Spectrum: negative amplitude");
    for (std::size_t e = 0; e < amplitude.rows; ++e)
      for (std::size_t k : {std::size_t(0), amplitude.cols - 1}) {
        double p = phase(e, k);
        if (p != 0.0 && p != M_PI)
          throw std::invalid_argument("Spectrum: real-valued bin with nonzero phase");
      }
  }
};

inline Spectrum rfft(const Segment& seg) {
  seg.validate();
  const std::size_t E = seg.electrodes();
  const std::size_t T = seg.length();
  const std::size_t F = T / 2 + 1;
  Spectrum sp;
  sp.amplitude = Matrix(E, F);
  sp.phase = Matrix(E, F);
  sp.original_length = T;
  sp.fs = seg.fs;

  std::vector<detail::cplx> row(T);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t t = 0; t < T; ++t) row[t] = detail::cplx(seg.data(e, t), 0.0);
    detail::fft_inplace(row, false);
    for (std::size_t k = 0; k < F; ++k) {
      if (k == 0 || k == F - 1) {
        // real bins: drop the (numerically tiny) imaginary part
        double re = row[k].real();
        sp.amplitude(e, k) = std::abs(re);
        sp.phase(e, k) = re >= 0.0 ? 0.0 : M_PI;
      } else {
        sp.amplitude(e, k) = std::abs(row[k]);
        sp.phase(e, k) = std::arg(row[k]);
      }
    }
  }
  return sp;
}

// Inverse of rfft: rebuilds the full conjugate-symmetric spectrum from bins
// 0..T/2, so the output is real by construction.
inline Matrix irfft(const Spectrum& sp) {
  sp.validate();
  const std::size_t E = sp.electrodes();
  const std::size_t F = sp.bins();
  const std::size_t T = sp.original_length;
  Matrix out(E, T);

  std::vector<detail::cplx> row(T);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t k = 0; k < F; ++k) {
      double a = sp.amplitude(e, k);
      double p = sp.phase(e, k);
      row[k] = detail::cplx(a * std::cos(p), a * std::sin(p));
    }
    row[0] = detail::cplx(row[0].real(), 0.0);
    row[F - 1] = detail::cplx(row[F - 1].real(), 0.0);
    for (std::size_t k = F; k < T; ++k) row[k] = std::conj(row[T - k]);
    detail::fft_inplace(row, true);
    const double scale = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) out(e, t) = row[t].real() * scale;
  }
  return out;
}

}  // namespace sbk
