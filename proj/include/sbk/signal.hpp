#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "sbk/fft.hpp"
#include "sbk/segment.hpp"

namespace sbk {

// Per-class trigger placement: which electrodes and which rfft bins receive
// the interpolated amplitude. Bin 0 (DC) is never allowed; injecting DC would
// shift the signal baseline.
struct InjectionStrategy {
  int target_class = 0;
  std::vector<std::size_t> electrodes;  // strictly increasing, subset of [0, E)
  std::vector<std::size_t> freq_bins;   // strictly increasing, subset of [1, F); Nyquist allowed
  double alpha = 0.8;                   // interpolation ratio in (0, 1]

  void validate(std::size_t E, std::size_t F) const {
    auto check_set = [](const std::vector<std::size_t>& s, std::size_t lo, std::size_t hi,
                        const char* name) {
      if (s.empty()) throw std::invalid_argument(std::string(name) + ": empty index set");
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < lo || s[i] >= hi)
          throw std::invalid_argument(std::string(name) + ": index out of range");
        if (i > 0 && s[i] <= s[i - 1])
          throw std::invalid_argument(std::string(name) + ": indices must be strictly increasing");
      }
    };
    check_set(electrodes, 0, E, "electrodes");
    check_set(freq_bins, 1, F, "freq_bins");  // excludes DC; Nyquist (F-1) allowed
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw std::invalid_argument("alpha must be in (0, 1]");
  }
};

inline Matrix make_mask(const InjectionStrategy& strategy, std::size_t E, std::size_t F) {
  strategy.validate(E, F);
  Matrix mask(E, F, 0.0);
  for (std::size_t e : strategy.electrodes)
    for (std::size_t k : strategy.freq_bins) mask(e, k) = 1.0;
  return mask;
}

namespace detail {

// Core amplitude interpolation. alpha may be 0 here (validation mode);
// public entry points restrict it to (0, 1].
inline Segment inject_frequency_alpha(const Segment& clean, const Segment& trigger,
                                      const InjectionStrategy& strategy, double alpha) {
  require_compatible(clean, trigger);
  const std::size_t F = clean.length() / 2 + 1;
  strategy.validate(clean.electrodes(), F);
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0, 1]");

  Spectrum sx = rfft(clean);
  Spectrum st = rfft(trigger);
  // Unmasked bins keep the exact floating-point amplitude of the clean input;
  // phase is the clean phase everywhere.
  for (std::size_t e : strategy.electrodes)
    for (std::size_t k : strategy.freq_bins)
      sx.amplitude(e, k) = (1.0 - alpha) * sx.amplitude(e, k) + alpha * st.amplitude(e, k);

  Segment out = clean;
  out.data = irfft(sx);
  out.label = clean.label;  // clean-label poisoning
  return out;
}

}  // namespace detail

inline Segment inject_frequency(const Segment& clean, const Segment& trigger,
                                const InjectionStrategy& strategy) {
  if (!(strategy.alpha > 0.0 && strategy.alpha <= 1.0))
    throw std::invalid_argument("alpha must be in (0, 1]");
  return detail::inject_frequency_alpha(clean, trigger, strategy, strategy.alpha);
}

enum class FilterMode { remove_below, remove_above };

// Ideal (brick-wall) filter: zeroes amplitude at bins strictly below/above the
// cutoff and reconstructs through the inverse transform.
inline Segment spectral_filter(const Segment& seg, FilterMode mode, double cutoff_hz) {
  seg.validate();
  if (!(cutoff_hz > 0.0 && cutoff_hz < seg.fs / 2.0))
    throw std::invalid_argument("cutoff must be in (0, fs/2)");
  Spectrum sp = rfft(seg);
  for (std::size_t e = 0; e < sp.electrodes(); ++e)
    for (std::size_t k = 0; k < sp.bins(); ++k) {
      double hz = sp.bin_hz(k);
      bool zero = (mode == FilterMode::remove_below) ? hz < cutoff_hz : hz > cutoff_hz;
      if (zero) sp.amplitude(e, k) = 0.0;
    }
  Segment out = seg;
  out.data = irfft(sp);
  return out;
}

// Spectral resampling: truncate bins above the new Nyquist and inverse
// transform at the shorter length. Amplitudes scale by T'/T so time-domain
// levels are preserved.
inline Segment downsample(const Segment& seg, double keep_ratio) {
  seg.validate();
  if (!(keep_ratio > 0.0 && keep_ratio < 1.0))
    throw std::invalid_argument("keep_ratio must be in (0, 1)");
  const std::size_t T = seg.length();
  const auto Tn = static_cast<std::size_t>(std::llround(keep_ratio * static_cast<double>(T)));
  if (Tn < 2) throw std::invalid_argument("downsample: resulting length < 2");
  if (Tn % 2 != 0) throw std::invalid_argument("downsample: resulting length must be even");

  Spectrum sp = rfft(seg);
  const std::size_t Fn = Tn / 2 + 1;
  Spectrum out;
  out.amplitude = Matrix(sp.electrodes(), Fn);
  out.phase = Matrix(sp.electrodes(), Fn);
  out.original_length = Tn;
  out.fs = seg.fs * keep_ratio;
  const double scale = static_cast<double>(Tn) / static_cast<double>(T);
  for (std::size_t e = 0; e < sp.electrodes(); ++e) {
    for (std::size_t k = 0; k < Fn; ++k) {
      double a = sp.amplitude(e, k) * scale;
      double p = sp.phase(e, k);
      if (k == Fn - 1 && k != sp.bins() - 1) {
        // the new Nyquist bin was an interior complex bin: keep its real part
        a = std::abs(a * std::cos(p));
        p = (sp.amplitude(e, k) * std::cos(sp.phase(e, k)) >= 0.0) ? 0.0 : M_PI;
      }
      out.amplitude(e, k) = a;
      out.phase(e, k) = p;
    }
  }
  Segment res = seg;
  res.fs = out.fs;
  res.data = irfft(out);
  return res;
}

}  // namespace sbk
