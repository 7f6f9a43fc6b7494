#pragma once

#include <stdexcept>
#include <tuple>

#include "sbk/core.hpp"

namespace sbk {

// One multichannel time-series sample: E x T matrix plus recording metadata.
struct Segment {
  Matrix data;       // E x T
  double fs = 0.0;   // Hz
  int label = 0;     // class index in [0, C)
  int subject = 0;

  std::size_t electrodes() const { return data.rows; }
  std::size_t length() const { return data.cols; }

  void validate() const {
    if (data.rows < 1) throw std::invalid_argument("Segment: E must be >= 1");
    if (data.cols < 2 || data.cols % 2 != 0)
      throw std::invalid_argument("Segment: T must be even and >= 2");
    if (fs <= 0.0) throw std::invalid_argument("Segment: fs must be positive");
    if (!data.all_finite()) throw std::invalid_argument("Segment: non-finite entries");
  }
};

inline void require_compatible(const Segment& a, const Segment& b) {
  if (!a.data.same_shape(b.data) || a.fs != b.fs)
    throw std::invalid_argument("segments differ in shape or sampling rate");
}

// Global z-normalization over all entries of the segment.
// Returns (normalized segment, mean, std). Population std.
inline std::tuple<Segment, double, double> znormalize(const Segment& seg) {
  const auto& d = seg.data.data;
  if (d.empty()) throw std::invalid_argument("znormalize: empty segment");
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  var /= static_cast<double>(d.size());
  double sd = std::sqrt(var);
  if (sd <= 0.0) throw std::invalid_argument("znormalize: constant segment (std = 0)");
  Segment out = seg;
  for (double& x : out.data.data) x = (x - mean) / sd;
  return {out, mean, sd};
}

inline Segment denormalize(const Segment& seg, double mean, double sd) {
  Segment out = seg;
  for (double& x : out.data.data) x = x * sd + mean;
  return out;
}

}  // namespace sbk
