#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbk/fft.hpp"
#include "sbk/segment.hpp"
#include "sbk/signal.hpp"

namespace sbk {

using json = nlohmann::json;

struct ClassProfile {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
  std::vector<std::size_t> electrodes;  // where the class oscillation lives
  double boost = 1.0;                   // amplitude boost on the class band
};

struct SubjectVariability {
  double scale_min = 0.8;
  double scale_max = 1.25;
  double noise_exponent = 1.5;   // background spectrum ~ 1/f^kappa
  double band_jitter_hz = 0.0;   // per-subject shift of each class band's edges
};

// Per-segment narrowband contamination (muscle bursts, line-noise pickup):
// each affected segment gets `lines` loud spectral lines, one per spectral
// stratum so every segment is contaminated across the whole spectrum, always
// outside the class-discriminative bands so labels stay band-coded. Each line
// hits a random electrode subset, as real contamination does.
struct ArtifactModel {
  double probability = 0.6;        // chance a segment carries artifact lines
  std::size_t lines = 3;           // loud bins per affected segment (= strata)
  std::size_t electrodes_per_line = 3;
  std::size_t grid_step = 1;       // optional: snap lines to every grid_step-th bin
  double gain_min = 5.0;           // amplitude multiplier range on those bins
  double gain_max = 10.0;
  double lo_hz = 20.0;  // artifacts sit above this frequency (EMG range)
};

struct DatasetManifest {
  std::size_t n_subjects = 10;
  std::size_t n_classes = 3;
  std::size_t electrodes = 8;
  std::size_t length = 128;
  double fs = 128.0;
  std::size_t segments_per_subject_per_class = 60;
  std::uint64_t seed = 1;
  std::vector<ClassProfile> profiles;
  SubjectVariability subject;
  ArtifactModel artifact;
  double white_noise = 0.02;  // flat spectral floor relative to the 1/f background
  // Each class oscillation carries a coupled component at band + offset
  // (cross-frequency coupling); 0 disables the second component.
  double harmonic_offset_hz = 30.0;

  // True if hz falls in the class band or its offset copy.
  static bool in_band(double hz, const ClassProfile& p, double offset, double jitter = 0.0) {
    double lo = p.lo_hz + jitter, hi = p.hi_hz + jitter;
    if (hz >= lo && hz <= hi) return true;
    return offset > 0.0 && hz >= lo + offset && hz <= hi + offset;
  }

  // Frequency bins eligible for artifact lines: above artifact.lo_hz and
  // outside every class band (including offset components).
  std::vector<std::size_t> artifact_candidate_bins() const {
    std::vector<std::size_t> out;
    const std::size_t F = length / 2 + 1;
    for (std::size_t k = 1; k < F; ++k) {
      double hz = static_cast<double>(k) * fs / static_cast<double>(length);
      if (hz < artifact.lo_hz) continue;
      if (artifact.grid_step > 1 && k % artifact.grid_step != 2 % artifact.grid_step) continue;
      bool banded = false;
      for (const auto& p : profiles)
        if (in_band(hz, p, harmonic_offset_hz)) banded = true;
      if (!banded) out.push_back(k);
    }
    return out;
  }

  void validate() const {
    if (n_classes < 2) throw std::invalid_argument("manifest: need at least 2 classes");
    if (profiles.size() != n_classes)
      throw std::invalid_argument("manifest: one spectral profile per class required");
    if (length < 2 || length % 2 != 0)
      throw std::invalid_argument("manifest: T must be even and >= 2");
    for (const auto& p : profiles) {
      if (!(p.lo_hz > 0.0 && p.hi_hz > p.lo_hz && p.hi_hz < fs / 2.0))
        throw std::invalid_argument("manifest: class band outside (0, fs/2)");
      if (harmonic_offset_hz > 0.0 && p.hi_hz + harmonic_offset_hz >= fs / 2.0)
        throw std::invalid_argument("manifest: offset component outside (0, fs/2)");
      if (p.electrodes.empty())
        throw std::invalid_argument("manifest: class electrode subset empty");
      for (std::size_t e : p.electrodes)
        if (e >= electrodes) throw std::invalid_argument("manifest: electrode out of range");
    }
    if (artifact.probability < 0.0 || artifact.probability > 1.0)
      throw std::invalid_argument("manifest: artifact probability outside [0, 1]");
    if (artifact.gain_min < 1.0 || artifact.gain_max < artifact.gain_min)
      throw std::invalid_argument("manifest: artifact gain range invalid (need 1 <= min <= max)");
    if (artifact.probability > 0.0 && artifact.lines > 0 &&
        artifact.lines > artifact_candidate_bins().size())
      throw std::invalid_argument("manifest: more artifact lines than eligible bins");
  }
};

inline DatasetManifest default_manifest() {
  DatasetManifest m;
  // Narrow oscillatory signatures (SSVEP-like): one fundamental line per
  // class plus a coupled component 30 Hz above it, each class driven by its
  // own posterior electrode. Keeping one electrode per class leaves the
  // electrode-averaged line power below the low-frequency noise floor while
  // the per-electrode line stays strongly detectable.
  m.profiles = {
      {12.5, 13.5, {4}, 12.0},
      {22.5, 23.5, {5}, 12.0},
      {32.5, 33.5, {6}, 12.0},
  };
  return m;
}

using Dataset = std::vector<Segment>;

// Deterministic synthetic generator: per segment, a subject-scaled 1/f^kappa
// background plus a band-limited amplitude boost on the class's band and
// electrodes, plus a white spectral floor, plus per-segment narrowband
// artifact lines outside the class bands. Built directly in the frequency
// domain so class identity is a band-power signature.
inline Dataset generate_synthetic(const DatasetManifest& m, std::uint64_t seed) {
  m.validate();
  Dataset out;
  out.reserve(m.n_subjects * m.n_classes * m.segments_per_subject_per_class);
  const std::size_t T = m.length;
  const std::size_t F = T / 2 + 1;
  const std::vector<std::size_t> art_bins = m.artifact_candidate_bins();
  Rng master(seed ^ m.seed);

  for (std::size_t subj = 0; subj < m.n_subjects; ++subj) {
    Rng rng = master.fork(subj);
    double scale = rng.uniform(m.subject.scale_min, m.subject.scale_max);
    for (std::size_t cls = 0; cls < m.n_classes; ++cls) {
      const ClassProfile& prof = m.profiles[cls];
      std::set<std::size_t> class_el(prof.electrodes.begin(), prof.electrodes.end());
      double jitter = (m.subject.band_jitter_hz > 0.0)
                          ? rng.uniform(-m.subject.band_jitter_hz, m.subject.band_jitter_hz)
                          : 0.0;
      for (std::size_t i = 0; i < m.segments_per_subject_per_class; ++i) {
        // line_gain(e, k) multiplies sigma; one line per spectral stratum,
        // each on its own random electrode subset
        Matrix line_gain(m.electrodes, F);
        for (std::size_t e = 0; e < m.electrodes; ++e)
          for (std::size_t k = 0; k < F; ++k) line_gain(e, k) = 1.0;
        if (m.artifact.lines > 0 && m.artifact.probability > 0.0 &&
            rng.uniform(0.0, 1.0) < m.artifact.probability) {
          const std::size_t L = m.artifact.lines;
          const std::size_t ne = std::min(m.artifact.electrodes_per_line, m.electrodes);
          for (std::size_t stratum = 0; stratum < L; ++stratum) {
            std::size_t lo = stratum * art_bins.size() / L;
            std::size_t hi = (stratum + 1) * art_bins.size() / L;
            std::size_t bin = art_bins[lo + rng.index(hi - lo)];
            double gain = rng.uniform(m.artifact.gain_min, m.artifact.gain_max);
            std::vector<std::size_t> els = rng.sample_without_replacement(0, m.electrodes, ne);
            for (std::size_t e : els) line_gain(e, bin) = gain;
          }
        }
        Spectrum sp;
        sp.amplitude = Matrix(m.electrodes, F);
        sp.phase = Matrix(m.electrodes, F);
        sp.original_length = T;
        sp.fs = m.fs;
        // class oscillation amplitude, expressed relative to the white floor
        // so every class's signature clears its local background by the same
        // margin regardless of where it sits on the 1/f slope
        const double osc = (prof.boost - 1.0) * m.white_noise;
        for (std::size_t e = 0; e < m.electrodes; ++e) {
          for (std::size_t k = 1; k < F; ++k) {
            double hz = static_cast<double>(k) * m.fs / static_cast<double>(T);
            double sigma =
                std::pow(hz, -m.subject.noise_exponent) + m.white_noise;
            if (class_el.count(e) &&
                DatasetManifest::in_band(hz, prof, m.harmonic_offset_hz, jitter))
              sigma = std::sqrt(sigma * sigma + osc * osc);
            sigma *= line_gain(e, k);
            double re = rng.normal() * sigma;
            double im = (k == F - 1) ? 0.0 : rng.normal() * sigma;
            double amp = std::sqrt(re * re + im * im) * scale;
            sp.amplitude(e, k) = amp;
            sp.phase(e, k) = (k == F - 1) ? (re >= 0.0 ? 0.0 : M_PI) : std::atan2(im, re);
          }
          sp.amplitude(e, 0) = 0.0;  // zero-mean signals
          sp.phase(e, 0) = 0.0;
        }
        Segment seg;
        seg.data = irfft(sp);
        seg.fs = m.fs;
        seg.label = static_cast<int>(cls);
        seg.subject = static_cast<int>(subj);
        out.push_back(std::move(seg));
      }
    }
  }
  return out;
}

struct DatasetSplits {
  Dataset train;
  Dataset poison_source;
  Dataset test;
  Dataset validation;
};

inline DatasetSplits split_loso(const Dataset& data, int poison_subject, int test_subject,
                                int validation_subject = -1) {
  std::set<int> subjects;
  for (const auto& s : data) subjects.insert(s.subject);
  if (subjects.size() < 4)
    throw std::invalid_argument("split_loso: need at least 4 subjects");
  if (poison_subject == test_subject)
    throw std::invalid_argument("split_loso: poison and test subject must differ");
  if (!subjects.count(poison_subject) || !subjects.count(test_subject))
    throw std::invalid_argument("split_loso: unknown subject id");

  if (validation_subject < 0) {
    for (int s : subjects)
      if (s != poison_subject && s != test_subject) {
        validation_subject = s;
        break;
      }
  }
  if (validation_subject == poison_subject || validation_subject == test_subject ||
      !subjects.count(validation_subject))
    throw std::invalid_argument("split_loso: invalid validation subject");

  DatasetSplits sp;
  for (const auto& s : data) {
    if (s.subject == poison_subject)
      sp.poison_source.push_back(s);
    else if (s.subject == test_subject)
      sp.test.push_back(s);
    else if (s.subject == validation_subject)
      sp.validation.push_back(s);
    else
      sp.train.push_back(s);
  }
  return sp;
}

struct TriggerBank {
  std::vector<Segment> triggers;  // index = class

  const Segment& for_class(int cls) const {
    if (cls < 0 || static_cast<std::size_t>(cls) >= triggers.size())
      throw std::invalid_argument("TriggerBank: unknown class");
    return triggers[static_cast<std::size_t>(cls)];
  }
};

enum class TriggerPolicy { first, random };

inline TriggerBank select_triggers(const Dataset& poison_source, std::size_t n_classes,
                                   TriggerPolicy policy, std::uint64_t seed = 0) {
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < poison_source.size(); ++i) {
    int y = poison_source[i].label;
    if (y >= 0 && static_cast<std::size_t>(y) < n_classes)
      by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  Rng rng(seed);
  TriggerBank bank;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (by_class[c].empty())
      throw std::invalid_argument("select_triggers: class " + std::to_string(c) +
                                  " missing from poison source");
    std::size_t pick = (policy == TriggerPolicy::first)
                           ? by_class[c].front()
                           : by_class[c][rng.index(by_class[c].size())];
    bank.triggers.push_back(poison_source[pick]);
  }
  return bank;
}

// Clean-label poison set: M = round(rho * n_train) samples drawn from the
// poison source, balanced across classes, each injected with its own class's
// trigger and strategy. Labels are kept.
inline Dataset build_poison_set(const Dataset& poison_source, const TriggerBank& bank,
                                const std::vector<InjectionStrategy>& strategies, double rho,
                                std::size_t n_train, std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0)) {
    if (rho == 0.0) return {};
    throw std::invalid_argument("build_poison_set: rho must be in (0, 1)");
  }
  const std::size_t n_classes = bank.triggers.size();
  if (strategies.size() != n_classes)
    throw std::invalid_argument("build_poison_set: strategies must cover all classes");

  const auto M = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n_train)));
  if (M == 0) return {};

  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < poison_source.size(); ++i)
    by_class[static_cast<std::size_t>(poison_source[i].label)].push_back(i);

  // per-class quotas differing by at most 1
  std::vector<std::size_t> quota(n_classes, M / n_classes);
  for (std::size_t c = 0; c < M % n_classes; ++c) quota[c] += 1;

  Rng rng(seed);
  Dataset out;
  out.reserve(M);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (quota[c] > by_class[c].size())
      throw std::invalid_argument("build_poison_set: poison source class " + std::to_string(c) +
                                  " has " + std::to_string(by_class[c].size()) +
                                  " samples, need " + std::to_string(quota[c]));
    std::vector<std::size_t> pool = by_class[c];
    rng.shuffle(pool);
    for (std::size_t i = 0; i < quota[c]; ++i) {
      const Segment& clean = poison_source[pool[i]];
      out.push_back(inject_frequency(clean, bank.for_class(static_cast<int>(c)),
                                     strategies[c]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence. A dataset directory holds `manifest` (JSON key/value tree) and
// one binary file per subject: magic "SBKD", u32 version, u32 n_segments/E/T,
// then per segment a u16 label and E*T float32 little-endian values.
// ---------------------------------------------------------------------------

namespace io {

constexpr std::uint32_t kDatasetVersion = 1;

inline void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u16(std::ofstream& f, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t read_u16(std::ifstream& f) {
  unsigned char b[2];
  f.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void write_f32(std::ofstream& f, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(f, bits);
}

inline float read_f32(std::ifstream& f) {
  std::uint32_t bits = read_u32(f);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace io

inline json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = io::kDatasetVersion;
  j["n_subjects"] = m.n_subjects;
  j["n_classes"] = m.n_classes;
  j["electrodes"] = m.electrodes;
  j["length"] = m.length;
  j["fs"] = m.fs;
  j["segments_per_subject_per_class"] = m.segments_per_subject_per_class;
  j["seed"] = m.seed;
  j["white_noise"] = m.white_noise;
  j["harmonic_offset_hz"] = m.harmonic_offset_hz;
  j["subject"] = {{"scale_min", m.subject.scale_min},
                  {"scale_max", m.subject.scale_max},
                  {"noise_exponent", m.subject.noise_exponent},
                  {"band_jitter_hz", m.subject.band_jitter_hz}};
  j["artifact"] = {{"probability", m.artifact.probability},
                   {"lines", m.artifact.lines},
                   {"electrodes_per_line", m.artifact.electrodes_per_line},
                   {"grid_step", m.artifact.grid_step},
                   {"gain_min", m.artifact.gain_min},
                   {"gain_max", m.artifact.gain_max},
                   {"lo_hz", m.artifact.lo_hz}};
  j["profiles"] = json::array();
  for (const auto& p : m.profiles)
    j["profiles"].push_back({{"lo_hz", p.lo_hz},
                             {"hi_hz", p.hi_hz},
                             {"electrodes", p.electrodes},
                             {"boost", p.boost}});
  return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.n_subjects = j.at("n_subjects").get<std::size_t>();
  m.n_classes = j.at("n_classes").get<std::size_t>();
  m.electrodes = j.at("electrodes").get<std::size_t>();
  m.length = j.at("length").get<std::size_t>();
  m.fs = j.at("fs").get<double>();
  m.segments_per_subject_per_class = j.at("segments_per_subject_per_class").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.white_noise = j.value("white_noise", 0.02);
  m.harmonic_offset_hz = j.value("harmonic_offset_hz", 30.0);
  if (j.contains("subject")) {
    m.subject.scale_min = j["subject"].value("scale_min", 0.8);
    m.subject.scale_max = j["subject"].value("scale_max", 1.25);
    m.subject.noise_exponent = j["subject"].value("noise_exponent", 1.5);
    m.subject.band_jitter_hz = j["subject"].value("band_jitter_hz", 0.0);
  }
  if (j.contains("artifact")) {
    m.artifact.probability = j["artifact"].value("probability", 0.6);
    m.artifact.lines = j["artifact"].value("lines", std::size_t(3));
    m.artifact.electrodes_per_line =
        j["artifact"].value("electrodes_per_line", std::size_t(3));
    m.artifact.grid_step = j["artifact"].value("grid_step", std::size_t(1));
    m.artifact.gain_min = j["artifact"].value("gain_min", 5.0);
    m.artifact.gain_max = j["artifact"].value("gain_max", 10.0);
    m.artifact.lo_hz = j["artifact"].value("lo_hz", 20.0);
  }
  for (const auto& pj : j.at("profiles")) {
    ClassProfile p;
    p.lo_hz = pj.at("lo_hz").get<double>();
    p.hi_hz = pj.at("hi_hz").get<double>();
    p.electrodes = pj.at("electrodes").get<std::vector<std::size_t>>();
    p.boost = pj.at("boost").get<double>();
    m.profiles.push_back(p);
  }
  m.validate();
  return m;
}

inline void save_dataset(const std::filesystem::path& dir, const DatasetManifest& m,
                         const Dataset& data) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream mf(dir / "manifest");
    mf << manifest_to_json(m).dump(2) << "\n";
  }
  std::map<int, Dataset> by_subject;
  for (const auto& s : data) by_subject[s.subject].push_back(s);
  for (const auto& [subj, segs] : by_subject) {
    char name[32];
    std::snprintf(name, sizeof(name), "subject_%03d.bin", subj);
    std::ofstream f(dir / name, std::ios::binary);
    f.write("SBKD", 4);
    io::write_u32(f, io::kDatasetVersion);
    io::write_u32(f, static_cast<std::uint32_t>(segs.size()));
    io::write_u32(f, static_cast<std::uint32_t>(m.electrodes));
    io::write_u32(f, static_cast<std::uint32_t>(m.length));
    for (const auto& s : segs) {
      io::write_u16(f, static_cast<std::uint16_t>(s.label));
      for (double v : s.data.data) io::write_f32(f, static_cast<float>(v));
    }
  }
}

inline std::pair<DatasetManifest, Dataset> load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest");
  if (!mf) throw std::runtime_error("load_dataset: missing manifest in " + dir.string());
  json j = json::parse(mf);
  DatasetManifest m = manifest_from_json(j);

  Dataset data;
  for (std::size_t subj = 0; subj < m.n_subjects * 4 + 64; ++subj) {
    char name[32];
    std::snprintf(name, sizeof(name), "subject_%03zu.bin", subj);
    auto path = dir / name;
    if (!std::filesystem::exists(path)) continue;
    std::ifstream f(path, std::ios::binary);
    char magic[4];
    f.read(magic, 4);
    if (std::strncmp(magic, "SBKD", 4) != 0)
      throw std::runtime_error("load_dataset: bad magic in " + path.string());
    std::uint32_t version = io::read_u32(f);
    if (version != io::kDatasetVersion)
      throw std::runtime_error("load_dataset: unsupported version");
    std::uint32_t n = io::read_u32(f);
    std::uint32_t E = io::read_u32(f);
    std::uint32_t T = io::read_u32(f);
    for (std::uint32_t i = 0; i < n; ++i) {
      Segment s;
      s.label = io::read_u16(f);
      s.subject = static_cast<int>(subj);
      s.fs = m.fs;
      s.data = Matrix(E, T);
      for (double& v : s.data.data) v = io::read_f32(f);
      data.push_back(std::move(s));
    }
  }
  return {m, data};
}

}  // namespace sbk
