#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbk/attacks.hpp"
#include "sbk/dataset.hpp"
#include "sbk/defense.hpp"
#include "sbk/model.hpp"
#include "sbk/optimize.hpp"
#include "sbk/signal.hpp"

namespace sbk {

// ---------------------------------------------------------------------------
// Preprocessing battery
// ---------------------------------------------------------------------------

struct PreprocessStep {
  enum class Kind { none, remove_below, remove_above, downsample };
  Kind kind = Kind::none;
  double value = 0.0;  // cutoff in Hz, or keep ratio for downsampling
  std::string name() const {
    switch (kind) {
      case Kind::none: return "none";
      case Kind::remove_below: return "remove_below_" + std::to_string(value);
      case Kind::remove_above: return "remove_above_" + std::to_string(value);
      case Kind::downsample: return "downsample_" + std::to_string(value);
    }
    return "?";
  }
};

inline Segment apply_preprocess(const PreprocessStep& st, const Segment& s) {
  switch (st.kind) {
    case PreprocessStep::Kind::none: return s;
    case PreprocessStep::Kind::remove_below:
      return spectral_filter(s, FilterMode::remove_below, st.value);
    case PreprocessStep::Kind::remove_above:
      return spectral_filter(s, FilterMode::remove_above, st.value);
    case PreprocessStep::Kind::downsample: return downsample(s, st.value);
  }
  throw std::logic_error("apply_preprocess: unreachable");
}

inline Dataset apply_preprocess(const PreprocessStep& st, const Dataset& d) {
  Dataset out;
  out.reserve(d.size());
  for (const auto& s : d) out.push_back(apply_preprocess(st, s));
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class StrategySource { optimize, random, file };

struct ExperimentConfig {
  DatasetManifest manifest = default_manifest();
  std::string dataset_path;  // if set, load instead of generating

  std::vector<std::pair<int, int>> pairs = {{0, 1}};  // (poison, test) subjects
  std::vector<std::uint64_t> seeds = {1};

  StrategySource strategy_source = StrategySource::optimize;
  std::string strategy_file;
  OptimizeConfig optimize;

  ClassifierSpec victim;
  TrainConfig victim_train;
  double rho = 0.4;
  TriggerPolicy trigger_policy = TriggerPolicy::first;

  std::vector<PreprocessStep> battery;
  std::vector<std::string> defenses;  // neural_cleanse | strip | spectral_signature | fine_prune
  std::size_t defense_sample_cap = 32;

  std::string out_dir;

  void validate() const {
    manifest.validate();
    if (pairs.empty()) throw std::invalid_argument("config: no subject pairs");
    if (seeds.empty()) throw std::invalid_argument("config: no seeds");
    if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("config: rho in [0, 1)");
    if (strategy_source == StrategySource::file && strategy_file.empty())
      throw std::invalid_argument("config: strategy file source needs a path");
    for (const auto& d : defenses)
      if (d != "neural_cleanse" && d != "strip" && d != "spectral_signature" &&
          d != "fine_prune")
        throw std::invalid_argument("config: unknown defense " + d);
  }
};

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

struct BatteryRow {
  std::string step;
  double ca = 0.0;
  double asr = 0.0;
  bool failed = false;
  std::string error;
};

struct DefenseSummary {
  std::string name;
  json details;  // defense-specific payload
  bool failed = false;
  std::string error;
};

struct RunResult {
  int poison_subject = 0;
  int test_subject = 0;
  std::uint64_t seed = 0;
  double clean_ca = 0.0;      // victim trained without poison
  double ca = 0.0;            // poisoned victim, clean test data
  double asr_overall = 0.0;
  std::vector<double> asr_per_class;
  std::vector<std::vector<double>> reward_traces;  // per class
  std::vector<BatteryRow> battery;
  std::vector<DefenseSummary> defenses;
  double seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  a.n = v.size();
  if (v.empty()) return a;
  for (double x : v) a.mean += x;
  a.mean /= static_cast<double>(v.size());
  for (double x : v) a.stddev += (x - a.mean) * (x - a.mean);
  a.stddev = std::sqrt(a.stddev / static_cast<double>(v.size()));
  return a;
}

struct MetricsReport {
  std::vector<RunResult> runs;
  Aggregate ca;
  Aggregate asr;
  Aggregate clean_ca;
};

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<InjectionStrategy> obtain_strategies(const ExperimentConfig& cfg,
                                                        const DatasetSplits& sp,
                                                        const TriggerBank& bank,
                                                        std::uint64_t seed,
                                                        std::vector<std::vector<double>>* traces) {
  OptimizeConfig oc = cfg.optimize;
  oc.seed = seed;
  switch (cfg.strategy_source) {
    case StrategySource::file:
      return load_strategies(cfg.strategy_file);
    case StrategySource::random: {
      SearchResult r = random_search(sp, bank, oc);
      if (traces)
        for (const auto& pc : r.per_class) traces->push_back(pc.trace);
      return r.strategies();
    }
    case StrategySource::optimize: {
      SearchResult r = optimize_strategies(sp, bank, oc);
      if (traces)
        for (const auto& pc : r.per_class) traces->push_back(pc.trace);
      return r.strategies();
    }
  }
  throw std::logic_error("obtain_strategies: unreachable");
}

inline Dataset head(const Dataset& d, std::size_t n) {
  Dataset out(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(std::min(n, d.size())));
  return out;
}

}  // namespace detail

inline RunResult run_single(const ExperimentConfig& cfg, const Dataset& data,
                            int poison_subject, int test_subject, std::uint64_t seed) {
  auto t0 = std::chrono::steady_clock::now();
  RunResult run;
  run.poison_subject = poison_subject;
  run.test_subject = test_subject;
  run.seed = seed;

  const std::size_t C = cfg.manifest.n_classes;
  DatasetSplits sp = split_loso(data, poison_subject, test_subject);
  TriggerBank bank = select_triggers(sp.poison_source, C, cfg.trigger_policy, seed);

  std::vector<InjectionStrategy> strategies =
      detail::obtain_strategies(cfg, sp, bank, seed, &run.reward_traces);

  Dataset poison = build_poison_set(sp.poison_source, bank, strategies, cfg.rho,
                                    sp.poison_source.size(), seed ^ 0x706f69ull);

  ClassifierSpec vspec = cfg.victim;
  vspec.electrodes = cfg.manifest.electrodes;
  vspec.length = cfg.manifest.length;
  vspec.n_classes = C;
  TrainConfig vtrain = cfg.victim_train;

  // reference: same victim trained without poison
  {
    ClassifierSpec cspec = vspec;
    cspec.init_seed = seed ^ 0x636c65616eull;
    Classifier clean_model(cspec);
    TrainConfig ct = vtrain;
    ct.shuffle_seed = cspec.init_seed;
    train(clean_model, sp.train, {}, ct);
    run.clean_ca = evaluate_ca(clean_model, sp.test);
  }

  vspec.init_seed = seed ^ 0x766963ull;
  vtrain.shuffle_seed = vspec.init_seed;
  Classifier victim(vspec);
  train(victim, sp.train, poison, vtrain);

  run.ca = evaluate_ca(victim, sp.test);
  AsrResult asr = evaluate_asr(victim, sp.test, bank, strategies);
  run.asr_overall = asr.overall;
  run.asr_per_class = asr.per_class;

  // preprocessing battery: retrain the victim on preprocessed poisoned data;
  // at evaluation, triggers are injected first and then preprocessed, which is
  // the order a deployed pipeline would apply.
  for (const auto& step : cfg.battery) {
    BatteryRow row;
    row.step = step.name();
    try {
      Dataset ptrain = apply_preprocess(step, sp.train);
      Dataset ppoison = apply_preprocess(step, poison);
      Dataset ptest = apply_preprocess(step, sp.test);

      ClassifierSpec bspec = vspec;
      bspec.length = ptrain.front().data.cols;
      if (bspec.arch == Arch::cnn1d && bspec.length % bspec.pool_width != 0)
        bspec.pool_width = 2;
      Classifier bvictim(bspec);
      TrainConfig bt = vtrain;
      train(bvictim, ptrain, ppoison, bt);
      row.ca = evaluate_ca(bvictim, ptest);

      std::size_t hits = 0, total = 0;
      for (std::size_t c = 0; c < C; ++c)
        for (const auto& s : sp.test) {
          Segment injected = inject_frequency(s, bank.for_class(static_cast<int>(c)),
                                              strategies[c]);
          Segment processed = apply_preprocess(step, injected);
          if (bvictim.predict(processed.data) == static_cast<int>(c)) ++hits;
          ++total;
        }
      row.asr = static_cast<double>(hits) / static_cast<double>(total);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    run.battery.push_back(row);
  }

  // defenses on the poisoned victim
  for (const auto& name : cfg.defenses) {
    DefenseSummary ds;
    ds.name = name;
    try {
      if (name == "neural_cleanse") {
        NeuralCleanseConfig nc;
        nc.max_samples = cfg.defense_sample_cap;
        NeuralCleanseReport rep = neural_cleanse(victim, sp.test, nc, seed);
        ds.details["mask_l1"] = rep.mask_l1;
        ds.details["anomaly_index"] = rep.anomaly_index;
        ds.details["flagged_class"] = rep.flagged_class;
        ds.details["backdoor_detected"] = rep.backdoor_detected;
      } else if (name == "strip") {
        Dataset clean_inputs = detail::head(sp.test, cfg.defense_sample_cap);
        Dataset poisoned_inputs;
        for (std::size_t i = 0; i < clean_inputs.size(); ++i) {
          auto c = static_cast<int>(i % C);
          poisoned_inputs.push_back(inject_frequency(
              clean_inputs[i], bank.for_class(c), strategies[static_cast<std::size_t>(c)]));
        }
        StripReport rep = strip_sweep(victim, clean_inputs, poisoned_inputs,
                                      detail::head(sp.validation, cfg.defense_sample_cap), 20,
                                      StripBlend::add, seed);
        ds.details["auc"] = rep.auc;
        ds.details["n_clean"] = rep.clean_scores.size();
        ds.details["n_poisoned"] = rep.poison_scores.size();
      } else if (name == "spectral_signature") {
        Dataset mixed = sp.train;
        std::vector<bool> flags(sp.train.size(), false);
        for (const auto& s : poison) {
          mixed.push_back(s);
          flags.push_back(true);
        }
        SpectralSignatureReport rep = spectral_signature(victim, mixed, flags, seed);
        ds.details["poison_capture"] = rep.poison_capture;
        ds.details["skipped_classes"] = rep.n_skipped_classes;
      } else if (name == "fine_prune") {
        FinePruneConfig fp;
        Dataset cal = detail::head(sp.validation, cfg.defense_sample_cap);
        auto curve = fine_prune(victim, cal, sp.test,
                                [&](const Classifier& m) {
                                  return evaluate_asr(m, sp.test, bank, strategies).overall;
                                },
                                fp);
        json jc = json::array();
        for (const auto& p : curve)
          jc.push_back({{"ratio", p.ratio},
                        {"n_pruned", p.n_pruned},
                        {"ca", p.ca},
                        {"asr", p.asr}});
        ds.details["curve"] = jc;
      }
    } catch (const std::exception& e) {
      ds.failed = true;
      ds.error = e.what();
    }
    run.defenses.push_back(ds);
  }

  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

inline MetricsReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset data;
  if (!cfg.dataset_path.empty()) {
    auto [m, d] = load_dataset(cfg.dataset_path);
    (void)m;
    data = std::move(d);
  } else {
    data = generate_synthetic(cfg.manifest, cfg.seeds.front());
  }

  MetricsReport rep;
  for (auto [p, t] : cfg.pairs)
    for (std::uint64_t seed : cfg.seeds) {
      RunResult run;
      try {
        run = run_single(cfg, data, p, t, seed);
      } catch (const std::exception& e) {
        run.poison_subject = p;
        run.test_subject = t;
        run.seed = seed;
        run.failed = true;
        run.error = e.what();
      }
      rep.runs.push_back(std::move(run));
    }

  std::vector<double> cas, asrs, cleans;
  for (const auto& r : rep.runs)
    if (!r.failed) {
      cas.push_back(r.ca);
      asrs.push_back(r.asr_overall);
      cleans.push_back(r.clean_ca);
    }
  rep.ca = aggregate(cas);
  rep.asr = aggregate(asrs);
  rep.clean_ca = aggregate(cleans);
  return rep;
}

// ---------------------------------------------------------------------------
// Transferability: optimize against each surrogate spec, attack each victim.
// ---------------------------------------------------------------------------

struct TransferCell {
  std::string surrogate;
  std::string victim;
  double ca = 0.0;
  double asr = 0.0;
  bool failed = false;
  std::string error;
};

inline std::vector<TransferCell> transfer_matrix(const ExperimentConfig& cfg,
                                                 const std::vector<ClassifierSpec>& specs) {
  cfg.validate();
  if (specs.empty()) throw std::invalid_argument("transfer_matrix: no specs");
  Dataset data = generate_synthetic(cfg.manifest, cfg.seeds.front());
  auto [p, t] = cfg.pairs.front();
  std::uint64_t seed = cfg.seeds.front();
  DatasetSplits sp = split_loso(data, p, t);
  const std::size_t C = cfg.manifest.n_classes;
  TriggerBank bank = select_triggers(sp.poison_source, C, cfg.trigger_policy, seed);

  std::vector<TransferCell> cells;
  for (const auto& fspec : specs) {
    OptimizeConfig oc = cfg.optimize;
    oc.seed = seed;
    oc.surrogate = fspec;
    oc.surrogate.electrodes = cfg.manifest.electrodes;
    oc.surrogate.length = cfg.manifest.length;
    oc.surrogate.n_classes = C;
    std::vector<InjectionStrategy> strategies;
    std::string ferr;
    try {
      strategies = optimize_strategies(sp, bank, oc).strategies();
    } catch (const std::exception& e) {
      ferr = e.what();
    }
    for (const auto& vspec_in : specs) {
      TransferCell cell;
      cell.surrogate = arch_name(fspec.arch);
      cell.victim = arch_name(vspec_in.arch);
      if (!ferr.empty()) {
        cell.failed = true;
        cell.error = ferr;
        cells.push_back(cell);
        continue;
      }
      try {
        Dataset poison = build_poison_set(sp.poison_source, bank, strategies, cfg.rho,
                                          sp.poison_source.size(), seed ^ 0x706f69ull);
        ClassifierSpec vspec = vspec_in;
        vspec.electrodes = cfg.manifest.electrodes;
        vspec.length = cfg.manifest.length;
        vspec.n_classes = C;
        vspec.init_seed = seed ^ 0x766963ull;
        Classifier victim(vspec);
        TrainConfig vt = cfg.victim_train;
        vt.shuffle_seed = vspec.init_seed;
        train(victim, sp.train, poison, vt);
        cell.ca = evaluate_ca(victim, sp.test);
        cell.asr = evaluate_asr(victim, sp.test, bank, strategies).overall;
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline json run_to_json(const RunResult& r) {
  json j;
  j["poison_subject"] = r.poison_subject;
  j["test_subject"] = r.test_subject;
  j["seed"] = r.seed;
  j["failed"] = r.failed;
  if (r.failed) {
    j["error"] = r.error;
    return j;
  }
  j["clean_ca"] = r.clean_ca;
  j["ca"] = r.ca;
  j["asr_overall"] = r.asr_overall;
  j["asr_per_class"] = r.asr_per_class;
  json traces = json::array();
  for (const auto& tr : r.reward_traces) {
    json t = json::array();
    for (double v : tr) {
      if (std::isfinite(v))
        t.push_back(v);
      else
        t.push_back(nullptr);
    }
    traces.push_back(t);
  }
  j["reward_traces"] = traces;
  json battery = json::array();
  for (const auto& b : r.battery) {
    json row = {{"step", b.step}, {"failed", b.failed}};
    if (b.failed)
      row["error"] = b.error;
    else {
      row["ca"] = b.ca;
      row["asr"] = b.asr;
    }
    battery.push_back(row);
  }
  j["battery"] = battery;
  json defs = json::array();
  for (const auto& d : r.defenses) {
    json row = {{"name", d.name}, {"failed", d.failed}};
    if (d.failed)
      row["error"] = d.error;
    else
      row["details"] = d.details;
    defs.push_back(row);
  }
  j["defenses"] = defs;
  return j;
}

inline json report_to_json(const MetricsReport& rep, bool include_timings = false) {
  json j;
  j["runs"] = json::array();
  for (const auto& r : rep.runs) {
    json rj = run_to_json(r);
    if (include_timings) rj["seconds"] = r.seconds;
    j["runs"].push_back(rj);
  }
  auto agg = [](const Aggregate& a) {
    return json{{"mean", a.mean}, {"stddev", a.stddev}, {"n", a.n}};
  };
  j["aggregate"] = {{"ca", agg(rep.ca)}, {"asr", agg(rep.asr)}, {"clean_ca", agg(rep.clean_ca)}};
  return j;
}

// ---------------------------------------------------------------------------
// Config file parsing (JSON document)
// ---------------------------------------------------------------------------

inline PreprocessStep preprocess_from_json(const json& j) {
  PreprocessStep st;
  std::string k = j.at("kind").get<std::string>();
  if (k == "none")
    st.kind = PreprocessStep::Kind::none;
  else if (k == "remove_below")
    st.kind = PreprocessStep::Kind::remove_below;
  else if (k == "remove_above")
    st.kind = PreprocessStep::Kind::remove_above;
  else if (k == "downsample")
    st.kind = PreprocessStep::Kind::downsample;
  else
    throw std::invalid_argument("config: unknown preprocessing step " + k);
  st.value = j.value("value", 0.0);
  return st;
}

inline ClassifierSpec spec_from_config_json(const json& j, const ClassifierSpec& base) {
  ClassifierSpec s = base;
  if (j.contains("arch")) s.arch = arch_from_name(j["arch"].get<std::string>());
  if (j.contains("hidden")) s.hidden = j["hidden"].get<std::vector<std::size_t>>();
  if (j.contains("spatial_filters")) s.spatial_filters = j["spatial_filters"].get<std::size_t>();
  if (j.contains("temporal_filters"))
    s.temporal_filters = j["temporal_filters"].get<std::size_t>();
  if (j.contains("temporal_kernel")) s.temporal_kernel = j["temporal_kernel"].get<std::size_t>();
  if (j.contains("pool_width")) s.pool_width = j["pool_width"].get<std::size_t>();
  return s;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("schema_version") && j["schema_version"].get<int>() != 1)
    throw std::invalid_argument("config: unsupported schema version");
  if (j.contains("manifest")) cfg.manifest = manifest_from_json(j["manifest"]);
  cfg.dataset_path = j.value("dataset_path", std::string{});
  if (j.contains("pairs")) {
    cfg.pairs.clear();
    for (const auto& p : j["pairs"])
      cfg.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  }
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("strategy_source")) {
    std::string s = j["strategy_source"].get<std::string>();
    if (s == "optimize")
      cfg.strategy_source = StrategySource::optimize;
    else if (s == "random")
      cfg.strategy_source = StrategySource::random;
    else if (s == "file")
      cfg.strategy_source = StrategySource::file;
    else
      throw std::invalid_argument("config: unknown strategy source " + s);
  }
  cfg.strategy_file = j.value("strategy_file", std::string{});
  if (j.contains("optimize")) {
    const json& o = j["optimize"];
    cfg.optimize.iterations = o.value("iterations", cfg.optimize.iterations);
    cfg.optimize.gamma = o.value("gamma", cfg.optimize.gamma);
    cfg.optimize.beta = o.value("beta", cfg.optimize.beta);
    cfg.optimize.alpha = o.value("alpha", cfg.optimize.alpha);
    cfg.optimize.lambda = o.value("lambda", cfg.optimize.lambda);
    cfg.optimize.mu = o.value("mu", cfg.optimize.mu);
    cfg.optimize.nu = o.value("nu", cfg.optimize.nu);
    cfg.optimize.policy_lr = o.value("policy_lr", cfg.optimize.policy_lr);
    cfg.optimize.reward_on_test = o.value("reward_on_test", cfg.optimize.reward_on_test);
    if (o.contains("surrogate"))
      cfg.optimize.surrogate = spec_from_config_json(o["surrogate"], cfg.optimize.surrogate);
    if (o.contains("surrogate_epochs"))
      cfg.optimize.surrogate_train.epochs = o["surrogate_epochs"].get<std::size_t>();
    cfg.optimize.surrogate_warmup_epochs =
        o.value("surrogate_warmup_epochs", cfg.optimize.surrogate_warmup_epochs);
  }
  if (j.contains("victim")) cfg.victim = spec_from_config_json(j["victim"], cfg.victim);
  if (j.contains("train")) {
    const json& t = j["train"];
    cfg.victim_train.lr = t.value("lr", cfg.victim_train.lr);
    cfg.victim_train.batch_size = t.value("batch_size", cfg.victim_train.batch_size);
    cfg.victim_train.epochs = t.value("epochs", cfg.victim_train.epochs);
  }
  cfg.rho = j.value("rho", cfg.rho);
  if (j.contains("trigger_policy"))
    cfg.trigger_policy = j["trigger_policy"].get<std::string>() == "random"
                             ? TriggerPolicy::random
                             : TriggerPolicy::first;
  if (j.contains("battery"))
    for (const auto& b : j["battery"]) cfg.battery.push_back(preprocess_from_json(b));
  if (j.contains("defenses")) cfg.defenses = j["defenses"].get<std::vector<std::string>>();
  cfg.defense_sample_cap = j.value("defense_sample_cap", cfg.defense_sample_cap);
  cfg.out_dir = j.value("out_dir", std::string{});
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path.string());
  return config_from_json(json::parse(f));
}

// ---------------------------------------------------------------------------
// Plot-data exports
// ---------------------------------------------------------------------------

// One panel per class: clean trace, trigger-injected trace, and residual for
// electrode 0. T rows by 3C columns.
inline void export_residual_traces(const std::filesystem::path& path, const Dataset& samples,
                                   const TriggerBank& bank,
                                   const std::vector<InjectionStrategy>& strategies) {
  const std::size_t C = strategies.size();
  if (samples.size() < C)
    throw std::invalid_argument("export_residual_traces: need one sample per class");
  const std::size_t T = samples.front().data.cols;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows(T, std::vector<double>(3 * C, 0.0));
  for (std::size_t c = 0; c < C; ++c) {
    const Segment& clean = samples[c];
    Segment poisoned =
        inject_frequency(clean, bank.for_class(static_cast<int>(c)), strategies[c]);
    header.push_back("clean_" + std::to_string(c));
    header.push_back("poisoned_" + std::to_string(c));
    header.push_back("residual_" + std::to_string(c));
    for (std::size_t t = 0; t < T; ++t) {
      rows[t][3 * c + 0] = clean.data(0, t);
      rows[t][3 * c + 1] = poisoned.data(0, t);
      rows[t][3 * c + 2] = poisoned.data(0, t) - clean.data(0, t);
    }
  }
  write_csv(path, header, rows);
}

// Histogram with explicit bin edges; counts sum to the sample count.
inline void export_histogram(const std::filesystem::path& path,
                             const std::vector<double>& values, std::size_t n_bins) {
  if (values.empty() || n_bins == 0)
    throw std::invalid_argument("export_histogram: empty input");
  double lo = values.front(), hi = values.front();
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;
  std::vector<std::size_t> counts(n_bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(n_bins));
    if (b >= n_bins) b = n_bins - 1;
    counts[b]++;
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t b = 0; b < n_bins; ++b) {
    double w = (hi - lo) / static_cast<double>(n_bins);
    rows.push_back({lo + static_cast<double>(b) * w, lo + static_cast<double>(b + 1) * w,
                    static_cast<double>(counts[b])});
  }
  write_csv(path, {"bin_lo", "bin_hi", "count"}, rows);
}

inline void export_report(const std::filesystem::path& dir, const MetricsReport& rep) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "report.json");
  if (!f) throw std::runtime_error("export_report: cannot write report");
  f << report_to_json(rep).dump(2) << "\n";

  // battery table CSV
  std::vector<std::vector<double>> rows;
  std::ofstream bf(dir / "battery.csv");
  bf << "poison_subject,test_subject,seed,step,ca,asr,failed\n";
  bf.precision(12);
  for (const auto& r : rep.runs)
    for (const auto& b : r.battery)
      bf << r.poison_subject << "," << r.test_subject << "," << r.seed << "," << b.step << ","
         << b.ca << "," << b.asr << "," << (b.failed ? 1 : 0) << "\n";
}

}  // namespace sbk
