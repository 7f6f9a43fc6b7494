#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sbk/dataset.hpp"
#include "sbk/model.hpp"
#include "sbk/policy.hpp"

namespace sbk {

struct OptimizeConfig {
  std::size_t iterations = 50;  // reward evaluations per class
  double gamma = 0.5;           // electrode ratio
  double beta = 0.1;            // frequency-bin ratio
  double alpha = 0.8;           // injection strength
  double lambda = 2.0;
  double mu = 0.3;
  double nu = 0.005;
  double policy_lr = 0.01;
  bool reward_on_test = false;  // default: score candidates on the validation split
  std::size_t n_threads = 0;    // 0 = one thread per class
  std::uint64_t seed = 0;
  ClassifierSpec surrogate;
  TrainConfig surrogate_train;
  // When > 0, a base surrogate is trained once on the clean training split
  // for this many epochs and every candidate evaluation fine-tunes a copy of
  // it for surrogate_train.epochs with the candidate's poison set. This keeps
  // the per-candidate cost at a few epochs while scoring against a converged
  // classifier. 0 trains each candidate's surrogate from scratch.
  std::size_t surrogate_warmup_epochs = 0;

  OptimizeConfig() {
    surrogate_train.epochs = 15;  // cheap surrogate refits inside the search loop
  }
};

struct ClassSearchResult {
  InjectionStrategy best;
  RewardBreakdown best_reward;
  std::vector<double> trace;  // reward per iteration, NaN where evaluation failed
  double seconds = 0.0;
};

struct SearchResult {
  std::vector<ClassSearchResult> per_class;

  std::vector<InjectionStrategy> strategies() const {
    std::vector<InjectionStrategy> out;
    for (const auto& r : per_class) out.push_back(r.best);
    return out;
  }
};

namespace detail {

// Retrain the surrogate with the candidate's poison set and score it.
// During the search every class-c sample of the poison source is injected,
// so the candidate is judged under maximal poisoning pressure.
inline RewardBreakdown evaluate_candidate(const InjectionStrategy& s, const DatasetSplits& sp,
                                          const TriggerBank& bank, const OptimizeConfig& cfg,
                                          std::uint64_t eval_seed,
                                          const Classifier* warm_base = nullptr) {
  const int c = s.target_class;
  const Segment& trig = bank.for_class(c);
  Dataset poison;
  for (const auto& seg : sp.poison_source)
    if (seg.label == c) poison.push_back(inject_frequency(seg, trig, s));

  ClassifierSpec spec = cfg.surrogate;
  spec.init_seed = eval_seed;
  Classifier model = warm_base ? *warm_base : Classifier(spec);
  TrainConfig tcfg = cfg.surrogate_train;
  tcfg.shuffle_seed = eval_seed ^ 0x7261696eull;
  train(model, sp.train, poison, tcfg);

  const Dataset& eval_set = cfg.reward_on_test ? sp.test : sp.validation;
  double ca = evaluate_ca(model, eval_set);
  std::size_t hits = 0;
  for (const auto& seg : eval_set)
    if (model.predict(inject_frequency(seg, trig, s).data) == c) ++hits;
  double asr = static_cast<double>(hits) / static_cast<double>(eval_set.size());

  const std::size_t F = trig.data.cols / 2 + 1;
  return reward(ca, asr, s, F, cfg.lambda, cfg.mu, cfg.nu);
}

// Train the shared warm-start surrogate on the clean training split, or
// return nothing when warm starting is disabled.
inline std::optional<Classifier> warm_surrogate(const DatasetSplits& sp,
                                                const OptimizeConfig& cfg) {
  if (cfg.surrogate_warmup_epochs == 0) return std::nullopt;
  ClassifierSpec spec = cfg.surrogate;
  std::uint64_t sseed = cfg.seed ^ 0x7761726d7570ull;
  spec.init_seed = splitmix64(sseed);
  std::optional<Classifier> base(std::in_place, spec);
  TrainConfig tcfg = cfg.surrogate_train;
  tcfg.epochs = cfg.surrogate_warmup_epochs;
  tcfg.shuffle_seed = spec.init_seed ^ 0x7261696eull;
  train(*base, sp.train, {}, tcfg);
  return base;
}

inline void check_search_inputs(const DatasetSplits& sp, const TriggerBank& bank,
                                const OptimizeConfig& cfg) {
  if (bank.triggers.empty()) throw std::invalid_argument("search: empty trigger bank");
  if (sp.train.empty() || sp.poison_source.empty() || sp.validation.empty() || sp.test.empty())
    throw std::invalid_argument("search: all dataset splits must be non-empty");
  if (cfg.iterations == 0) throw std::invalid_argument("search: need at least one iteration");
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0))
    throw std::invalid_argument("search: alpha must be in (0, 1]");
}

template <typename PerClassFn>
inline SearchResult run_per_class(const TriggerBank& bank, const OptimizeConfig& cfg,
                                  PerClassFn fn) {
  const std::size_t C = bank.triggers.size();
  SearchResult res;
  res.per_class.resize(C);
  std::vector<std::string> errors(C);

  auto work = [&](std::size_t c) {
    auto t0 = std::chrono::steady_clock::now();
    try {
      res.per_class[c] = fn(static_cast<int>(c));
    } catch (const std::exception& e) {
      errors[c] = e.what();
    }
    res.per_class[c].seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  std::size_t n_threads = cfg.n_threads == 0 ? C : std::min(cfg.n_threads, C);
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < C; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t c = next.fetch_add(1); c < C; c = next.fetch_add(1)) work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t c = 0; c < C; ++c)
    if (!errors[c].empty())
      throw std::runtime_error("search: class " + std::to_string(c) + ": " + errors[c]);
  return res;
}

}  // namespace detail

// Policy-gradient search. One policy per target class, conditioned on that
// class's trigger; each iteration samples a strategy, refits the surrogate,
// and ascends reward * grad(log prob).
inline SearchResult optimize_strategies(const DatasetSplits& sp, const TriggerBank& bank,
                                        const OptimizeConfig& cfg) {
  detail::check_search_inputs(sp, bank, cfg);
  std::optional<Classifier> base = detail::warm_surrogate(sp, cfg);

  return detail::run_per_class(bank, cfg, [&](int c) {
    const Segment& trig = bank.for_class(c);
    PolicyConfig pc;
    pc.electrodes = trig.data.rows;
    pc.length = trig.data.cols;
    pc.freq_bins = trig.data.cols / 2 + 1;
    pc.init_seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(c) + 1));
    PolicyNet policy(pc);

    std::uint64_t sseed = cfg.seed ^ (0xbf58476d1ce4e5b9ull + static_cast<std::uint64_t>(c));
    Rng rng(splitmix64(sseed));
    AdamState adam;
    TrainConfig pcfg;
    pcfg.lr = cfg.policy_lr;

    ClassSearchResult out;
    out.trace.assign(cfg.iterations, std::numeric_limits<double>::quiet_NaN());
    double best = -std::numeric_limits<double>::infinity();

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      PolicyNet::Output logits = policy.forward(trig.data);
      auto [s, lp] = sample_strategy(logits.v1, logits.v2, cfg.gamma, cfg.beta, cfg.alpha, c,
                                     &rng);
      (void)lp;
      RewardBreakdown rb;
      try {
        rb = detail::evaluate_candidate(s, sp, bank, cfg, rng.fork(it).next_u64(),
                                        base ? &*base : nullptr);
      } catch (const std::exception&) {
        continue;  // leave NaN in the trace and move on
      }
      out.trace[it] = rb.total;
      if (rb.total > best) {
        best = rb.total;
        out.best = s;
        out.best_reward = rb;
      }
      std::vector<double> grad =
          policy.logprob_param_grad(trig.data, s.electrodes, s.freq_bins);
      for (double& g : grad) g *= -rb.total;  // gradient ascent on R * log pi
      adam.step(policy.params(), grad, pcfg);
    }
    if (!std::isfinite(best))
      throw std::runtime_error("all candidate evaluations failed");
    return out;
  });
}

// Uniform random baseline with the same evaluation budget.
inline SearchResult random_search(const DatasetSplits& sp, const TriggerBank& bank,
                                  const OptimizeConfig& cfg) {
  detail::check_search_inputs(sp, bank, cfg);
  std::optional<Classifier> base = detail::warm_surrogate(sp, cfg);

  return detail::run_per_class(bank, cfg, [&](int c) {
    const Segment& trig = bank.for_class(c);
    const std::size_t E = trig.data.rows;
    const std::size_t F = trig.data.cols / 2 + 1;
    const std::size_t ke = topk_count(cfg.gamma, E);
    const std::size_t kf = topk_count(cfg.beta, F);

    std::uint64_t sseed = cfg.seed ^ (0x94d049bb133111ebull + static_cast<std::uint64_t>(c));
    Rng rng(splitmix64(sseed));
    ClassSearchResult out;
    out.trace.assign(cfg.iterations, std::numeric_limits<double>::quiet_NaN());
    double best = -std::numeric_limits<double>::infinity();

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      InjectionStrategy s;
      s.target_class = c;
      s.alpha = cfg.alpha;
      s.electrodes = rng.sample_without_replacement(0, E, ke);
      s.freq_bins = rng.sample_without_replacement(1, F, kf);
      RewardBreakdown rb;
      try {
        rb = detail::evaluate_candidate(s, sp, bank, cfg, rng.fork(it).next_u64(),
                                        base ? &*base : nullptr);
      } catch (const std::exception&) {
        continue;
      }
      out.trace[it] = rb.total;
      if (rb.total > best) {
        best = rb.total;
        out.best = s;
        out.best_reward = rb;
      }
    }
    if (!std::isfinite(best))
      throw std::runtime_error("all candidate evaluations failed");
    return out;
  });
}

namespace detail {

// Cardinality-preserving crossover: child indices are drawn from the union
// of both parents' index sets.
inline std::vector<std::size_t> crossover_sets(const std::vector<std::size_t>& a,
                                               const std::vector<std::size_t>& b,
                                               std::size_t k, Rng& rng) {
  std::vector<std::size_t> uni = a;
  uni.insert(uni.end(), b.begin(), b.end());
  std::sort(uni.begin(), uni.end());
  uni.erase(std::unique(uni.begin(), uni.end()), uni.end());
  rng.shuffle(uni);
  uni.resize(k);
  std::sort(uni.begin(), uni.end());
  return uni;
}

// Swap mutation: replace one selected index with one currently unselected.
inline void mutate_set(std::vector<std::size_t>& sel, std::size_t lo, std::size_t hi,
                       Rng& rng) {
  if (sel.size() >= hi - lo) return;  // nothing outside the set
  std::size_t drop = rng.index(sel.size());
  std::size_t candidate;
  do {
    candidate = lo + rng.index(hi - lo);
  } while (std::find(sel.begin(), sel.end(), candidate) != sel.end());
  sel[drop] = candidate;
  std::sort(sel.begin(), sel.end());
}

}  // namespace detail

struct GeneticConfig {
  std::size_t population = 10;
  double mutation_rate = 0.3;
};

// Genetic baseline: tournament selection of size 2, union crossover,
// swap mutation, single-elite survival. The evaluation budget (cfg.iterations)
// counts surrogate refits, matching the other two searches.
inline SearchResult genetic_search(const DatasetSplits& sp, const TriggerBank& bank,
                                   const OptimizeConfig& cfg, const GeneticConfig& gcfg) {
  detail::check_search_inputs(sp, bank, cfg);
  if (gcfg.population < 2)
    throw std::invalid_argument("genetic_search: population must be >= 2");
  std::optional<Classifier> base = detail::warm_surrogate(sp, cfg);

  return detail::run_per_class(bank, cfg, [&](int c) {
    const Segment& trig = bank.for_class(c);
    const std::size_t E = trig.data.rows;
    const std::size_t F = trig.data.cols / 2 + 1;
    const std::size_t ke = topk_count(cfg.gamma, E);
    const std::size_t kf = topk_count(cfg.beta, F);

    std::uint64_t sseed = cfg.seed ^ (0xd6e8feb86659fd93ull + static_cast<std::uint64_t>(c));
    Rng rng(splitmix64(sseed));
    ClassSearchResult out;
    out.trace.assign(cfg.iterations, std::numeric_limits<double>::quiet_NaN());
    double best = -std::numeric_limits<double>::infinity();
    std::size_t used = 0;

    struct Individual {
      InjectionStrategy s;
      double fitness = -std::numeric_limits<double>::infinity();
    };
    std::vector<Individual> pop;

    auto eval = [&](InjectionStrategy& s) {
      if (used >= cfg.iterations) return std::numeric_limits<double>::quiet_NaN();
      double fit = std::numeric_limits<double>::quiet_NaN();
      try {
        RewardBreakdown rb = detail::evaluate_candidate(
            s, sp, bank, cfg, rng.fork(used).next_u64(), base ? &*base : nullptr);
        fit = rb.total;
        out.trace[used] = rb.total;
        if (rb.total > best) {
          best = rb.total;
          out.best = s;
          out.best_reward = rb;
        }
      } catch (const std::exception&) {
      }
      ++used;
      return fit;
    };

    for (std::size_t i = 0; i < gcfg.population && used < cfg.iterations; ++i) {
      Individual ind;
      ind.s.target_class = c;
      ind.s.alpha = cfg.alpha;
      ind.s.electrodes = rng.sample_without_replacement(0, E, ke);
      ind.s.freq_bins = rng.sample_without_replacement(1, F, kf);
      ind.fitness = eval(ind.s);
      pop.push_back(ind);
    }

    auto tournament = [&]() -> const Individual& {
      const Individual& a = pop[rng.index(pop.size())];
      const Individual& b = pop[rng.index(pop.size())];
      // NaN fitness loses against anything
      if (std::isnan(a.fitness)) return b;
      if (std::isnan(b.fitness)) return a;
      return a.fitness >= b.fitness ? a : b;
    };

    while (used < cfg.iterations) {
      std::vector<Individual> next;
      // elitism: keep the single best individual
      std::size_t elite = 0;
      for (std::size_t i = 1; i < pop.size(); ++i) {
        if (std::isnan(pop[elite].fitness) ||
            (!std::isnan(pop[i].fitness) && pop[i].fitness > pop[elite].fitness))
          elite = i;
      }
      next.push_back(pop[elite]);
      while (next.size() < pop.size() && used < cfg.iterations) {
        const Individual& pa = tournament();
        const Individual& pb = tournament();
        Individual child;
        child.s.target_class = c;
        child.s.alpha = cfg.alpha;
        child.s.electrodes = detail::crossover_sets(pa.s.electrodes, pb.s.electrodes, ke, rng);
        child.s.freq_bins = detail::crossover_sets(pa.s.freq_bins, pb.s.freq_bins, kf, rng);
        if (rng.uniform() < gcfg.mutation_rate)
          detail::mutate_set(child.s.electrodes, 0, E, rng);
        if (rng.uniform() < gcfg.mutation_rate)
          detail::mutate_set(child.s.freq_bins, 1, F, rng);
        child.fitness = eval(child.s);
        next.push_back(child);
      }
      if (next.size() < 2) break;
      pop = std::move(next);
    }
    if (!std::isfinite(best))
      throw std::runtime_error("all candidate evaluations failed");
    return out;
  });
}

// ---------------------------------------------------------------------------
// Strategy persistence (JSON)
// ---------------------------------------------------------------------------

inline json strategy_to_json(const InjectionStrategy& s, double fs, std::size_t length,
                             const RewardBreakdown* rb = nullptr) {
  json j;
  j["target_class"] = s.target_class;
  j["electrodes"] = s.electrodes;
  j["freq_bins"] = s.freq_bins;
  std::vector<double> hz;
  for (std::size_t b : s.freq_bins)
    hz.push_back(static_cast<double>(b) * fs / static_cast<double>(length));
  j["freq_hz"] = hz;
  j["alpha"] = s.alpha;
  if (rb) {
    j["reward"] = {{"ca", rb->ca},         {"asr", rb->asr},   {"dis", rb->dis_term},
                   {"hf", rb->hf_term},    {"lambda", rb->lambda}, {"mu", rb->mu},
                   {"nu", rb->nu},         {"total", rb->total}};
  }
  return j;
}

inline InjectionStrategy strategy_from_json(const json& j) {
  InjectionStrategy s;
  s.target_class = j.at("target_class").get<int>();
  s.electrodes = j.at("electrodes").get<std::vector<std::size_t>>();
  s.freq_bins = j.at("freq_bins").get<std::vector<std::size_t>>();
  s.alpha = j.at("alpha").get<double>();
  return s;
}

inline void save_strategies(const std::filesystem::path& path, const SearchResult& res,
                            double fs, std::size_t length, const std::string& method) {
  json j;
  j["method"] = method;
  j["strategies"] = json::array();
  for (const auto& r : res.per_class) {
    json sj = strategy_to_json(r.best, fs, length, &r.best_reward);
    sj["seconds"] = r.seconds;
    sj["trace"] = r.trace;
    j["strategies"].push_back(sj);
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_strategies: cannot open " + path.string());
  f << j.dump(2) << "\n";
}

inline std::vector<InjectionStrategy> load_strategies(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_strategies: cannot open " + path.string());
  json j = json::parse(f);
  std::vector<InjectionStrategy> out;
  for (const auto& sj : j.at("strategies")) out.push_back(strategy_from_json(sj));
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.target_class < b.target_class; });
  return out;
}

}  // namespace sbk
