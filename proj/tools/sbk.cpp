// Command-line front end: dataset generation, strategy search, poisoning,
// training, evaluation, defenses, and full experiment runs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sbk/attacks.hpp"
#include "sbk/harness.hpp"

using namespace sbk;
namespace fs = std::filesystem;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open " + path);
  return json::parse(f);
}

struct SplitArgs {
  std::string data;
  int poison_subject = 0;
  int test_subject = 1;
};

void add_split_options(CLI::App* cmd, SplitArgs& a) {
  cmd->add_option("--data", a.data, "dataset directory")->required();
  cmd->add_option("--poison-subject", a.poison_subject, "poison-source subject id");
  cmd->add_option("--test-subject", a.test_subject, "held-out test subject id");
}

std::pair<DatasetManifest, DatasetSplits> load_splits(const SplitArgs& a) {
  auto [m, d] = load_dataset(a.data);
  return {m, split_loso(d, a.poison_subject, a.test_subject)};
}

OptimizeConfig make_opt_config(const DatasetManifest& m, std::size_t iterations,
                               std::uint64_t seed, std::size_t jobs, bool paper_faithful,
                               const std::string& surrogate_arch, std::size_t surrogate_epochs) {
  OptimizeConfig oc;
  oc.iterations = iterations;
  oc.seed = seed;
  oc.n_threads = jobs;
  oc.reward_on_test = paper_faithful;
  oc.surrogate.arch = arch_from_name(surrogate_arch);
  oc.surrogate.electrodes = m.electrodes;
  oc.surrogate.length = m.length;
  oc.surrogate.n_classes = m.n_classes;
  oc.surrogate_train.epochs = surrogate_epochs;
  return oc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frequency-domain backdoor toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out;
  std::size_t jobs = 0;
  bool paper_faithful = false;
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--out", out, "output path");
  app.add_option("--jobs", jobs, "worker threads (0 = auto)");
  app.add_flag("--paper-faithful", paper_faithful,
               "score strategy candidates on the test split instead of validation");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_config;
  gen->add_option("--config", gen_config, "manifest JSON (defaults used if omitted)");

  // split
  auto* split = app.add_subcommand("split", "report a leave-one-subject-out split");
  SplitArgs split_args;
  add_split_options(split, split_args);

  // optimize
  auto* opt = app.add_subcommand("optimize", "search injection strategies");
  SplitArgs opt_args;
  add_split_options(opt, opt_args);
  std::string method = "pg";
  std::size_t iterations = 50;
  std::string surrogate_arch = "mlp";
  std::size_t surrogate_epochs = 15;
  std::size_t ga_population = 10;
  opt->add_option("--method", method, "pg | random | genetic")->capture_default_str();
  opt->add_option("--iterations", iterations, "evaluation budget per class")
      ->capture_default_str();
  opt->add_option("--surrogate", surrogate_arch, "surrogate architecture")
      ->capture_default_str();
  opt->add_option("--surrogate-epochs", surrogate_epochs, "surrogate training epochs")
      ->capture_default_str();
  opt->add_option("--population", ga_population, "genetic population size")
      ->capture_default_str();

  // poison
  auto* poison = app.add_subcommand("poison", "build a clean-label poison set");
  SplitArgs poison_args;
  add_split_options(poison, poison_args);
  std::string strategies_path;
  double rho = 0.4;
  poison->add_option("--strategies", strategies_path, "strategy JSON file")->required();
  poison->add_option("--rho", rho, "poisoning ratio")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train a victim classifier");
  SplitArgs train_args;
  add_split_options(tr, train_args);
  std::string train_strategies;
  std::string victim_arch = "cnn1d";
  std::size_t epochs = 100;
  double train_rho = 0.4;
  tr->add_option("--strategies", train_strategies, "strategy JSON (omit for a clean model)");
  tr->add_option("--arch", victim_arch, "victim architecture")->capture_default_str();
  tr->add_option("--epochs", epochs, "training epochs")->capture_default_str();
  tr->add_option("--rho", train_rho, "poisoning ratio")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate clean accuracy and attack success");
  SplitArgs eval_args;
  add_split_options(ev, eval_args);
  std::string model_path, eval_strategies;
  ev->add_option("--model", model_path, "model checkpoint")->required();
  ev->add_option("--strategies", eval_strategies, "strategy JSON file")->required();

  // defend
  auto* def = app.add_subcommand("defend", "run a defense against a trained model");
  SplitArgs def_args;
  add_split_options(def, def_args);
  std::string def_model, def_strategies, defense = "neural_cleanse";
  double def_rho = 0.4;
  def->add_option("--model", def_model, "model checkpoint")->required();
  def->add_option("--strategies", def_strategies, "strategy JSON file")->required();
  def->add_option("--defense", defense,
                  "neural_cleanse | strip | spectral_signature | fine_prune")
      ->capture_default_str();
  def->add_option("--rho", def_rho, "poisoning ratio for the mixed set")
      ->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "run a full configured experiment");
  std::string run_config;
  run->add_option("--config", run_config, "experiment config JSON")->required();

  // export-plots
  auto* plots = app.add_subcommand("export-plots", "export residual-trace plot data");
  SplitArgs plot_args;
  add_split_options(plots, plot_args);
  std::string plot_strategies;
  plots->add_option("--strategies", plot_strategies, "strategy JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // bad arguments are config errors
  }

  try {
    if (*gen) {
      if (out.empty()) throw std::invalid_argument("gen-data: --out required");
      DatasetManifest m = default_manifest();
      if (!gen_config.empty()) m = manifest_from_json(read_json_file(gen_config));
      Dataset d = generate_synthetic(m, seed);
      save_dataset(out, m, d);
      std::cout << "wrote " << d.size() << " segments to " << out << "\n";
    } else if (*split) {
      auto [m, sp] = load_splits(split_args);
      (void)m;
      json j = {{"train", sp.train.size()},
                {"poison_source", sp.poison_source.size()},
                {"test", sp.test.size()},
                {"validation", sp.validation.size()}};
      std::cout << j.dump(2) << "\n";
    } else if (*opt) {
      if (out.empty()) throw std::invalid_argument("optimize: --out required");
      auto [m, sp] = load_splits(opt_args);
      TriggerBank bank = select_triggers(sp.poison_source, m.n_classes, TriggerPolicy::first);
      OptimizeConfig oc = make_opt_config(m, iterations, seed, jobs, paper_faithful,
                                          surrogate_arch, surrogate_epochs);
      SearchResult res;
      if (method == "pg")
        res = optimize_strategies(sp, bank, oc);
      else if (method == "random")
        res = random_search(sp, bank, oc);
      else if (method == "genetic") {
        GeneticConfig gc;
        gc.population = ga_population;
        res = genetic_search(sp, bank, oc, gc);
      } else
        throw std::invalid_argument("optimize: unknown method " + method);
      save_strategies(out, res, m.fs, m.length, method);
      for (const auto& r : res.per_class)
        std::cout << "class " << r.best.target_class << ": reward "
                  << r.best_reward.total << " (ca " << r.best_reward.ca << ", asr "
                  << r.best_reward.asr << ") in " << r.seconds << "s\n";
    } else if (*poison) {
      if (out.empty()) throw std::invalid_argument("poison: --out required");
      auto [m, sp] = load_splits(poison_args);
      TriggerBank bank = select_triggers(sp.poison_source, m.n_classes, TriggerPolicy::first);
      auto strategies = load_strategies(strategies_path);
      Dataset p = build_poison_set(sp.poison_source, bank, strategies, rho, sp.poison_source.size(),
                                   seed);
      save_dataset(out, m, p);
      std::cout << "wrote " << p.size() << " poisoned segments to " << out << "\n";
    } else if (*tr) {
      if (out.empty()) throw std::invalid_argument("train: --out required");
      auto [m, sp] = load_splits(train_args);
      Dataset p;
      if (!train_strategies.empty()) {
        TriggerBank bank =
            select_triggers(sp.poison_source, m.n_classes, TriggerPolicy::first);
        p = build_poison_set(sp.poison_source, bank, load_strategies(train_strategies),
                             train_rho, sp.poison_source.size(), seed);
      }
      ClassifierSpec spec;
      spec.arch = arch_from_name(victim_arch);
      spec.electrodes = m.electrodes;
      spec.length = m.length;
      spec.n_classes = m.n_classes;
      spec.init_seed = seed;
      Classifier model(spec);
      TrainConfig tc;
      tc.epochs = epochs;
      tc.shuffle_seed = seed;
      TrainHistory h = train(model, sp.train, p, tc, &sp.validation);
      model.save(out);
      std::cout << "final train loss " << h.train_loss.back() << ", validation ca "
                << h.val_ca.back() << ", saved to " << out << "\n";
    } else if (*ev) {
      auto [m, sp] = load_splits(eval_args);
      Classifier model = Classifier::load(model_path);
      TriggerBank bank = select_triggers(sp.poison_source, m.n_classes, TriggerPolicy::first);
      auto strategies = load_strategies(eval_strategies);
      double ca = evaluate_ca(model, sp.test);
      AsrResult asr = evaluate_asr(model, sp.test, bank, strategies);
      json j = {{"ca", ca}, {"asr_overall", asr.overall}, {"asr_per_class", asr.per_class}};
      std::cout << j.dump(2) << "\n";
      if (!out.empty()) {
        std::ofstream f(out);
        f << j.dump(2) << "\n";
      }
    } else if (*def) {
      auto [m, sp] = load_splits(def_args);
      Classifier model = Classifier::load(def_model);
      TriggerBank bank = select_triggers(sp.poison_source, m.n_classes, TriggerPolicy::first);
      auto strategies = load_strategies(def_strategies);
      json j;
      if (defense == "neural_cleanse") {
        NeuralCleanseConfig nc;
        auto rep = neural_cleanse(model, sp.test, nc, seed);
        j = {{"mask_l1", rep.mask_l1},
             {"anomaly_index", rep.anomaly_index},
             {"flagged_class", rep.flagged_class},
             {"backdoor_detected", rep.backdoor_detected}};
      } else if (defense == "strip") {
        Dataset poisoned;
        for (std::size_t i = 0; i < sp.test.size(); ++i) {
          auto c = static_cast<int>(i % m.n_classes);
          poisoned.push_back(inject_frequency(sp.test[i], bank.for_class(c),
                                              strategies[static_cast<std::size_t>(c)]));
        }
        StripReport rep = strip_sweep(model, sp.test, poisoned, sp.validation, 100,
                                      StripBlend::add, seed);
        j = {{"auc", rep.auc}};
        if (!out.empty()) export_strip_report(out, rep);
      } else if (defense == "spectral_signature") {
        Dataset poison = build_poison_set(sp.poison_source, bank, strategies, def_rho,
                                          sp.poison_source.size(), seed);
        Dataset mixed = sp.train;
        std::vector<bool> flags(sp.train.size(), false);
        for (const auto& s : poison) {
          mixed.push_back(s);
          flags.push_back(true);
        }
        auto rep = spectral_signature(model, mixed, flags, seed);
        j = {{"poison_capture", rep.poison_capture},
             {"skipped_classes", rep.n_skipped_classes}};
        if (!out.empty()) export_spectral_report(out, rep, flags);
      } else if (defense == "fine_prune") {
        FinePruneConfig fp;
        auto curve = fine_prune(model, sp.validation, sp.test,
                                [&](const Classifier& mm) {
                                  return evaluate_asr(mm, sp.test, bank, strategies).overall;
                                },
                                fp);
        j = json::array();
        for (const auto& pnt : curve)
          j.push_back({{"ratio", pnt.ratio}, {"ca", pnt.ca}, {"asr", pnt.asr}});
        if (!out.empty()) export_prune_curve(out, curve);
      } else {
        throw std::invalid_argument("defend: unknown defense " + defense);
      }
      std::cout << j.dump(2) << "\n";
    } else if (*run) {
      ExperimentConfig cfg = load_config(run_config);
      if (!out.empty()) cfg.out_dir = out;
      cfg.optimize.n_threads = jobs;
      cfg.optimize.reward_on_test = paper_faithful;
      MetricsReport rep = run_experiment(cfg);
      std::cout << report_to_json(rep).dump(2) << "\n";
      if (!cfg.out_dir.empty()) export_report(cfg.out_dir, rep);
    } else if (*plots) {
      if (out.empty()) throw std::invalid_argument("export-plots: --out required");
      auto [m, sp] = load_splits(plot_args);
      TriggerBank bank = select_triggers(sp.poison_source, m.n_classes, TriggerPolicy::first);
      auto strategies = load_strategies(plot_strategies);
      Dataset samples;
      for (std::size_t c = 0; c < m.n_classes; ++c)
        for (const auto& s : sp.test)
          if (s.label == static_cast<int>(c)) {
            samples.push_back(s);
            break;
          }
      fs::create_directories(out);
      export_residual_traces(fs::path(out) / "residual_traces.csv", samples, bank, strategies);
      std::cout << "wrote plot data to " << out << "\n";
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
