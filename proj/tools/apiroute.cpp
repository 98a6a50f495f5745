// apiroute: train, evaluate and inspect budget-constrained calling strategies
// over a catalog of paid prediction services.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "apiroute/apiroute.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 2, kValidation = 3, kInfeasible = 4, kIo = 5 };

struct Common {
  std::string data;
  std::string catalog;
  bool strict_labels = false;
  unsigned threads = apiroute::default_thread_count();
};

struct Run {
  std::string command;
  std::vector<std::string> argv;
  json flags = json::object();
  json seeds = json::object();
  json inputs = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const std::string& path) {
    inputs[path] = fmt::format("fnv1a64:{:016x}", apiroute::fnv1a64(apiroute::read_text_file(path)));
  }

  // Manifest written next to `artifact` as <artifact>.manifest.json.
  void manifest(const fs::path& artifact, const std::vector<std::string>& outputs) const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["flags"] = flags;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["tool"] = "apiroute";
    j["version"] = apiroute::kVersion;
    j["duration_seconds"] = secs;
    apiroute::write_text_file(artifact.string() + ".manifest.json", j.dump(2) + "\n");
  }
};

apiroute::ServiceCatalog load_catalog(const Common& c, Run& run) {
  run.input(c.catalog);
  return apiroute::load_catalog(c.catalog);
}

apiroute::AnnotatedDataset load_data(const Common& c, const apiroute::ServiceCatalog& catalog, Run& run) {
  run.input(c.data);
  return apiroute::load_dataset(c.data, catalog, apiroute::LoadOptions{.strict_labels = c.strict_labels});
}

std::optional<std::size_t> resolve_base(const std::string& name, const apiroute::ServiceCatalog& catalog) {
  if (name.empty()) return std::nullopt;
  const auto k = catalog.service_index(name);
  if (!k) throw apiroute::ValidationError(fmt::format("unknown service '{}' for --restrict-base", name));
  return k;
}

std::vector<double> parse_budget_range(const std::string& spec) {
  const auto a = spec.find(':');
  const auto b = spec.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) {
    throw apiroute::ValidationError(fmt::format("--budgets expects lo:hi:steps, got '{}'", spec));
  }
  double lo = 0.0;
  double hi = 0.0;
  int steps = 0;
  try {
    lo = std::stod(spec.substr(0, a));
    hi = std::stod(spec.substr(a + 1, b - a - 1));
    steps = std::stoi(spec.substr(b + 1));
  } catch (const std::exception&) {
    throw apiroute::ValidationError(fmt::format("--budgets expects lo:hi:steps, got '{}'", spec));
  }
  if (steps < 1 || hi < lo || lo < 0.0) throw apiroute::ValidationError("--budgets needs 0 <= lo <= hi and steps >= 1");
  std::vector<double> out;
  for (int s = 0; s < steps; ++s) {
    const double v = steps == 1 ? lo : lo + (hi - lo) * s / (steps - 1);
    out.push_back(apiroute::per_query_from_per_10k(v));
  }
  return out;
}

void add_common(CLI::App* sub, Common& c, bool need_data = true) {
  sub->add_option("--catalog", c.catalog, "Catalog JSON (services with cost_per_10k, labels)")->required();
  auto* d = sub->add_option("--data", c.data, "Annotated replay corpus (CSV)");
  if (need_data) d->required();
  sub->add_flag("--strict-labels", c.strict_labels, "Reject predicted labels outside the label space");
  sub->add_option("--threads", c.threads, "Worker threads (default: APIROUTE_THREADS or hardware)");
}

std::string describe(const apiroute::Strategy& s, const apiroute::ServiceCatalog& catalog) {
  std::string bases;
  for (std::size_t k = 0; k < s.num_services(); ++k) {
    if (s.base_mixture[k] == 0.0) continue;
    if (!bases.empty()) bases += " + ";
    bases += fmt::format("{:.4g}*{}", s.base_mixture[k], catalog.service(k).name);
  }
  return bases;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn and evaluate budget-constrained calling strategies over paid prediction services."};
  app.name("apiroute");
  app.set_help_all_flag("--help-all", "Print help for every subcommand");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(apiroute::kVersion));

  Run run;
  for (int i = 1; i < argc; ++i) run.argv.emplace_back(argv[i]);

  // train
  Common tc;
  double t_budget = 0.0;
  int t_grid = 10;
  std::uint64_t t_seed = 0;
  std::string t_base;
  bool t_uniform = false;
  std::string t_out = "strategy.json";
  auto* train = app.add_subcommand("train", "Train a strategy for a budget");
  add_common(train, tc);
  train->add_option("--budget", t_budget, "Budget per 10,000 queries (catalog price unit)")->required();
  train->add_option("--grid", t_grid, "Quantile grid resolution M")->capture_default_str();
  train->add_option("--seed", t_seed, "Seed recorded in the manifest")->capture_default_str();
  train->add_option("--restrict-base", t_base, "Only consider this service as the base call");
  train->add_flag("--uniform-threshold", t_uniform, "One score threshold per service for all labels");
  train->add_option("--out", t_out, "Strategy output path")->capture_default_str();

  // eval
  Common ec;
  std::string e_strategy;
  std::string e_mode = "expectation";
  std::optional<double> e_budget;
  std::uint64_t e_seed = 0;
  std::string e_out = "report.json";
  std::string e_csv;
  auto* eval = app.add_subcommand("eval", "Replay a strategy on a corpus");
  add_common(eval, ec);
  eval->add_option("--strategy", e_strategy, "Strategy JSON")->required();
  eval->add_option("--mode", e_mode, "expectation | sample | strict")
      ->check(CLI::IsMember({"expectation", "sample", "strict"}))
      ->capture_default_str();
  eval->add_option("--budget", e_budget, "Strict-mode budget per 10,000 queries (default: the strategy's)");
  eval->add_option("--seed", e_seed, "Seed for sampled and strict replay")->capture_default_str();
  eval->add_option("--out", e_out, "Report JSON output path")->capture_default_str();
  eval->add_option("--csv", e_csv, "Also write the report as CSV");

  // sweep
  Common sc;
  std::string s_budgets;
  double s_fraction = 0.7;
  std::uint64_t s_seed = 0;
  int s_grid = 10;
  std::string s_base;
  bool s_uniform = false;
  std::string s_out = "sweep.csv";
  auto* sweep = app.add_subcommand("sweep", "Accuracy/cost trade-off over a range of budgets");
  add_common(sweep, sc);
  sweep->add_option("--budgets", s_budgets, "lo:hi:steps, per 10,000 queries")->required();
  sweep->add_option("--train-fraction", s_fraction, "Fraction of rows used for training")->capture_default_str();
  sweep->add_option("--seed", s_seed, "Seed for the train/test split")->capture_default_str();
  sweep->add_option("--grid", s_grid, "Quantile grid resolution M")->capture_default_str();
  sweep->add_option("--restrict-base", s_base, "Only consider this service as the base call");
  sweep->add_flag("--uniform-threshold", s_uniform, "One score threshold per service for all labels");
  sweep->add_option("--out", s_out, "CSV output path")->capture_default_str();

  // inspect
  Common ic;
  std::string i_what = "model";
  int i_grid = 10;
  std::optional<double> i_budget;
  std::string i_strategy;
  std::string i_out;
  auto* inspect = app.add_subcommand("inspect", "Dump estimated model, value functions or a strategy");
  add_common(inspect, ic, false);
  inspect->add_option("--what", i_what, "model | gfunctions | strategy")
      ->check(CLI::IsMember({"model", "gfunctions", "strategy"}))
      ->capture_default_str();
  inspect->add_option("--grid", i_grid, "Quantile grid resolution M")->capture_default_str();
  inspect->add_option("--budget", i_budget, "Budget per 10,000 queries added as a value-function knot");
  inspect->add_option("--strategy", i_strategy, "Strategy JSON (for --what strategy)");
  inspect->add_option("--out", i_out, "Write JSON here instead of stdout");

  // synth
  std::string y_preset = "fer-like";
  std::size_t y_samples = 4000;
  std::size_t y_services = 3;
  std::size_t y_labels = 2;
  std::uint64_t y_seed = 0;
  std::string y_data = "corpus.csv";
  std::string y_catalog = "catalog.json";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic replay corpus and its catalog");
  synth->add_option("--preset", y_preset, "fer-like | random")
      ->check(CLI::IsMember({"fer-like", "random"}))
      ->capture_default_str();
  synth->add_option("--samples", y_samples, "Number of rows")->capture_default_str();
  synth->add_option("--services", y_services, "Services (random preset)")->capture_default_str();
  synth->add_option("--labels", y_labels, "Labels (random preset)")->capture_default_str();
  synth->add_option("--seed", y_seed, "Generator seed")->capture_default_str();
  synth->add_option("--out-data", y_data, "Corpus CSV output path")->capture_default_str();
  synth->add_option("--out-catalog", y_catalog, "Catalog JSON output path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (train->parsed()) {
      run.command = "train";
      const auto catalog = load_catalog(tc, run);
      const auto data = load_data(tc, catalog, run);
      apiroute::SolverConfig cfg;
      cfg.grid = t_grid;
      cfg.seed = t_seed;
      cfg.fixed_base = resolve_base(t_base, catalog);
      cfg.uniform_threshold = t_uniform;
      cfg.budget = apiroute::per_query_from_per_10k(t_budget);
      cfg.threads = tc.threads;
      run.flags = {{"budget_per_10k", t_budget}, {"grid", t_grid}, {"restrict_base", t_base},
                   {"uniform_threshold", t_uniform}, {"strict_labels", tc.strict_labels}, {"out", t_out}};
      run.seeds = {{"seed", t_seed}};
      const auto s = apiroute::train(data, catalog, cfg);
      apiroute::write_text_file(t_out, apiroute::serialize_strategy(s));
      run.manifest(t_out, {t_out});
      fmt::print("trained {} | predicted accuracy {:.4f}, cost {:.4f}/10k (budget {:.4f}/10k) -> {}\n",
                 describe(s, catalog), s.meta.predicted_accuracy,
                 apiroute::per_10k_from_per_query(s.meta.predicted_cost), t_budget, t_out);
    } else if (eval->parsed()) {
      run.command = "eval";
      const auto catalog = load_catalog(ec, run);
      const auto data = load_data(ec, catalog, run);
      run.input(e_strategy);
      const auto s = apiroute::load_strategy(e_strategy, catalog);
      if (const auto v = apiroute::validate_strategy(s, catalog); !v.empty()) {
        throw apiroute::ValidationError(fmt::format("strategy violates {}: {}", v.front().invariant, v.front().detail));
      }
      run.flags = {{"mode", e_mode}, {"strategy", e_strategy}, {"out", e_out}, {"csv", e_csv}};
      if (e_budget) run.flags["budget_per_10k"] = *e_budget;
      run.seeds = {{"seed", e_seed}};
      apiroute::EvaluationReport r;
      if (e_mode == "strict") {
        const double b = e_budget ? apiroute::per_query_from_per_10k(*e_budget) : s.meta.budget;
        r = apiroute::replay_evaluate_strict(s, data, catalog, b, e_seed);
      } else {
        r = apiroute::replay_evaluate(s, data, catalog, e_seed,
                                      e_mode == "sample" ? apiroute::ReplayMode::kSampled
                                                         : apiroute::ReplayMode::kExpectation);
      }
      std::vector<std::string> outputs{e_out};
      apiroute::write_text_file(e_out, r.to_json(catalog).dump(2) + "\n");
      if (!e_csv.empty()) {
        apiroute::write_text_file(e_csv, r.to_csv(catalog));
        outputs.push_back(e_csv);
      }
      run.manifest(e_out, outputs);
      std::string extra;
      if (e_mode == "strict") {
        extra = fmt::format(", fallbacks {}/{}", r.fallback_count, r.samples);
      }
      fmt::print("{}: accuracy {:.4f}, mean cost {:.4f}/10k over {} samples{} -> {}\n", r.mode, r.accuracy,
                 apiroute::per_10k_from_per_query(r.mean_cost), r.samples, extra, e_out);
    } else if (sweep->parsed()) {
      run.command = "sweep";
      const auto catalog = load_catalog(sc, run);
      const auto data = load_data(sc, catalog, run);
      const auto budgets = parse_budget_range(s_budgets);
      const auto split = apiroute::split_dataset(data, catalog, s_fraction, s_seed);
      apiroute::SolverConfig cfg;
      cfg.grid = s_grid;
      cfg.seed = s_seed;
      cfg.fixed_base = resolve_base(s_base, catalog);
      cfg.uniform_threshold = s_uniform;
      cfg.threads = sc.threads;
      run.flags = {{"budgets", s_budgets}, {"train_fraction", s_fraction}, {"grid", s_grid},
                   {"restrict_base", s_base}, {"uniform_threshold", s_uniform}, {"out", s_out}};
      run.seeds = {{"split_seed", s_seed}};
      const auto points = apiroute::sweep(split.train, split.test, catalog, budgets, cfg);
      apiroute::write_text_file(s_out, apiroute::sweep_to_csv(points));
      run.manifest(s_out, {s_out});
      std::size_t failed = 0;
      for (const auto& p : points) {
        if (!p.ok) {
          ++failed;
          fmt::print(stderr, "budget {:.4f}/10k failed: {}\n", apiroute::per_10k_from_per_query(p.budget), p.error);
        }
      }
      fmt::print("sweep: {} budgets ({} failed), {} reference services -> {}\n", budgets.size(), failed,
                 catalog.num_services(), s_out);
    } else if (inspect->parsed()) {
      run.command = "inspect";
      const auto catalog = load_catalog(ic, run);
      json out;
      out["catalog"] = catalog.to_json();
      out["catalog_fingerprint"] = catalog.fingerprint();
      if (i_what == "strategy") {
        if (i_strategy.empty()) throw apiroute::ValidationError("--what strategy needs --strategy");
        run.input(i_strategy);
        const auto s = apiroute::load_strategy(i_strategy, catalog);
        out["strategy"] = apiroute::strategy_to_json(s);
        json v = json::array();
        for (const auto& x : apiroute::validate_strategy(s, catalog)) v.push_back({{"invariant", x.invariant}, {"detail", x.detail}});
        out["violations"] = v;
        if (!ic.data.empty()) {
          const auto data = load_data(ic, catalog, run);
          const auto model = apiroute::estimate_model(
              data, apiroute::EstimateOptions{.grid = s.meta.grid, .collapse_labels = s.meta.uniform_threshold});
          const auto p = apiroute::predict_performance(s, model, catalog.costs());
          out["predicted_on_data"] = {{"accuracy", p.accuracy}, {"cost_per_10k", apiroute::per_10k_from_per_query(p.cost)}};
        }
      } else {
        if (ic.data.empty()) throw apiroute::ValidationError(fmt::format("--what {} needs --data", i_what));
        const auto data = load_data(ic, catalog, run);
        const auto model = apiroute::estimate_model(data, i_grid);
        if (i_what == "model") {
          out["model"] = model.to_json();
          json sparse = json::array();
          for (const auto& [k, g] : model.sparse_cells()) sparse.push_back({{"service", k}, {"label", g}});
          out["sparse_cells"] = sparse;
        } else {
          std::vector<double> extra;
          if (i_budget) extra.push_back(apiroute::per_query_from_per_10k(*i_budget));
          std::vector<json> gs(catalog.num_services());
          apiroute::parallel_for(catalog.num_services(), ic.threads, [&](std::size_t k) {
            gs[k] = apiroute::build_g_function(model, k, catalog.costs(), extra).to_json();
          });
          out["gfunctions"] = gs;
        }
      }
      run.flags = {{"what", i_what}, {"grid", i_grid}, {"strategy", i_strategy}, {"out", i_out}};
      const std::string text = out.dump(2) + "\n";
      if (i_out.empty()) {
        std::cout << text;
      } else {
        apiroute::write_text_file(i_out, text);
        run.manifest(i_out, {i_out});
      }
    } else if (synth->parsed()) {
      run.command = "synth";
      apiroute::SyntheticSpec spec = y_preset == "fer-like"
                                         ? apiroute::fer_like_spec(y_samples)
                                         : apiroute::random_spec(y_seed, y_services, y_labels, y_samples);
      const auto corpus = apiroute::generate_synthetic_corpus(spec, y_seed);
      json cat = corpus.catalog.to_json();
      apiroute::write_text_file(y_catalog, cat.dump(2) + "\n");
      apiroute::write_text_file(y_data, apiroute::dataset_to_csv(corpus.data, corpus.catalog));
      run.flags = {{"preset", y_preset}, {"samples", y_samples}, {"services", y_services}, {"labels", y_labels},
                   {"out_data", y_data}, {"out_catalog", y_catalog}};
      run.seeds = {{"seed", y_seed}};
      run.manifest(y_data, {y_data, y_catalog});
      fmt::print("synth {}: {} samples, {} services, {} labels -> {}, {}\n", y_preset, corpus.data.size(),
                 corpus.catalog.num_services(), corpus.catalog.num_labels(), y_data, y_catalog);
    }
  } catch (const apiroute::InfeasibleBudgetError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kInfeasible;
  } catch (const apiroute::IoError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kIo;
  } catch (const apiroute::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kValidation;
  }
  return kOk;
}
