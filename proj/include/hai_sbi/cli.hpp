#pragma once

// Subcommands behind the command-line tool. Each command validates its
// configuration, writes into a staging directory and moves the files into
// place only once everything (including manifest.json) has been written.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "config.hpp"
#include "facility.hpp"
#include "inference.hpp"
#include "json.hpp"
#include "summaries.hpp"

namespace hai_sbi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
  const char* env = std::getenv("HAI_SBI_LOG");
  const std::string v = env ? env : "";
  if (v == "error" || v == "quiet") return LogLevel::error;
  if (v == "debug") return LogLevel::debug;
  if (v == "info") return LogLevel::info;
  return LogLevel::warn;
}

inline void log(LogLevel level, const std::string& msg) {
  static const LogLevel threshold = log_level();
  if (level > threshold) {
    return;
  }
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[hai_sbi " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

struct Options {
  fs::path config;
  fs::path out;
  int threads = 1;
  std::optional<std::uint64_t> seed;
};

// Output files are collected in `<out>.staging` and moved into `out` by
// commit(); the staging directory is removed on every exit path.
class Staging {
 public:
  explicit Staging(fs::path out) : out_(std::move(out)) {
    if (out_.empty()) {
      throw config::ConfigError("--out is required");
    }
    out_ = out_.lexically_normal();
    if (!out_.has_filename()) {
      out_ = out_.parent_path();
    }
    dir_ = out_;
    dir_ += ".staging";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  std::string file(const std::string& name) {
    names_.push_back(name);
    return (dir_ / name).string();
  }

  // Files that are written but not covered by the manifest (wall time).
  std::string side_file(const std::string& name) {
    side_.push_back(name);
    return (dir_ / name).string();
  }

  void commit(json manifest) {
    json outputs = json::object();
    for (const auto& n : names_) {
      if (!fs::exists(dir_ / n)) {
        throw std::runtime_error("declared output '" + n + "' was not written");
      }
      outputs[n] = config::file_digest(dir_ / n);
    }
    manifest["outputs"] = outputs;
    {
      std::ofstream m(dir_ / "manifest.json");
      m << manifest.dump(2) << '\n';
      if (!m) {
        throw std::runtime_error("cannot write manifest");
      }
    }
    fs::create_directories(out_);
    std::vector<std::string> all = names_;
    all.insert(all.end(), side_.begin(), side_.end());
    all.push_back("manifest.json");
    for (const auto& n : all) {
      fs::rename(dir_ / n, out_ / n);
    }
  }

  const fs::path& out() const { return out_; }

 private:
  fs::path out_;
  fs::path dir_;
  std::vector<std::string> names_;
  std::vector<std::string> side_;
};

inline json base_manifest(const std::string& command, const config::RunConfig& c, json seeds) {
  return {{"schema_version", config::kSchemaVersion},
          {"command", command},
          {"version", config::kVersion},
          {"config_hash", config::config_hash(c)},
          {"config", c.raw},
          {"seed", c.seed},
          {"seeds", std::move(seeds)}};
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Seeds derived from the run seed, one per purpose.
enum SeedSlot : std::uint64_t { kSimulate = 1, kBatch = 2, kTrain = 3, kAnalyze = 4, kSynth = 5, kReject = 6 };

inline std::uint64_t slot_seed(const config::RunConfig& c, SeedSlot s) {
  return rng::derive_seed(c.seed, s);
}

inline EpidemicMatrix read_observed(const config::RunConfig& c, const inference::ModelSpec& model) {
  if (c.observed.empty()) {
    throw config::ConfigError("config needs an `observed` matrix file");
  }
  if (!fs::exists(c.observed)) {
    throw config::ConfigError("observed file '" + c.observed.string() + "' not found");
  }
  const auto kind = model.kind == inference::ModelKind::partial ? MatrixKind::observation
                                                                 : MatrixKind::colonization;
  auto x = read_matrix_csv(c.observed.string(), kind);
  if (x.size() != model.plan->size() || x.horizon() != model.horizon()) {
    throw config::ConfigError("observed matrix is " + std::to_string(x.size()) + " x " +
                              std::to_string(x.horizon()) + ", model expects " +
                              std::to_string(model.plan->size()) + " x " +
                              std::to_string(model.horizon()));
  }
  return x;
}

inline inference::Prior require_prior(const config::RunConfig& c, const inference::ModelSpec& model) {
  if (!c.prior) {
    throw config::ConfigError("config needs a prior block");
  }
  if (c.prior->dim() != model.theta_dim()) {
    throw config::ConfigError("prior has " + std::to_string(c.prior->dim()) +
                              " components, model needs " + std::to_string(model.theta_dim()));
  }
  return *c.prior;
}

inline int cmd_simulate(const config::RunConfig& c, const Options& opt) {
  const auto model = config::build_model(c);
  if (static_cast<int>(c.model.rates.size()) != model.theta_dim()) {
    throw config::ConfigError("model.rates needs " + std::to_string(model.theta_dim()) +
                              " values for a " + inference::to_string(model.kind) + " model");
  }
  const RateVector rates = model.rates(c.model.rates);
  const std::uint64_t seed = slot_seed(c, kSimulate);
  Staging stage(opt.out);
  const FacilityTraces* labels = model.traces.get();
  EpidemicMatrix summarized;
  if (model.kind == inference::ModelKind::partial) {
    SimParams p = model.params;
    p.seed = seed;
    auto po = simulate_partial(*model.plan, p, rates);
    write_matrix_csv(po.colonization, stage.file("X.csv"), labels);
    write_matrix_csv(po.observation, stage.file("Y.csv"), labels);
    summarized = std::move(po.observation);
  } else {
    summarized = model.simulate_matrix(rates, seed);
    write_matrix_csv(summarized, stage.file("X.csv"), labels);
  }
  const auto summary = model.summarize(summarized);
  write_summary_csv(summary, stage.file("summaries.csv"));
  stage.file("summaries.csv.json");
  stage.commit(base_manifest("simulate", c, {{"simulate", seed}}));
  log(LogLevel::info, "simulate: wrote " + stage.out().string());
  return 0;
}

inline int cmd_fit(const config::RunConfig& c, const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = config::build_model(c);
  const auto prior = require_prior(c, model);
  const auto observed = read_observed(c, model);
  const auto x_o = model.features(model.summarize(observed));
  const auto& est = c.estimator;
  Staging stage(opt.out);
  json report{{"method", est.method}, {"model", model.describe()}};
  json seeds = json::object();

  if (est.method == "npe") {
    const std::uint64_t batch_seed = slot_seed(c, kBatch);
    auto train = est.train;
    train.seed = slot_seed(c, kTrain);
    train.threads = opt.threads;
    seeds = {{"batch", batch_seed}, {"train", train.seed}};
    log(LogLevel::info, "fit: simulating " + std::to_string(est.simulations) + " training pairs");
    const auto batch = inference::simulate_batch(prior, model, est.simulations, batch_seed, opt.threads);
    log(LogLevel::info, "fit: training");
    const auto trained = inference::train_npe(batch, est.encoder, train);
    const auto post = inference::npe_posterior(trained.estimator, x_o, est.truncate_at_zero);
    density::save_weights(stage.file("weights.json"), trained.estimator.config,
                          trained.estimator.weights);
    auto head = inference::head_to_json(post);
    head["budget"] = est.simulations;
    head["labels"] = model.labels();
    write_json(stage.file("posterior.json"), head);
    {
      std::ofstream h(stage.file("history.csv"));
      h << "epoch,train_loss,val_loss\n";
      for (std::size_t e = 0; e < trained.history.val_loss.size(); ++e) {
        h << e + 1 << ',' << csv::format_double(trained.history.train_loss[e]) << ','
          << csv::format_double(trained.history.val_loss[e]) << '\n';
      }
    }
    const auto& hist = trained.history;
    report["budget"] = est.simulations;
    report["epochs"] = hist.val_loss.size();
    report["best_epoch"] = hist.best_epoch;
    report["final_train_loss"] = hist.train_loss.empty() ? 0.0 : hist.train_loss.back();
    report["final_val_loss"] = hist.val_loss.empty() ? hist.initial_val_loss : hist.val_loss.back();
    report["best_val_loss"] = hist.best_val_loss;
  } else if (est.method == "abc" || est.method == "abc-s") {
    const std::uint64_t batch_seed = slot_seed(c, kBatch);
    seeds = {{"batch", batch_seed}};
    inference::PosteriorResult r;
    if (est.method == "abc") {
      r = inference::abc(prior, model, x_o, est.accept, est.simulations, batch_seed, opt.threads);
    } else {
      const auto batch = inference::simulate_batch(prior, model, est.simulations, batch_seed, opt.threads);
      r = inference::abc_scalar(batch, x_o, est.accept);
    }
    inference::write_draws_csv(r.draws, stage.file("draws.csv"));
    report["budget"] = r.budget;
    report["accepted"] = r.accepted;
    report["acceptance_rate"] = r.acceptance_rate();
  } else {
    if (model.kind != inference::ModelKind::homogeneous &&
        model.kind != inference::ModelKind::heterogeneous) {
      throw config::ConfigError("reject needs a fully observed (homogeneous or heterogeneous) model");
    }
    auto log_lik = [&](std::span<const double> th) { return model.log_likelihood(observed, th); };
    const auto top = inference::find_log_M(log_lik, prior, est.search_budget);
    inference::RejectionConfig rc;
    rc.target = est.reject_target;
    rc.max_proposals = est.max_proposals;
    rc.seed = slot_seed(c, kReject);
    rc.threads = opt.threads;
    seeds = {{"reject", rc.seed}};
    const auto r = inference::rejection_sample(prior, log_lik, top.log_M, rc);
    if (r.capped) {
      log(LogLevel::warn, "reject: proposal cap " + std::to_string(rc.max_proposals) +
                              " reached with " + std::to_string(r.accepted) + " of " +
                              std::to_string(rc.target) + " draws accepted");
    }
    if (r.draws.empty()) {
      throw std::runtime_error("reject: no proposal accepted before the cap");
    }
    inference::write_draws_csv(r.draws, stage.file("draws.csv"));
    report["budget"] = r.budget;
    report["accepted"] = r.accepted;
    report["acceptance_rate"] = r.acceptance_rate();
    report["capped"] = r.capped;
    report["log_M"] = top.log_M;
    report["argmax"] = top.argmax;
  }
  write_json(stage.file("report.json"), report);
  const double wall = seconds_since(t0);
  write_json(stage.side_file("timing.json"), {{"wall_time_s", wall}});
  stage.commit(base_manifest("fit", c, seeds));
  log(LogLevel::info, "fit: done in " + std::to_string(wall) + " s");
  return 0;
}

inline inference::PosteriorResult load_fit(const fs::path& dir) {
  if (dir.empty()) {
    throw config::ConfigError("analysis.fit_dir is required");
  }
  if (fs::exists(dir / "posterior.json")) {
    std::ifstream in(dir / "posterior.json");
    return inference::head_from_json(json::parse(in));
  }
  if (fs::exists(dir / "draws.csv")) {
    inference::PosteriorResult r;
    r.kind = inference::PosteriorResult::Kind::draws;
    r.draws = inference::read_draws_csv((dir / "draws.csv").string());
    r.estimator = "draws";
    return r;
  }
  throw config::ConfigError("fit directory '" + dir.string() +
                            "' has neither posterior.json nor draws.csv");
}

inline int cmd_analyze(const config::RunConfig& c, const Options& opt) {
  const auto& a = c.analysis;
  auto post = load_fit(a.fit_dir);
  if (post.kind == inference::PosteriorResult::Kind::parametric &&
      post.transform == density::Transform::natural) {
    post.truncate_at_zero = a.truncate_at_zero.value_or(true);
  }
  std::optional<inference::ModelSpec> model;
  if (c.raw.contains("model")) {
    model = config::build_model(c);
    if (model->theta_dim() != post.dim()) {
      throw config::ConfigError("posterior has " + std::to_string(post.dim()) +
                                " components, model needs " + std::to_string(model->theta_dim()));
    }
  }
  if (a.correlation && post.dim() < 2) {
    throw config::ConfigError("correlations requested for a scalar posterior");
  }
  std::vector<std::string> labels;
  if (model) {
    labels = model->labels();
  } else {
    for (int j = 1; j <= post.dim(); ++j) labels.push_back("theta_" + std::to_string(j));
  }
  const std::uint64_t seed = slot_seed(c, kAnalyze);
  Staging stage(opt.out);
  const auto summary =
      analysis::summarize(post, labels, a.n_draws, a.lower, a.upper, rng::derive_seed(seed, 1));
  analysis::write_summary_csv(summary, stage.file("summary.csv"));
  if (a.correlation) {
    const auto corr = analysis::correlation_matrix(post, a.n_draws, rng::derive_seed(seed, 2));
    analysis::write_correlation_csv(corr, labels, stage.file("correlation.csv"));
  }
  if (model) {
    analysis::PredictiveConfig pc{a.column, a.predictive_draws, rng::derive_seed(seed, 3), opt.threads};
    std::vector<analysis::NamedScenario> scen;
    for (const auto& s : a.interventions) {
      scen.push_back(config::scenario_from_json(s, model->n_floors()));
    }
    const auto bands = analysis::intervention_compare(post, *model, scen, pc, a.outside_only);
    analysis::write_bands_csv({bands.front()}, stage.file("ppc_bands.csv"));
    if (bands.size() > 1) {
      analysis::write_bands_csv(bands, stage.file("intervention_bands.csv"));
    }
  }
  stage.commit(base_manifest("analyze", c, {{"analyze", seed}}));
  log(LogLevel::info, "analyze: wrote " + stage.out().string());
  return 0;
}

inline int cmd_synth_data(const config::RunConfig& c, const Options& opt) {
  const auto& s = c.synth;
  const Layout layout = room_layout(s.n_floors, s.n_rooms, s.beds_per_room);
  SynthConfig sc = s.traces;
  sc.seed = slot_seed(c, kSynth);
  const FacilityTraces traces = synth_traces(layout, sc);
  const auto problems = validate(layout, traces);
  if (!problems.empty()) {
    throw std::runtime_error("synth-data produced an invalid facility: " + describe(problems.front()));
  }
  Staging stage(opt.out);
  write_layout_csv(layout, stage.file("layout.csv"));
  write_traces_csv(layout, traces, stage.file("traces.csv"));
  stage.commit(base_manifest("synth-data", c, {{"synth", sc.seed}}));
  log(LogLevel::info, "synth-data: " + std::to_string(traces.size()) + " patients, " +
                          std::to_string(layout.n_rooms()) + " rooms");
  return 0;
}

// Checks the configuration and every file it references; writes nothing.
inline int cmd_validate(const config::RunConfig& c, const Options&) {
  std::optional<inference::ModelSpec> model;
  if (c.raw.contains("model")) {
    model = config::build_model(c);
    if (!c.model.rates.empty() && static_cast<int>(c.model.rates.size()) != model->theta_dim()) {
      throw config::ConfigError("model.rates needs " + std::to_string(model->theta_dim()) + " values");
    }
    if (c.prior && c.prior->dim() != model->theta_dim()) {
      throw config::ConfigError("prior dimension does not match model");
    }
    // Outputs of earlier steps may not exist yet; they are checked when present.
    if (!c.observed.empty()) {
      if (fs::exists(c.observed)) {
        read_observed(c, *model);
      } else {
        log(LogLevel::warn, "observed file '" + c.observed.string() + "' does not exist yet");
      }
    }
  }
  if (!c.analysis.fit_dir.empty()) {
    if (fs::exists(c.analysis.fit_dir)) {
      load_fit(c.analysis.fit_dir);
    } else {
      log(LogLevel::warn, "fit directory '" + c.analysis.fit_dir.string() + "' does not exist yet");
    }
  }
  std::cout << "config ok (" << config::config_hash(c) << ")\n";
  return 0;
}

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"simulate", "fit", "analyze", "synth-data", "validate"};
  return names;
}

// Exit codes: 0 success, 2 invalid configuration or input, 1 other failure.
inline int run(const std::string& command, const Options& opt) {
  try {
    if (opt.threads < 1) {
      throw config::ConfigError("--threads must be >= 1");
    }
    const auto cfg = config::load(opt.config, opt.seed);
    if (command == "simulate") return cmd_simulate(cfg, opt);
    if (command == "fit") return cmd_fit(cfg, opt);
    if (command == "analyze") return cmd_analyze(cfg, opt);
    if (command == "synth-data") return cmd_synth_data(cfg, opt);
    if (command == "validate") return cmd_validate(cfg, opt);
    throw config::ConfigError("unknown command '" + command + "'");
  } catch (const config::ConfigError& e) {
    log(LogLevel::error, e.what());
    return 2;
  } catch (const ValidationError& e) {
    log(LogLevel::error, e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    log(LogLevel::error, e.what());
    return 2;
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return 1;
  }
}

}  // namespace hai_sbi::cli
