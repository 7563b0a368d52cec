#pragma once

// Run configuration: a versioned JSON document describing the model, prior,
// estimator, analysis and synthetic-facility settings. Everything is
// validated when loaded, before any simulation runs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "facility.hpp"
#include "inference.hpp"
#include "json.hpp"

namespace hai_sbi::config {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

inline std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return "fnv1a64:" + hex64(fnv1a(buf.str()));
}

struct ModelBlock {
  inference::ModelKind kind = inference::ModelKind::homogeneous;
  int n = 100;
  int horizon = 52;
  int n_floors = 1;
  int beds_per_room = 1;
  double alpha = 0.1;
  double gamma = 0.05;
  std::optional<double> eta;
  fs::path layout;
  fs::path traces;
  std::vector<double> rates;  // true rates, used by `simulate`
};

struct EstimatorBlock {
  std::string method = "npe";
  std::size_t simulations = 4000;
  density::EncoderConfig encoder;
  inference::TrainConfig train;
  inference::AbcAccept accept = inference::AbcAccept::nearest(100);
  std::size_t reject_target = 100;
  std::size_t max_proposals = 2'000'000;
  std::size_t search_budget = 4000;
  bool truncate_at_zero = false;
};

struct AnalysisBlock {
  fs::path fit_dir;
  std::size_t n_draws = 4000;
  double lower = 0.05;
  double upper = 0.95;
  bool correlation = false;
  std::optional<bool> truncate_at_zero;
  int column = 0;
  std::size_t predictive_draws = 30;
  json interventions = json::array();  // resolved against the model's floor count
  bool outside_only = false;
};

struct SynthBlock {
  int n_floors = 5;
  int n_rooms = 95;
  int beds_per_room = 2;
  SynthConfig traces;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelBlock model;
  std::optional<inference::Prior> prior;
  EstimatorBlock estimator;
  fs::path observed;
  AnalysisBlock analysis;
  SynthBlock synth;
  json raw;  // as loaded, with the seed override applied
};

namespace detail {

inline fs::path resolve(const fs::path& base, const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) {
    return {};
  }
  fs::path p = j.at(key).get<std::string>();
  return p.is_absolute() ? p : base / p;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) {
    throw ConfigError(msg);
  }
}

}  // namespace detail

inline analysis::NamedScenario scenario_from_json(const json& j, int n_floors) {
  const auto name = j.at("name").get<std::string>();
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "identity") return {name, scenarios::identity()};
    if (preset == "floor-isolation") return {name, scenarios::floor_isolation(n_floors)};
    if (preset == "room-isolation") return {name, scenarios::room_isolation()};
    if (preset == "uniform-reduction") {
      return {name, scenarios::uniform_reduction(n_floors, j.value("keep", 0.75))};
    }
    if (preset == "no-transmission") return {name, scenarios::no_transmission(n_floors)};
    throw ConfigError("intervention '" + name + "': unknown preset '" + preset + "'");
  }
  InterventionSpec spec;
  spec.facility_scale = j.value("facility", 1.0);
  spec.floor_scale = j.value("floor", std::vector<double>{});
  spec.room_scale = j.value("room", 1.0);
  return {name, spec};
}

// Parses and validates a configuration. `base` resolves relative paths.
inline RunConfig parse(json j, const fs::path& base, std::optional<std::uint64_t> seed_override = {}) {
  using detail::require;
  RunConfig c;
  try {
    require(j.is_object(), "config must be a JSON object");
    require(j.value("schema_version", 0) == kSchemaVersion,
            "config: schema_version must be " + std::to_string(kSchemaVersion));
    if (seed_override) {
      j["seed"] = *seed_override;
    }
    c.seed = j.value("seed", std::uint64_t{0});

    if (j.contains("model")) {
      const auto& m = j.at("model");
      auto& mb = c.model;
      mb.kind = inference::model_kind_from(m.at("kind").get<std::string>());
      mb.n = m.value("N", mb.n);
      mb.horizon = m.value("T", mb.horizon);
      mb.n_floors = m.value("K", mb.kind == inference::ModelKind::homogeneous ? 1 : 5);
      mb.beds_per_room = m.value("beds_per_room", mb.kind == inference::ModelKind::homogeneous ? 1 : 2);
      mb.alpha = m.value("alpha", mb.alpha);
      mb.gamma = m.value("gamma", mb.gamma);
      if (m.contains("eta")) mb.eta = m.at("eta").get<double>();
      mb.layout = detail::resolve(base, m, "layout");
      mb.traces = detail::resolve(base, m, "traces");
      mb.rates = m.value("rates", std::vector<double>{});
      require(mb.alpha >= 0.0 && mb.alpha <= 1.0, "model.alpha must be in [0,1]");
      require(mb.gamma >= 0.0 && mb.gamma <= 1.0, "model.gamma must be in [0,1]");
      require(!mb.eta || (*mb.eta >= 0.0 && *mb.eta <= 1.0), "model.eta must be in [0,1]");
      require(mb.kind != inference::ModelKind::partial || mb.eta.has_value(),
              "model.eta is required for the partial model");
      if (mb.kind == inference::ModelKind::trace) {
        require(!mb.layout.empty() && !mb.traces.empty(),
                "trace-driven model needs model.layout and model.traces paths");
        require(fs::exists(mb.layout), "model.layout: file '" + mb.layout.string() + "' not found");
        require(fs::exists(mb.traces), "model.traces: file '" + mb.traces.string() + "' not found");
      } else {
        require(mb.n >= 1 && mb.horizon >= 1 && mb.n_floors >= 1 && mb.beds_per_room >= 1,
                "model: N, T, K and beds_per_room must be >= 1");
        require(mb.n % mb.n_floors == 0, "model: N must be divisible by K");
        require((mb.n / mb.n_floors) % mb.beds_per_room == 0,
                "model: patients per floor must be divisible by beds_per_room");
      }
      for (double r : mb.rates) {
        require(std::isfinite(r) && r >= 0.0, "model.rates must be finite and >= 0");
      }
    }

    if (j.contains("prior")) {
      c.prior = inference::prior_from_json(j.at("prior"));
    }

    if (j.contains("estimator")) {
      const auto& e = j.at("estimator");
      auto& eb = c.estimator;
      eb.method = e.value("method", eb.method);
      require(eb.method == "npe" || eb.method == "abc" || eb.method == "abc-s" ||
                  eb.method == "reject",
              "estimator.method must be one of npe, abc, abc-s, reject");
      eb.simulations = e.value("simulations", eb.simulations);
      require(eb.simulations >= 1, "estimator.simulations must be >= 1");
      if (e.contains("encoder")) {
        const auto& enc = e.at("encoder");
        eb.encoder.hidden_width = enc.value("hidden_width", eb.encoder.hidden_width);
        eb.encoder.head = density::head_kind_from(enc.value("head", std::string("diag-gaussian")));
        eb.encoder.transform = density::transform_from(enc.value("transform", std::string("natural")));
      }
      if (e.contains("train")) {
        const auto& t = e.at("train");
        auto& tc = eb.train;
        tc.train_fraction = t.value("train_fraction", tc.train_fraction);
        tc.learning_rate = t.value("learning_rate", tc.learning_rate);
        tc.weight_decay = t.value("weight_decay", tc.weight_decay);
        tc.batch_size = t.value("batch_size", tc.batch_size);
        tc.max_epochs = t.value("max_epochs", tc.max_epochs);
        tc.patience = t.value("patience", tc.patience);
        tc.check();
      }
      if (e.contains("accept")) {
        const auto& a = e.at("accept");
        if (a.contains("epsilon")) {
          eb.accept = inference::AbcAccept::within(a.at("epsilon").get<double>());
          require(eb.accept.epsilon >= 0.0, "estimator.accept.epsilon must be >= 0");
        } else {
          eb.accept = inference::AbcAccept::nearest(a.value("k", std::size_t{100}));
          require(eb.accept.k >= 1 && eb.accept.k <= eb.simulations,
                  "estimator.accept.k must be in [1, simulations]");
        }
      }
      eb.reject_target = e.value("target", eb.reject_target);
      eb.max_proposals = e.value("max_proposals", eb.max_proposals);
      eb.search_budget = e.value("search_budget", eb.search_budget);
      eb.truncate_at_zero = e.value("truncate_at_zero", eb.truncate_at_zero);
      require(eb.reject_target >= 1 && eb.max_proposals >= 1 && eb.search_budget >= 1,
              "estimator: target, max_proposals and search_budget must be >= 1");
    }

    c.observed = detail::resolve(base, j, "observed");

    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      auto& ab = c.analysis;
      ab.fit_dir = detail::resolve(base, a, "fit_dir");
      ab.n_draws = a.value("n_draws", ab.n_draws);
      if (a.contains("interval")) {
        const auto iv = a.at("interval").get<std::vector<double>>();
        require(iv.size() == 2 && iv[0] >= 0.0 && iv[0] <= iv[1] && iv[1] <= 1.0,
                "analysis.interval must be [lower, upper] within [0,1]");
        ab.lower = iv[0];
        ab.upper = iv[1];
      }
      ab.correlation = a.value("correlation", false);
      if (a.contains("truncate_at_zero")) ab.truncate_at_zero = a.at("truncate_at_zero").get<bool>();
      ab.column = a.value("column", 0);
      ab.predictive_draws = a.value("predictive_draws", ab.predictive_draws);
      ab.outside_only = a.value("outside_only", false);
      ab.interventions = a.value("interventions", json::array());
      require(ab.interventions.is_array(), "analysis.interventions must be a list");
      require(ab.n_draws >= analysis::kMinSummaryDraws, "analysis.n_draws must be >= 20");
      require(ab.predictive_draws >= 1, "analysis.predictive_draws must be >= 1");
    }

    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      auto& sb = c.synth;
      sb.n_floors = s.value("floors", sb.n_floors);
      sb.n_rooms = s.value("rooms", sb.n_rooms);
      sb.beds_per_room = s.value("beds_per_room", sb.beds_per_room);
      auto& t = sb.traces;
      t.horizon = s.value("T", t.horizon);
      t.initial_occupancy = s.value("initial_occupancy", t.initial_occupancy);
      t.admission_rate = s.value("admission_rate", t.admission_rate);
      t.mean_stay = s.value("mean_stay", t.mean_stay);
      t.screen_positive_rate = s.value("screen_positive_rate", t.screen_positive_rate);
      t.transfer_rate = s.value("transfer_rate", t.transfer_rate);
      require(sb.n_floors >= 1 && sb.n_rooms >= sb.n_floors && sb.beds_per_room >= 1 &&
                  t.horizon >= 1,
              "synth: need floors >= 1, rooms >= floors, beds_per_room >= 1, T >= 1");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.raw = std::move(j);
  return c;
}

inline RunConfig load(const fs::path& path, std::optional<std::uint64_t> seed_override = {}) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config '" + path.string() + "'");
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse(std::move(j), path.parent_path(), seed_override);
}

inline std::string config_hash(const RunConfig& c) {
  return "fnv1a64:" + hex64(fnv1a(c.raw.dump()));
}

// Builds the simulator the configuration describes; trace facilities are
// read and validated here.
inline inference::ModelSpec build_model(const RunConfig& c) {
  if (!c.raw.contains("model")) {
    throw ConfigError("config has no model block");
  }
  const auto& m = c.model;
  SimParams params{m.alpha, m.gamma, m.eta, 0};
  using inference::ModelKind;
  using inference::ModelSpec;
  switch (m.kind) {
    case ModelKind::homogeneous:
      return ModelSpec::homogeneous(params, m.n, m.horizon);
    case ModelKind::heterogeneous:
    case ModelKind::partial:
      return ModelSpec::static_facility(m.kind, params, m.n_floors, m.n / m.n_floors,
                                        m.beds_per_room, m.horizon);
    case ModelKind::trace: {
      const Layout layout = read_layout_csv(m.layout.string());
      const FacilityTraces traces = read_traces_csv(m.traces.string(), layout);
      const auto problems = validate(layout, traces);
      if (!problems.empty()) {
        std::string msg = "trace facility is invalid (" + std::to_string(problems.size()) +
                          " problems); first: " + describe(problems.front());
        throw ConfigError(msg);
      }
      auto model = ModelSpec::make(ModelKind::trace, params, ContactPlan(layout, traces));
      model.traces = std::make_shared<const FacilityTraces>(traces);
      return model;
    }
  }
  throw ConfigError("unknown model kind");
}

}  // namespace hai_sbi::config
