#pragma once

// Posterior estimators: neural posterior estimation, ABC (threshold or
// nearest-k) and exact rejection sampling, plus priors, model
// specifications and simulation batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "density.hpp"
#include "json.hpp"
#include "likelihood.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "simulator.hpp"
#include "summaries.hpp"

namespace hai_sbi::inference {

using Theta = std::vector<double>;

// --- priors ---------------------------------------------------------------

struct Prior {
  enum class Family { lognormal, normal };
  Family family = Family::lognormal;
  std::vector<double> mu;
  std::vector<double> sigma;

  static Prior lognormal(std::vector<double> mu, std::vector<double> sigma) {
    return {Family::lognormal, std::move(mu), std::move(sigma)};
  }
  static Prior lognormal_iid(int d, double mu, double sigma) {
    return lognormal(std::vector<double>(d, mu), std::vector<double>(d, sigma));
  }
  static Prior normal(std::vector<double> mu, std::vector<double> sigma) {
    return {Family::normal, std::move(mu), std::move(sigma)};
  }

  int dim() const { return static_cast<int>(mu.size()); }

  void check() const {
    if (mu.empty() || mu.size() != sigma.size()) {
      throw std::invalid_argument("Prior: mu and sigma must be nonempty and of equal length");
    }
    for (std::size_t j = 0; j < sigma.size(); ++j) {
      if (!(sigma[j] > 0.0) || !std::isfinite(mu[j]) || !std::isfinite(sigma[j])) {
        throw std::invalid_argument("Prior: component " + std::to_string(j + 1) +
                                    " needs finite mu and sigma > 0");
      }
    }
  }

  // Coordinates in which the prior is Gaussian.
  double to_latent(double v) const { return family == Family::lognormal ? std::log(v) : v; }
  double from_latent(double u) const { return family == Family::lognormal ? std::exp(u) : u; }

  double log_density(std::span<const double> theta) const {
    double out = 0.0;
    for (int j = 0; j < dim(); ++j) {
      if (family == Family::lognormal && !(theta[j] > 0.0)) {
        return kNegInf;
      }
      const double z = (to_latent(theta[j]) - mu[j]) / sigma[j];
      out += -density::kHalfLog2Pi - std::log(sigma[j]) - 0.5 * z * z;
      if (family == Family::lognormal) {
        out -= std::log(theta[j]);
      }
    }
    return out;
  }
};

inline nlohmann::json to_json(const Prior& p) {
  return {{"family", p.family == Prior::Family::lognormal ? "lognormal" : "normal"},
          {"mu", p.mu},
          {"sigma", p.sigma}};
}

inline Prior prior_from_json(const nlohmann::json& j) {
  Prior p;
  const auto family = j.value("family", std::string("lognormal"));
  if (family == "lognormal") {
    p.family = Prior::Family::lognormal;
  } else if (family == "normal") {
    p.family = Prior::Family::normal;
  } else {
    throw std::invalid_argument("prior: unknown family '" + family + "'");
  }
  p.mu = j.at("mu").get<std::vector<double>>();
  p.sigma = j.at("sigma").get<std::vector<double>>();
  p.check();
  return p;
}

// One prior draw keyed by its own seed.
inline Theta prior_draw(const Prior& prior, std::uint64_t seed) {
  rng::Stream stream(seed, 1);
  Theta out(prior.dim());
  for (int j = 0; j < prior.dim(); ++j) {
    out[j] = prior.from_latent(prior.mu[j] + prior.sigma[j] * stream.normal());
  }
  return out;
}

inline std::vector<Theta> sample_prior(const Prior& prior, std::size_t n, std::uint64_t seed) {
  prior.check();
  if (n < 1) {
    throw std::invalid_argument("sample_prior: n must be >= 1");
  }
  std::vector<Theta> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    out[s] = prior_draw(prior, rng::derive_seed(seed, s));
  }
  return out;
}

// --- models -----------------------------------------------------------------

enum class ModelKind { homogeneous, heterogeneous, partial, trace };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::homogeneous: return "homogeneous";
    case ModelKind::heterogeneous: return "heterogeneous";
    case ModelKind::partial: return "partial";
    case ModelKind::trace: return "trace";
  }
  return "?";
}

inline ModelKind model_kind_from(const std::string& s) {
  if (s == "homogeneous") return ModelKind::homogeneous;
  if (s == "heterogeneous") return ModelKind::heterogeneous;
  if (s == "partial") return ModelKind::partial;
  if (s == "trace" || s == "trace-driven") return ModelKind::trace;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

// A simulator with its facility, fixed parameters and summary map.
//  - homogeneous: theta = (beta); summary is the I column only.
//  - heterogeneous: theta = (beta_0, beta_1..K, beta_room); all columns.
//  - partial: as heterogeneous but summaries are taken from observations.
//  - trace: trace-driven simulation; all columns.
struct ModelSpec {
  ModelKind kind = ModelKind::heterogeneous;
  SimParams params;
  std::shared_ptr<const ContactPlan> plan;
  ScaleMeta scales;
  std::shared_ptr<const FacilityTraces> traces;  // patient labels for trace models

  static ModelSpec make(ModelKind kind, const SimParams& params, ContactPlan plan) {
    ModelSpec m;
    m.kind = kind;
    m.params = params;
    m.plan = std::make_shared<const ContactPlan>(std::move(plan));
    m.scales = summary_scales(*m.plan);
    m.check();
    return m;
  }

  // Full-occupancy facility with sequentially filled rooms.
  static ModelSpec static_facility(ModelKind kind, const SimParams& params, int n_floors,
                                   int per_floor, int beds_per_room, int horizon) {
    const Facility f = static_layout(n_floors, per_floor, beds_per_room, horizon);
    return make(kind, params, ContactPlan(f.layout, f.traces));
  }

  static ModelSpec homogeneous(const SimParams& params, int n, int horizon) {
    return static_facility(ModelKind::homogeneous, params, 1, n, 1, horizon);
  }

  void check() const {
    params.check();
    if (!plan) {
      throw std::invalid_argument("ModelSpec: no facility");
    }
    if (kind == ModelKind::partial && !params.eta) {
      throw std::invalid_argument("ModelSpec: partial model needs eta");
    }
  }

  int horizon() const { return plan->horizon(); }
  int n_floors() const { return plan->n_floors(); }
  int theta_dim() const { return kind == ModelKind::homogeneous ? 1 : n_floors() + 2; }
  int summary_dim() const {
    return kind == ModelKind::homogeneous ? horizon() : horizon() * (n_floors() + 2);
  }

  std::vector<std::string> labels() const {
    if (kind == ModelKind::homogeneous) {
      return {"beta"};
    }
    std::vector<std::string> out{"Facility"};
    for (int k = 1; k <= n_floors(); ++k) {
      out.push_back("Floor " + std::to_string(k));
    }
    out.push_back("Room");
    return out;
  }

  RateVector rates(std::span<const double> theta) const {
    if (static_cast<int>(theta.size()) != theta_dim()) {
      throw std::invalid_argument("ModelSpec: theta has " + std::to_string(theta.size()) +
                                  " components, model needs " + std::to_string(theta_dim()));
    }
    if (kind == ModelKind::homogeneous) {
      return RateVector::homogeneous(theta[0], n_floors());
    }
    return RateVector(std::vector<double>(theta.begin(), theta.end()));
  }

  // Colonization matrix (and the matrix summarized, which differs for the
  // partial model).
  EpidemicMatrix simulate_matrix(const RateVector& rates, std::uint64_t seed) const {
    SimParams p = params;
    p.seed = seed;
    switch (kind) {
      case ModelKind::homogeneous:
      case ModelKind::heterogeneous:
        return simulate_full(*plan, p, rates);
      case ModelKind::partial:
        return simulate_partial(*plan, p, rates).observation;
      case ModelKind::trace:
        return simulate_trace(*plan, rates, seed);
    }
    throw std::logic_error("ModelSpec: unknown kind");
  }

  SummaryMatrix summarize(const EpidemicMatrix& x) const { return summary_matrix(x, *plan, scales); }

  std::vector<double> features(const SummaryMatrix& s) const {
    return kind == ModelKind::homogeneous ? s.flatten({0}) : s.flatten();
  }

  std::vector<double> simulate_features(std::span<const double> theta, std::uint64_t seed) const {
    return features(summarize(simulate_matrix(rates(theta), seed)));
  }

  // Complete-data log-likelihood (fully observed models only).
  double log_likelihood(const EpidemicMatrix& x, std::span<const double> theta) const {
    for (double v : theta) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        return kNegInf;
      }
    }
    if (kind == ModelKind::homogeneous) {
      return log_likelihood_homogeneous(x, theta[0], params);
    }
    if (kind == ModelKind::heterogeneous) {
      return log_likelihood_full(x, rates(theta), params, *plan);
    }
    throw std::invalid_argument("ModelSpec: likelihood only available for fully observed models");
  }

  nlohmann::json describe() const {
    nlohmann::json j{{"kind", to_string(kind)},
                     {"N", plan->size()},
                     {"T", horizon()},
                     {"K", n_floors()},
                     {"alpha", params.alpha},
                     {"gamma", params.gamma}};
    if (params.eta) {
      j["eta"] = *params.eta;
    }
    return j;
  }
};

// --- simulation batches ---------------------------------------------------

struct SimulationBatch {
  std::vector<Theta> theta;
  std::vector<std::vector<double>> x;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return theta.size(); }
  int theta_dim() const { return theta.empty() ? 0 : static_cast<int>(theta.front().size()); }
  int x_dim() const { return x.empty() ? 0 : static_cast<int>(x.front().size()); }

  bool operator==(const SimulationBatch& o) const { return theta == o.theta && x == o.x; }
};

// Seed used to simulate candidate s (its theta uses derive_seed(seed, s)).
inline std::uint64_t simulation_seed(std::uint64_t seed, std::size_t s) {
  return rng::derive_seed(rng::derive_seed(seed, s), 2);
}

inline SimulationBatch simulate_batch(const Prior& prior, const ModelSpec& model, std::size_t n,
                                      std::uint64_t seed, int threads = 1) {
  prior.check();
  model.check();
  if (n < 1) {
    throw std::invalid_argument("simulate_batch: S must be >= 1");
  }
  if (prior.dim() != model.theta_dim()) {
    throw std::invalid_argument("simulate_batch: prior dimension " + std::to_string(prior.dim()) +
                                " does not match model dimension " +
                                std::to_string(model.theta_dim()));
  }
  SimulationBatch batch;
  batch.theta.resize(n);
  batch.x.resize(n);
  parallel_for(n, threads, [&](std::size_t s) {
    batch.theta[s] = prior_draw(prior, rng::derive_seed(seed, s));
    try {
      batch.x[s] = model.simulate_features(batch.theta[s], simulation_seed(seed, s));
    } catch (const std::exception& e) {
      throw std::runtime_error("simulate_batch: simulation " + std::to_string(s) + " failed: " +
                               e.what());
    }
  });
  batch.metadata = {{"seed", seed}, {"S", n}, {"model", model.describe()}, {"prior", to_json(prior)}};
  return batch;
}

namespace detail {

inline void write_rows(const std::string& path, const std::string& prefix,
                       const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  for (std::size_t j = 0; j < d; ++j) {
    out << (j ? "," : "") << prefix << j + 1;
  }
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      out << (j ? "," : "") << csv::format_double(row[j]);
    }
    out << '\n';
  }
}

inline std::vector<std::vector<double>> read_rows(const std::string& path) {
  const auto table = csv::read(path);
  std::vector<std::vector<double>> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::vector<double> v;
    v.reserve(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      v.push_back(csv::parse_double(row[j], table.header[j]));
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

inline void save_batch(const SimulationBatch& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_rows((dir / "theta.csv").string(), "theta_", b.theta);
  detail::write_rows((dir / "summaries.csv").string(), "x_", b.x);
  std::ofstream meta(dir / "batch.json");
  meta << b.metadata.dump(2) << '\n';
}

inline SimulationBatch load_batch(const std::filesystem::path& dir) {
  SimulationBatch b;
  b.theta = detail::read_rows((dir / "theta.csv").string());
  b.x = detail::read_rows((dir / "summaries.csv").string());
  if (b.theta.size() != b.x.size()) {
    throw std::runtime_error("batch: theta and summaries row counts differ");
  }
  std::ifstream meta(dir / "batch.json");
  if (meta) {
    b.metadata = nlohmann::json::parse(meta);
  }
  return b;
}

// --- posterior results ----------------------------------------------------

struct PosteriorResult {
  enum class Kind { parametric, draws };
  Kind kind = Kind::draws;

  density::HeadOutput head;
  density::Transform transform = density::Transform::natural;
  bool truncate_at_zero = false;

  std::vector<Theta> draws;

  std::string estimator;
  std::size_t budget = 0;     // simulations or proposals consumed
  std::size_t accepted = 0;
  bool capped = false;        // proposal cap reached before the target

  int dim() const {
    return kind == Kind::parametric ? head.dim()
                                    : (draws.empty() ? 0 : static_cast<int>(draws.front().size()));
  }
  double acceptance_rate() const {
    return budget == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(budget);
  }
};

inline nlohmann::json head_to_json(const PosteriorResult& r) {
  return {{"head", density::to_string(r.head.kind)},
          {"mean", r.head.mean},
          {"scale", r.head.scale},
          {"transform", density::to_string(r.transform)},
          {"truncate_at_zero", r.truncate_at_zero},
          {"estimator", r.estimator},
          {"budget", r.budget}};
}

inline PosteriorResult head_from_json(const nlohmann::json& j) {
  PosteriorResult r;
  r.kind = PosteriorResult::Kind::parametric;
  r.head.kind = density::head_kind_from(j.at("head").get<std::string>());
  r.head.mean = j.at("mean").get<std::vector<double>>();
  r.head.scale = j.at("scale").get<std::vector<double>>();
  r.transform = density::transform_from(j.at("transform").get<std::string>());
  r.truncate_at_zero = j.value("truncate_at_zero", false);
  r.estimator = j.value("estimator", std::string("npe"));
  r.budget = j.value("budget", std::size_t{0});
  const std::size_t d = r.head.mean.size();
  if (d == 0 || r.head.scale.size() != (r.head.full() ? d * d : d)) {
    throw std::runtime_error("posterior head: inconsistent mean/scale sizes");
  }
  return r;
}

inline void write_draws_csv(const std::vector<Theta>& draws, const std::string& path) {
  detail::write_rows(path, "theta_", draws);
}

inline std::vector<Theta> read_draws_csv(const std::string& path) { return detail::read_rows(path); }

// --- neural posterior estimation ------------------------------------------

struct TrainConfig {
  double train_fraction = 0.75;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int max_epochs = 500;
  int patience = 20;
  std::uint64_t seed = 0;
  int threads = 1;

  void check() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw std::invalid_argument("TrainConfig: train_fraction must be in (0,1)");
    }
    if (!(learning_rate > 0.0) || weight_decay < 0.0 || batch_size < 1 || max_epochs < 1 ||
        patience < 1) {
      throw std::invalid_argument("TrainConfig: rates, batch size, epochs and patience must be positive");
    }
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = 0;  // 0 = initialization
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
};

struct DensityEstimator {
  density::EncoderConfig config;
  density::EncoderWeights weights;

  density::HeadOutput head(std::span<const double> x) const {
    return density::forward(weights, config, x);
  }
};

struct TrainResult {
  DensityEstimator estimator;
  TrainHistory history;
};

namespace detail {

// Gradient shards are fixed in number so results do not depend on the
// thread count.
inline constexpr std::size_t kGradShards = 4;

class AdamW {
 public:
  AdamW(const density::EncoderWeights& w, double lr, double wd) : lr_(lr), wd_(wd) {
    m_ = density::zero_weights_like(w);
    v_ = m_;
  }

  void step(density::EncoderWeights& w, const density::EncoderWeights& g) {
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      auto update = [&](std::vector<double>& p, const std::vector<double>& gp, std::vector<double>& m,
                        std::vector<double>& v, double decay) {
        for (std::size_t k = 0; k < p.size(); ++k) {
          m[k] = b1 * m[k] + (1.0 - b1) * gp[k];
          v[k] = b2 * v[k] + (1.0 - b2) * gp[k] * gp[k];
          p[k] -= lr_ * decay * p[k];
          p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
      };
      update(w.layers[l].weight, g.layers[l].weight, m_.layers[l].weight, v_.layers[l].weight, wd_);
      update(w.layers[l].bias, g.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias, 0.0);
    }
  }

 private:
  double lr_;
  double wd_;
  int t_ = 0;
  density::EncoderWeights m_;
  density::EncoderWeights v_;
};

inline void add_into(density::EncoderWeights& acc, const density::EncoderWeights& g) {
  for (std::size_t l = 0; l < acc.layers.size(); ++l) {
    for (std::size_t k = 0; k < acc.layers[l].weight.size(); ++k) {
      acc.layers[l].weight[k] += g.layers[l].weight[k];
    }
    for (std::size_t k = 0; k < acc.layers[l].bias.size(); ++k) {
      acc.layers[l].bias[k] += g.layers[l].bias[k];
    }
  }
}

}  // namespace detail

// Mean negative log-density of the targets under the network.
inline double mean_nll(const DensityEstimator& est, const std::vector<std::vector<double>>& x,
                       const std::vector<Theta>& theta, std::span<const std::size_t> index) {
  double total = 0.0;
  for (std::size_t k : index) {
    total += density::nll(est.head(x[k]), theta[k], est.config.transform);
  }
  return total / static_cast<double>(index.size());
}

// Fits q(theta | x) by minibatch AdamW on the 75% training split, keeping
// the weights of the best validation epoch. Targets are standardized
// internally and the affine map is folded into the output layer afterwards,
// so losses and the returned network refer to the original scale.
inline TrainResult train_npe(const SimulationBatch& batch, density::EncoderConfig cfg,
                             const TrainConfig& train) {
  train.check();
  const std::size_t n = batch.size();
  if (n < 8) {
    throw std::invalid_argument("train_npe: need at least 8 simulations, got " + std::to_string(n));
  }
  const std::size_t n_train = static_cast<std::size_t>(std::llround(train.train_fraction * n));
  if (n_train < 1 || n - n_train < 2) {
    throw std::invalid_argument("train_npe: split leaves fewer than 2 validation points");
  }
  cfg.input_dim = batch.x_dim();
  cfg.theta_dim = batch.theta_dim();
  cfg.check();

  TrainResult result;
  auto& hist = result.history;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::Stream split_rng(train.seed, 0x5B17);
  std::shuffle(order.begin(), order.end(), split_rng);
  hist.train_index.assign(order.begin(), order.begin() + n_train);
  hist.val_index.assign(order.begin() + n_train, order.end());

  // Gaussian coordinates of the targets, standardized on the training split.
  const int d = cfg.theta_dim;
  std::vector<Theta> u(n);
  std::vector<double> jac(n);
  for (std::size_t s = 0; s < n; ++s) {
    jac[s] = density::to_gaussian_coords(batch.theta[s], cfg.transform, u[s]);
  }
  std::vector<double> shift(d, 0.0);
  std::vector<double> scale(d, 0.0);
  for (std::size_t s : hist.train_index) {
    for (int j = 0; j < d; ++j) shift[j] += u[s][j];
  }
  for (int j = 0; j < d; ++j) shift[j] /= static_cast<double>(n_train);
  for (std::size_t s : hist.train_index) {
    for (int j = 0; j < d; ++j) scale[j] += (u[s][j] - shift[j]) * (u[s][j] - shift[j]);
  }
  double log_scale_sum = 0.0;
  for (int j = 0; j < d; ++j) {
    scale[j] = std::sqrt(scale[j] / static_cast<double>(n_train));
    if (!(scale[j] > 0.0)) {
      scale[j] = 1.0;
    }
    log_scale_sum += std::log(scale[j]);
  }
  std::vector<Theta> z(n, Theta(d));
  for (std::size_t s = 0; s < n; ++s) {
    for (int j = 0; j < d; ++j) z[s][j] = (u[s][j] - shift[j]) / scale[j];
  }
  double val_jac = 0.0;
  for (std::size_t s : hist.val_index) val_jac += jac[s];
  val_jac /= static_cast<double>(hist.val_index.size());
  double train_jac = 0.0;
  for (std::size_t s : hist.train_index) train_jac += jac[s];
  train_jac /= static_cast<double>(n_train);

  density::EncoderConfig inner = cfg;
  inner.transform = density::Transform::natural;
  DensityEstimator est{inner, density::init_weights(inner, rng::derive_seed(train.seed, 0x1417))};

  auto val_loss = [&](const DensityEstimator& e) {
    return mean_nll(e, batch.x, z, hist.val_index) + log_scale_sum + val_jac;
  };

  hist.initial_val_loss = val_loss(est);
  hist.best_val_loss = hist.initial_val_loss;
  density::EncoderWeights best = est.weights;
  detail::AdamW opt(est.weights, train.learning_rate, train.weight_decay);
  std::vector<std::size_t> perm = hist.train_index;
  int since_best = 0;

  for (int epoch = 1; epoch <= train.max_epochs; ++epoch) {
    rng::Stream shuffle_rng(rng::derive_seed(train.seed, static_cast<std::uint64_t>(epoch)), 0x5B18);
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < perm.size(); start += train.batch_size) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(train.batch_size));
      const std::size_t m = stop - start;
      const double weight = 1.0 / static_cast<double>(m);
      std::vector<density::EncoderWeights> partial(detail::kGradShards);
      std::vector<double> partial_loss(detail::kGradShards, 0.0);
      parallel_for(detail::kGradShards, train.threads, [&](std::size_t shard) {
        partial[shard] = density::zero_weights_like(est.weights);
        for (std::size_t k = start + shard; k < stop; k += detail::kGradShards) {
          const std::size_t s = perm[k];
          partial_loss[shard] += weight * density::accumulate_gradient(
                                              est.weights, inner, {batch.x[s], z[s]}, weight,
                                              partial[shard]);
        }
      });
      for (std::size_t shard = 1; shard < detail::kGradShards; ++shard) {
        detail::add_into(partial[0], partial[shard]);
      }
      double loss = 0.0;
      for (double v : partial_loss) loss += v;
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_npe: non-finite training loss at epoch " +
                                 std::to_string(epoch) + ", minibatch starting at " +
                                 std::to_string(start));
      }
      opt.step(est.weights, partial[0]);
      epoch_loss += loss * static_cast<double>(m);
    }
    const double tl = epoch_loss / static_cast<double>(n_train) + log_scale_sum + train_jac;
    const double vl = val_loss(est);
    if (!std::isfinite(vl)) {
      throw std::runtime_error("train_npe: non-finite validation loss at epoch " +
                               std::to_string(epoch) + " (train loss " + std::to_string(tl) + ")");
    }
    hist.train_loss.push_back(tl);
    hist.val_loss.push_back(vl);
    if (vl < hist.best_val_loss) {
      hist.best_val_loss = vl;
      hist.best_epoch = epoch;
      best = est.weights;
      since_best = 0;
    } else if (++since_best >= train.patience) {
      break;
    }
  }

  density::fold_target_affine(best, cfg, shift, scale);
  result.estimator = {cfg, std::move(best)};
  return result;
}

inline PosteriorResult npe_posterior(const DensityEstimator& est, std::span<const double> x_o,
                                     bool truncate_at_zero = false) {
  if (static_cast<int>(x_o.size()) != est.config.input_dim) {
    throw std::invalid_argument("npe_posterior: observation has " + std::to_string(x_o.size()) +
                                " entries, estimator was trained on " +
                                std::to_string(est.config.input_dim));
  }
  PosteriorResult r;
  r.kind = PosteriorResult::Kind::parametric;
  r.head = est.head(x_o);
  r.transform = est.config.transform;
  r.truncate_at_zero = truncate_at_zero;
  r.estimator = "npe";
  return r;
}

// --- ABC ------------------------------------------------------------------

struct AbcAccept {
  enum class Mode { epsilon, top_k };
  Mode mode = Mode::top_k;
  double epsilon = std::numeric_limits<double>::infinity();
  std::size_t k = 100;

  static AbcAccept within(double eps) { return {Mode::epsilon, eps, 0}; }
  static AbcAccept nearest(std::size_t k) { return {Mode::top_k, 0.0, k}; }
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("distance: summary lengths differ (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    acc += (a[j] - b[j]) * (a[j] - b[j]);
  }
  return std::sqrt(acc);
}

// Accepts candidates from their distances: within epsilon (inclusive) or
// the k nearest, ties broken by candidate order.
inline PosteriorResult abc_select(const std::vector<Theta>& theta, const std::vector<double>& dist,
                                  const AbcAccept& accept, std::string name) {
  if (theta.empty()) {
    throw std::invalid_argument("abc: no candidates");
  }
  PosteriorResult r;
  r.kind = PosteriorResult::Kind::draws;
  r.estimator = std::move(name);
  r.budget = theta.size();
  if (accept.mode == AbcAccept::Mode::epsilon) {
    for (std::size_t s = 0; s < theta.size(); ++s) {
      if (dist[s] <= accept.epsilon) {
        r.draws.push_back(theta[s]);
      }
    }
    if (r.draws.empty()) {
      throw std::runtime_error("abc: no candidate within epsilon = " +
                               std::to_string(accept.epsilon) +
                               "; use nearest-k acceptance instead");
    }
  } else {
    if (accept.k < 1 || accept.k > theta.size()) {
      throw std::invalid_argument("abc: k must be in [1, " + std::to_string(theta.size()) + "]");
    }
    std::vector<std::size_t> order(theta.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&dist](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    for (std::size_t j = 0; j < accept.k; ++j) {
      r.draws.push_back(theta[order[j]]);
    }
  }
  r.accepted = r.draws.size();
  return r;
}

inline PosteriorResult abc(const SimulationBatch& batch, std::span<const double> x_o,
                           const AbcAccept& accept) {
  std::vector<double> dist(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    dist[s] = euclidean(batch.x[s], x_o);
  }
  return abc_select(batch.theta, dist, accept, "abc");
}

// Candidates simulated on the fly and discarded after their distance is
// known; accepts the same set as abc() on simulate_batch with equal seed.
inline PosteriorResult abc(const Prior& prior, const ModelSpec& model, std::span<const double> x_o,
                           const AbcAccept& accept, std::size_t n_candidates, std::uint64_t seed,
                           int threads = 1) {
  prior.check();
  if (n_candidates < 1) {
    throw std::invalid_argument("abc: need at least one candidate");
  }
  std::vector<Theta> theta(n_candidates);
  std::vector<double> dist(n_candidates);
  parallel_for(n_candidates, threads, [&](std::size_t s) {
    theta[s] = prior_draw(prior, rng::derive_seed(seed, s));
    dist[s] = euclidean(model.simulate_features(theta[s], simulation_seed(seed, s)), x_o);
  });
  return abc_select(theta, dist, accept, "abc");
}

inline double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ABC on a scalar statistic of the summaries (the series mean by default).
inline PosteriorResult abc_scalar(
    const SimulationBatch& batch, std::span<const double> x_o, const AbcAccept& accept,
    const std::function<double(std::span<const double>)>& g = mean_of) {
  const double target = g(x_o);
  std::vector<double> dist(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    dist[s] = std::abs(g(batch.x[s]) - target);
  }
  return abc_select(batch.theta, dist, accept, "abc-s");
}

// --- rejection sampling ---------------------------------------------------

using LogLik = std::function<double(std::span<const double>)>;
using Proposal = std::function<Theta(std::uint64_t)>;

struct MaxResult {
  double log_M = 0.0;      // max log-likelihood found plus log 1.1
  double max_value = 0.0;  // max log-likelihood found
  Theta argmax;
};

// Multi-start coordinate search on the prior's Gaussian coordinates, from
// starts at the prior quantiles 0.1, 0.3, 0.5, 0.7, 0.9. `budget` caps the
// number of likelihood evaluations.
inline MaxResult find_log_M(const LogLik& log_lik, const Prior& prior, std::size_t budget) {
  prior.check();
  if (budget < 1) {
    throw std::invalid_argument("find_log_M: budget must be >= 1");
  }
  const int d = prior.dim();
  const double quantiles[] = {-1.2815515655446004, -0.5244005127080407, 0.0, 0.5244005127080407,
                              1.2815515655446004};
  std::size_t used = 0;
  MaxResult best{kNegInf, kNegInf, {}};
  auto eval = [&](const std::vector<double>& latent) {
    Theta theta(d);
    for (int j = 0; j < d; ++j) theta[j] = prior.from_latent(latent[j]);
    ++used;
    double v = log_lik(theta);
    if (std::isnan(v)) v = kNegInf;
    if (v > best.max_value || best.argmax.empty()) {
      best.max_value = v;
      best.argmax = theta;
    }
    return v;
  };
  const std::size_t per_start = std::max<std::size_t>(1, budget / std::size(quantiles));
  for (double q : quantiles) {
    if (used >= budget) break;
    const std::size_t stop = std::min(budget, used + per_start);
    std::vector<double> at(d);
    for (int j = 0; j < d; ++j) at[j] = prior.mu[j] + q * prior.sigma[j];
    double value = eval(at);
    std::vector<double> step(prior.sigma);
    while (used < stop) {
      bool moved = false;
      for (int j = 0; j < d && used < stop; ++j) {
        for (double dir : {1.0, -1.0}) {
          if (used >= stop) break;
          auto trial = at;
          trial[j] += dir * step[j];
          const double v = eval(trial);
          if (v > value) {
            value = v;
            at = std::move(trial);
            moved = true;
            break;
          }
        }
      }
      if (!moved) {
        double largest = 0.0;
        for (auto& s : step) {
          s *= 0.5;
          largest = std::max(largest, s);
        }
        if (largest < 1e-8) break;
      }
    }
  }
  best.log_M = best.max_value + std::log(1.1);
  return best;
}

struct RejectionConfig {
  std::size_t target = 100;
  std::size_t max_proposals = 10'000'000;
  std::uint64_t seed = 0;
  int threads = 1;
  std::size_t block = 1024;  // proposals evaluated per round
};

// Exact posterior draws: proposal p is accepted when
// u_p < exp(log_lik(theta_p) - log_M). Stops at `target` acceptances (in
// proposal order) or at the proposal cap, which sets `capped`.
inline PosteriorResult rejection_sample(const Proposal& propose, const LogLik& log_lik, double log_M,
                                        const RejectionConfig& cfg) {
  if (cfg.target < 1) {
    throw std::invalid_argument("rejection_sample: target must be >= 1");
  }
  PosteriorResult r;
  r.kind = PosteriorResult::Kind::draws;
  r.estimator = "reject";
  std::size_t next = 0;
  while (r.draws.size() < cfg.target && next < cfg.max_proposals) {
    const std::size_t m = std::min(cfg.block, cfg.max_proposals - next);
    std::vector<Theta> theta(m);
    std::vector<double> ll(m);
    parallel_for(m, cfg.threads, [&](std::size_t k) {
      theta[k] = propose(rng::derive_seed(cfg.seed, next + k));
      ll[k] = log_lik(theta[k]);
    });
    for (std::size_t k = 0; k < m && r.draws.size() < cfg.target; ++k) {
      ++r.budget;
      if (ll[k] > log_M) {
        std::string where;
        for (double v : theta[k]) where += (where.empty() ? "" : ", ") + csv::format_double(v);
        throw std::runtime_error("rejection_sample: log-likelihood " + std::to_string(ll[k]) +
                                 " exceeds log M = " + std::to_string(log_M) + " at theta = (" +
                                 where + "); M is too small");
      }
      rng::Stream u(rng::derive_seed(cfg.seed, next + k), 3);
      if (std::log(u.uniform()) < ll[k] - log_M) {
        r.draws.push_back(theta[k]);
      }
    }
    next += m;
  }
  r.accepted = r.draws.size();
  r.capped = r.draws.size() < cfg.target;
  return r;
}

inline PosteriorResult rejection_sample(const Prior& prior, const LogLik& log_lik, double log_M,
                                        const RejectionConfig& cfg) {
  prior.check();
  return rejection_sample([&prior](std::uint64_t s) { return prior_draw(prior, s); }, log_lik,
                          log_M, cfg);
}

}  // namespace hai_sbi::inference
