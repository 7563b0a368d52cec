#pragma once

// Posterior summaries, correlations, posterior predictive bands and
// intervention comparisons with common random numbers.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "inference.hpp"
#include "parallel.hpp"

namespace hai_sbi::analysis {

using inference::PosteriorResult;
using inference::Theta;

inline constexpr std::size_t kMinSummaryDraws = 20;

// Draws behind a result: parametric heads are sampled (with truncation when
// the result asks for it), stored draws are returned as they are.
inline std::vector<Theta> draws_of(const PosteriorResult& r, std::size_t n, std::uint64_t seed) {
  if (r.kind == PosteriorResult::Kind::draws) {
    if (r.draws.empty()) {
      throw std::invalid_argument("posterior has no draws");
    }
    return r.draws;
  }
  return density::sample(r.head, n, r.transform, r.truncate_at_zero, seed);
}

// Linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) {
    throw std::invalid_argument("quantile: empty sample");
  }
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct PosteriorSummary {
  std::vector<std::string> labels;
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<double> lower;
  std::vector<double> upper;
  double lower_p = 0.05;
  double upper_p = 0.95;
};

inline PosteriorSummary summarize_draws(const std::vector<Theta>& draws,
                                        std::vector<std::string> labels, double lower_p = 0.05,
                                        double upper_p = 0.95) {
  if (draws.size() < kMinSummaryDraws) {
    throw std::invalid_argument("summarize: " + std::to_string(draws.size()) +
                                " draws is too few for stable quantiles (need >= " +
                                std::to_string(kMinSummaryDraws) + ")");
  }
  if (!(lower_p >= 0.0 && lower_p <= upper_p && upper_p <= 1.0)) {
    throw std::invalid_argument("summarize: interval must satisfy 0 <= lower <= upper <= 1");
  }
  const std::size_t d = draws.front().size();
  if (labels.empty()) {
    for (std::size_t j = 0; j < d; ++j) labels.push_back("theta_" + std::to_string(j + 1));
  }
  if (labels.size() != d) {
    throw std::invalid_argument("summarize: label count does not match dimension");
  }
  PosteriorSummary out;
  out.labels = std::move(labels);
  out.lower_p = lower_p;
  out.upper_p = upper_p;
  const double n = static_cast<double>(draws.size());
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> col(draws.size());
    for (std::size_t s = 0; s < draws.size(); ++s) col[s] = draws[s][j];
    // Sorting first makes the sums independent of draw order; offsets from
    // the smallest draw keep constant columns exact.
    std::sort(col.begin(), col.end());
    double offset = 0.0;
    for (double v : col) offset += v - col.front();
    const double m = col.front() + offset / n;
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    out.mean.push_back(m);
    out.sd.push_back(std::sqrt(ss / (n - 1.0)));
    out.lower.push_back(quantile(col, lower_p));
    out.upper.push_back(quantile(col, upper_p));
  }
  return out;
}

inline PosteriorSummary summarize(const PosteriorResult& r, std::vector<std::string> labels = {},
                                  std::size_t n_draws = 4000, double lower_p = 0.05,
                                  double upper_p = 0.95, std::uint64_t seed = 0) {
  if (r.kind == PosteriorResult::Kind::parametric && n_draws < kMinSummaryDraws) {
    throw std::invalid_argument("summarize: n_draws must be >= " + std::to_string(kMinSummaryDraws));
  }
  return summarize_draws(draws_of(r, n_draws, seed), std::move(labels), lower_p, upper_p);
}

struct Correlation {
  int dim = 0;
  std::vector<double> value;       // row-major d x d
  std::vector<bool> zero_variance; // per component; its entries are set to 0
  double at(int r, int c) const { return value[static_cast<std::size_t>(r) * dim + c]; }
};

inline Correlation correlation_from_cov(const std::vector<double>& cov, int d) {
  Correlation out{d, std::vector<double>(static_cast<std::size_t>(d) * d, 0.0),
                  std::vector<bool>(d, false)};
  for (int j = 0; j < d; ++j) {
    out.zero_variance[j] = !(cov[static_cast<std::size_t>(j) * d + j] > 0.0);
  }
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      if (out.zero_variance[r] || out.zero_variance[c]) {
        continue;
      }
      out.value[static_cast<std::size_t>(r) * d + c] =
          r == c ? 1.0
                 : cov[static_cast<std::size_t>(r) * d + c] /
                       std::sqrt(cov[static_cast<std::size_t>(r) * d + r] *
                                 cov[static_cast<std::size_t>(c) * d + c]);
    }
  }
  return out;
}

inline Correlation correlation_of_draws(const std::vector<Theta>& draws) {
  if (draws.size() < 2) {
    throw std::invalid_argument("correlation: need at least 2 draws");
  }
  const int d = static_cast<int>(draws.front().size());
  if (d < 2) {
    throw std::invalid_argument("correlation: posterior is scalar, nothing to correlate");
  }
  std::vector<double> mean(d, 0.0);
  for (const auto& s : draws) {
    for (int j = 0; j < d; ++j) mean[j] += s[j];
  }
  for (auto& m : mean) m /= static_cast<double>(draws.size());
  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& s : draws) {
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) {
        cov[static_cast<std::size_t>(r) * d + c] += (s[r] - mean[r]) * (s[c] - mean[c]);
      }
    }
  }
  return correlation_from_cov(cov, d);
}

// Pearson correlations of posterior draws. With `analytic`, a parametric
// natural-scale result uses the head covariance L L^T directly.
inline Correlation correlation_matrix(const PosteriorResult& r, std::size_t n_draws = 4000,
                                      std::uint64_t seed = 0, bool analytic = false) {
  if (r.dim() < 2) {
    throw std::invalid_argument("correlation: posterior is scalar, nothing to correlate");
  }
  if (analytic && r.kind == PosteriorResult::Kind::parametric &&
      r.transform == density::Transform::natural && !r.truncate_at_zero) {
    return correlation_from_cov(r.head.covariance(), r.dim());
  }
  return correlation_of_draws(draws_of(r, n_draws, seed));
}

struct PredictiveBand {
  std::string scenario;
  std::vector<double> mean;
  std::vector<std::vector<double>> trajectories;  // one per draw, length T
};

inline std::vector<double> band_mean(const std::vector<std::vector<double>>& traj) {
  std::vector<double> mean(traj.front().size(), 0.0);
  for (const auto& tr : traj) {
    for (std::size_t t = 0; t < tr.size(); ++t) mean[t] += tr[t];
  }
  for (auto& m : mean) m /= static_cast<double>(traj.size());
  return mean;
}

struct NamedScenario {
  std::string name;
  InterventionSpec spec;
};

struct PredictiveConfig {
  int column = 0;  // summary column: 0 = I, 1..K floors, K+1 rooms
  std::size_t n_draws = 30;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline std::vector<Theta> predictive_draws(const PosteriorResult& r, std::size_t n,
                                           std::uint64_t seed) {
  if (n < 1) {
    throw std::invalid_argument("posterior_predictive: n_draws must be >= 1");
  }
  auto pool = draws_of(r, n, rng::derive_seed(seed, 0xD4A));
  std::vector<Theta> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = pool[k % pool.size()];
  for (const auto& th : out) {
    for (double v : th) {
      if (!(v >= 0.0)) {
        throw std::invalid_argument(
            "posterior_predictive: posterior draw has a negative rate; enable truncation at zero");
      }
    }
  }
  return out;
}

}  // namespace detail

// One band per scenario, all sharing the same posterior draws and the same
// simulation seed per draw. The first band is the unmodified baseline and,
// with `outside_only`, the last has all transmission switched off.
inline std::vector<PredictiveBand> intervention_compare(const PosteriorResult& r,
                                                        const inference::ModelSpec& model,
                                                        const std::vector<NamedScenario>& scenarios,
                                                        const PredictiveConfig& cfg,
                                                        bool outside_only = false) {
  if (cfg.column < 0 || cfg.column >= model.n_floors() + 2) {
    throw std::invalid_argument("posterior_predictive: column " + std::to_string(cfg.column) +
                                " out of range");
  }
  std::vector<NamedScenario> all{{"baseline", scenarios::identity()}};
  all.insert(all.end(), scenarios.begin(), scenarios.end());
  if (outside_only) {
    all.push_back({"outside-only", scenarios::no_transmission(model.n_floors())});
  }
  const auto draws = detail::predictive_draws(r, cfg.n_draws, cfg.seed);
  std::vector<PredictiveBand> bands(all.size());
  for (std::size_t s = 0; s < all.size(); ++s) {
    bands[s].scenario = all[s].name;
    bands[s].trajectories.resize(draws.size());
  }
  parallel_for(draws.size(), cfg.threads, [&](std::size_t k) {
    const RateVector base = model.rates(draws[k]);
    const std::uint64_t sim_seed = rng::derive_seed(cfg.seed, k + 1);
    for (std::size_t s = 0; s < all.size(); ++s) {
      const auto x = model.simulate_matrix(apply_intervention(base, all[s].spec), sim_seed);
      bands[s].trajectories[k] = model.summarize(x).column(cfg.column);
    }
  });
  for (auto& b : bands) {
    b.mean = band_mean(b.trajectories);
  }
  return bands;
}

inline PredictiveBand posterior_predictive(const PosteriorResult& r, const inference::ModelSpec& model,
                                           const PredictiveConfig& cfg) {
  return intervention_compare(r, model, {}, cfg).front();
}

// Share of steps where the observed value lies within the band's
// pointwise [lower_p, upper_p] trajectory quantiles.
inline double band_coverage(const PredictiveBand& band, const std::vector<double>& observed,
                            double lower_p = 0.0, double upper_p = 1.0) {
  std::size_t inside = 0;
  for (std::size_t t = 0; t < observed.size(); ++t) {
    std::vector<double> at;
    for (const auto& tr : band.trajectories) at.push_back(tr[t]);
    inside += observed[t] >= quantile(at, lower_p) && observed[t] <= quantile(at, upper_p) ? 1 : 0;
  }
  return static_cast<double>(inside) / static_cast<double>(observed.size());
}

// --- exports ------------------------------------------------------------------

inline std::string percent_label(double p) {
  const int pct = static_cast<int>(std::lround(p * 100.0));
  return std::string("q") + (pct < 10 ? "0" : "") + std::to_string(pct);
}

inline void write_summary_csv(const PosteriorSummary& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "component,mean,sd," << percent_label(s.lower_p) << ',' << percent_label(s.upper_p) << '\n';
  for (std::size_t j = 0; j < s.labels.size(); ++j) {
    out << s.labels[j] << ',' << csv::format_double(s.mean[j]) << ',' << csv::format_double(s.sd[j])
        << ',' << csv::format_double(s.lower[j]) << ',' << csv::format_double(s.upper[j]) << '\n';
  }
}

inline void write_correlation_csv(const Correlation& c, const std::vector<std::string>& labels,
                                  const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "component";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (int r = 0; r < c.dim; ++r) {
    out << labels.at(r);
    for (int col = 0; col < c.dim; ++col) out << ',' << csv::format_double(c.at(r, col));
    out << '\n';
  }
}

inline void write_bands_csv(const std::vector<PredictiveBand>& bands, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  const std::size_t n = bands.empty() ? 0 : bands.front().trajectories.size();
  out << "scenario,t,mean";
  for (std::size_t k = 1; k <= n; ++k) out << ",draw_" << k;
  out << '\n';
  for (const auto& b : bands) {
    for (std::size_t t = 0; t < b.mean.size(); ++t) {
      out << b.scenario << ',' << t + 1 << ',' << csv::format_double(b.mean[t]);
      for (const auto& tr : b.trajectories) out << ',' << csv::format_double(tr[t]);
      out << '\n';
    }
  }
}

}  // namespace hai_sbi::analysis
