#pragma once

// Exact probabilities for the random-turnover model: per-location
// transitions, the full-observation likelihood, the observation model given
// colonization (no turnover), a brute-force marginal over colonization for
// tiny instances, and reproduction numbers.
//
// All values are natural-log densities; impossible data gives -inf.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "simulator.hpp"

namespace hai_sbi {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

// P(next | prev) at one location given the hazard it faces.
inline double transition_prob(bool prev_infected, bool next_infected, double lambda, double gamma,
                              double alpha) {
  const double stay = 1.0 - gamma;
  double p_infected;
  if (prev_infected) {
    p_infected = gamma * alpha + stay;
  } else {
    p_infected = gamma * alpha + stay * -std::expm1(-lambda);
  }
  if (next_infected) {
    return p_infected;
  }
  return prev_infected ? gamma * (1.0 - alpha) : gamma * (1.0 - alpha) + stay * std::exp(-lambda);
}

inline double transition_log_prob(bool prev_infected, bool next_infected, double lambda,
                                  double gamma, double alpha) {
  return safe_log(transition_prob(prev_infected, next_infected, lambda, gamma, alpha));
}

inline void require_complete(const EpidemicMatrix& x) {
  for (int t = 0; t < x.horizon(); ++t) {
    for (State s : x.step(t)) {
      if (s == State::absent) {
        throw std::invalid_argument("likelihood: matrix has absent entries");
      }
    }
  }
}

// Hazard supplied by the caller: (location, step, previous states) -> lambda.
using HazardFn = std::function<double(int, int, std::span<const State>)>;

inline double log_likelihood_with_hazards(const EpidemicMatrix& x, const SimParams& params,
                                          const HazardFn& hazard) {
  params.check();
  require_complete(x);
  double total = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    total += safe_log(x.infected(i, 0) ? params.alpha : 1.0 - params.alpha);
  }
  for (int t = 1; t < x.horizon(); ++t) {
    const auto prev = x.step(t - 1);
    for (int i = 0; i < x.size(); ++i) {
      const bool was = prev[i] == State::infected;
      const double lambda = was ? 0.0 : hazard(i, t, prev);
      total += transition_log_prob(was, x.infected(i, t), lambda, params.gamma, params.alpha);
    }
  }
  return total;
}

// Complete-data log-likelihood of a colonization matrix from the
// random-turnover model. O(T N) via per-step aggregate counts.
inline double log_likelihood_full(const EpidemicMatrix& x, const RateVector& rates,
                                  const SimParams& params, const ContactPlan& plan) {
  params.check();
  require_complete(x);
  check_rate_dimension(rates, plan.n_floors());
  if (x.size() != plan.size() || x.horizon() > plan.horizon()) {
    throw std::invalid_argument("log_likelihood_full: matrix does not match facility");
  }
  double total = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    total += safe_log(x.infected(i, 0) ? params.alpha : 1.0 - params.alpha);
  }
  for (int t = 1; t < x.horizon(); ++t) {
    const auto prev = x.step(t - 1);
    const auto& step = plan.step(t);
    const InfectionPressure pressure(step, prev, rates);
    for (const auto& o : step.occupants) {
      const bool was = prev[o.individual] == State::infected;
      const double lambda = was ? 0.0 : pressure.hazard(o.floor, o.room);
      total += transition_log_prob(was, x.infected(o.individual, t), lambda, params.gamma,
                                   params.alpha);
    }
  }
  return total;
}

inline double log_likelihood_full(const EpidemicMatrix& x, const RateVector& rates,
                                  const SimParams& params, const Layout& layout) {
  return log_likelihood_full(x, rates, params, detail::static_plan(layout, x.horizon()));
}

// Homogeneous mixing: lambda = beta * I / N for every susceptible, so the
// four transition log-probabilities are computed once per step.
inline double log_likelihood_homogeneous(const EpidemicMatrix& x, double beta,
                                         const SimParams& params) {
  params.check();
  require_complete(x);
  const int n = x.size();
  double total = 0.0;
  const double log_a = safe_log(params.alpha);
  const double log_not_a = safe_log(1.0 - params.alpha);
  for (int i = 0; i < n; ++i) {
    total += x.infected(i, 0) ? log_a : log_not_a;
  }
  for (int t = 1; t < x.horizon(); ++t) {
    const auto prev = x.step(t - 1);
    int infected = 0;
    for (State s : prev) {
      infected += s == State::infected ? 1 : 0;
    }
    const double lambda = pressure_term(beta, infected, n);
    const double lp[2][2] = {
        {transition_log_prob(false, false, lambda, params.gamma, params.alpha),
         transition_log_prob(false, true, lambda, params.gamma, params.alpha)},
        {transition_log_prob(true, false, 0.0, params.gamma, params.alpha),
         transition_log_prob(true, true, 0.0, params.gamma, params.alpha)}};
    for (int i = 0; i < n; ++i) {
      total += lp[prev[i] == State::infected][x.infected(i, t)];
    }
  }
  return total;
}

// How an unobserved colonization becomes observed, without turnover.
//  - screened: everyone is screened at step 0 (observation equals
//    colonization there); afterwards a colonized, unobserved patient is
//    observed with probability eta per step. This is the law the
//    partial-observation simulator follows.
//  - cumulative: no screening; given first observation has not happened,
//    it happens at step t with probability 1 - (1 - eta)^W_t where W_t
//    counts colonized steps so far.
enum class ObservationLaw { screened, cumulative };

inline double obs_log_prob_given_X(const EpidemicMatrix& y, const EpidemicMatrix& x, double eta,
                                   ObservationLaw law = ObservationLaw::cumulative) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::invalid_argument("obs_log_prob_given_X: eta must be in [0,1]");
  }
  if (y.size() != x.size() || y.horizon() != x.horizon()) {
    throw std::invalid_argument("obs_log_prob_given_X: shape mismatch");
  }
  require_complete(x);
  require_complete(y);
  double total = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    int colonized_steps = 0;
    for (int t = 0; t < x.horizon(); ++t) {
      colonized_steps += x.infected(i, t) ? 1 : 0;
      const bool seen = y.infected(i, t);
      const bool seen_before = t > 0 && y.infected(i, t - 1);
      if (seen_before) {
        if (!seen) {
          return kNegInf;
        }
        continue;
      }
      double p_seen;
      if (law == ObservationLaw::cumulative) {
        p_seen = 1.0 - std::pow(1.0 - eta, colonized_steps);
      } else if (t == 0) {
        p_seen = x.infected(i, 0) ? 1.0 : 0.0;
      } else {
        p_seen = x.infected(i, t) ? eta : 0.0;
      }
      total += safe_log(seen ? p_seen : 1.0 - p_seen);
      if (total == kNegInf) {
        return kNegInf;
      }
    }
  }
  return total;
}

inline double log_sum_exp(const std::vector<double>& terms) {
  const double top = *std::max_element(terms.begin(), terms.end());
  if (top == kNegInf) {
    return kNegInf;
  }
  double acc = 0.0;
  for (double v : terms) {
    acc += std::exp(v - top);
  }
  return top + std::log(acc);
}

inline constexpr int kMaxEnumerationCells = 20;

// log p(Y) by summing the complete likelihood over every colonization
// matrix. Only for tiny instances without turnover; used as a test oracle.
inline double marginal_log_lik_partial_enum(const EpidemicMatrix& y, const RateVector& rates,
                                            const SimParams& params, const ContactPlan& plan,
                                            ObservationLaw law = ObservationLaw::screened) {
  if (!params.eta) {
    throw std::invalid_argument("marginal_log_lik_partial_enum: eta is required");
  }
  if (params.gamma != 0.0) {
    throw std::invalid_argument("marginal_log_lik_partial_enum: only defined for gamma = 0");
  }
  const int n = y.size();
  const int horizon = y.horizon();
  const int cells = n * horizon;
  if (cells > kMaxEnumerationCells) {
    throw std::invalid_argument("marginal_log_lik_partial_enum: N*T = " + std::to_string(cells) +
                                " exceeds enumeration limit " +
                                std::to_string(kMaxEnumerationCells));
  }
  std::vector<double> terms;
  EpidemicMatrix x(n, horizon, MatrixKind::colonization);
  for (std::uint32_t bits = 0; bits < (1u << cells); ++bits) {
    for (int c = 0; c < cells; ++c) {
      x.set(c % n, c / n, (bits >> c) & 1u ? State::infected : State::susceptible);
    }
    const double obs = obs_log_prob_given_X(y, x, *params.eta, law);
    if (obs == kNegInf) {
      continue;
    }
    terms.push_back(log_likelihood_full(x, rates, params, plan) + obs);
  }
  return terms.empty() ? kNegInf : log_sum_exp(terms);
}

inline double r0(double beta, double gamma, double alpha) {
  const double removal = gamma * (1.0 - alpha);
  if (!(removal > 0.0)) {
    throw std::invalid_argument("r0: undefined when gamma * (1 - alpha) = 0");
  }
  return beta / removal;
}

// Floor rates are averaged since an infected patient sits on one floor.
inline double r0(const RateVector& rates, double gamma, double alpha) {
  double floors = 0.0;
  for (int k = 0; k < rates.n_floors(); ++k) {
    floors += rates.floor(k);
  }
  return r0(rates.facility() + floors / rates.n_floors() + rates.room(), gamma, alpha);
}

}  // namespace hai_sbi
