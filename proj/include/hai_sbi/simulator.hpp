#pragma once

// Force of infection and the forward simulators: random turnover with full
// or partial observation of colonization, and the trace-driven simulator.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "facility.hpp"
#include "rng.hpp"

namespace hai_sbi {

// (facility, floor 1..K, room) transmission rates per step.
class RateVector {
 public:
  RateVector() = default;
  explicit RateVector(std::vector<double> beta) : beta_(std::move(beta)) {
    if (beta_.size() < 3) {
      throw std::invalid_argument("RateVector: need at least facility, one floor, and room rates");
    }
    for (double b : beta_) {
      if (!std::isfinite(b) || b < 0.0) {
        throw std::invalid_argument("RateVector: rates must be finite and >= 0");
      }
    }
  }

  // Homogeneous mixing: only the facility rate is nonzero.
  static RateVector homogeneous(double beta, int n_floors = 1) {
    std::vector<double> v(static_cast<std::size_t>(n_floors) + 2, 0.0);
    v[0] = beta;
    return RateVector(std::move(v));
  }

  int n_floors() const { return static_cast<int>(beta_.size()) - 2; }
  std::size_t size() const { return beta_.size(); }
  double facility() const { return beta_.front(); }
  double floor(int k) const { return beta_.at(static_cast<std::size_t>(k) + 1); }
  double room() const { return beta_.back(); }
  const std::vector<double>& values() const { return beta_; }
  double operator[](std::size_t j) const { return beta_[j]; }

  bool operator==(const RateVector&) const = default;

 private:
  std::vector<double> beta_;
};

struct SimParams {
  double alpha = 0.0;  // colonized fraction among admissions (and at step 0)
  double gamma = 0.0;  // per-step discharge-and-replace probability
  std::optional<double> eta;  // per-step observation probability
  std::uint64_t seed = 0;

  void check() const {
    auto unit = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument(std::string("SimParams: ") + name + " must be in [0,1]");
      }
    };
    unit(alpha, "alpha");
    unit(gamma, "gamma");
    if (eta) {
      unit(*eta, "eta");
    }
  }
};

enum class State : std::int8_t { absent = -1, susceptible = 0, infected = 1 };
enum class MatrixKind { colonization, observation };

// N x T tri-state matrix, stored step-major.
class EpidemicMatrix {
 public:
  EpidemicMatrix() = default;
  EpidemicMatrix(int n, int horizon, MatrixKind kind, State fill = State::susceptible)
      : n_(n), horizon_(horizon), kind_(kind), states_(static_cast<std::size_t>(n) * horizon, fill) {}

  int size() const { return n_; }
  int horizon() const { return horizon_; }
  MatrixKind kind() const { return kind_; }

  State at(int i, int t) const { return states_[index(i, t)]; }
  void set(int i, int t, State s) { states_[index(i, t)] = s; }
  bool infected(int i, int t) const { return at(i, t) == State::infected; }
  std::span<const State> step(int t) const {
    return {states_.data() + static_cast<std::size_t>(t) * n_, static_cast<std::size_t>(n_)};
  }

  bool operator==(const EpidemicMatrix&) const = default;

 private:
  std::size_t index(int i, int t) const {
    if (i < 0 || i >= n_ || t < 0 || t >= horizon_) {
      throw std::out_of_range("EpidemicMatrix: (" + std::to_string(i) + ", " +
                              std::to_string(t) + ") out of range");
    }
    return static_cast<std::size_t>(t) * n_ + i;
  }

  int n_ = 0;
  int horizon_ = 0;
  MatrixKind kind_ = MatrixKind::colonization;
  std::vector<State> states_;
};

struct InterventionSpec {
  double facility_scale = 1.0;
  std::vector<double> floor_scale;  // empty means 1 for every floor
  double room_scale = 1.0;
};

inline RateVector apply_intervention(const RateVector& rates, const InterventionSpec& spec) {
  const int k = rates.n_floors();
  if (!spec.floor_scale.empty() && static_cast<int>(spec.floor_scale.size()) != k) {
    throw std::invalid_argument("apply_intervention: " + std::to_string(spec.floor_scale.size()) +
                                " floor multipliers for " + std::to_string(k) + " floors");
  }
  auto checked = [](double m) {
    if (!(m >= 0.0) || !std::isfinite(m)) {
      throw std::invalid_argument("apply_intervention: multipliers must be finite and >= 0");
    }
    return m;
  };
  std::vector<double> beta = rates.values();
  beta.front() *= checked(spec.facility_scale);
  for (int f = 0; f < k; ++f) {
    beta[static_cast<std::size_t>(f) + 1] *= spec.floor_scale.empty() ? 1.0 : checked(spec.floor_scale[f]);
  }
  beta.back() *= checked(spec.room_scale);
  return RateVector(std::move(beta));
}

// The canned counterfactuals.
namespace scenarios {
inline InterventionSpec identity() { return {}; }
inline InterventionSpec floor_isolation(int n_floors) {
  return {1.0, std::vector<double>(n_floors, 0.1), 1.0};
}
inline InterventionSpec room_isolation() { return {1.0, {}, 0.0}; }
inline InterventionSpec uniform_reduction(int n_floors, double keep = 0.75) {
  return {keep, std::vector<double>(n_floors, keep), keep};
}
inline InterventionSpec no_transmission(int n_floors) {
  return {0.0, std::vector<double>(n_floors, 0.0), 0.0};
}
}  // namespace scenarios

// Rate divided by occupancy; zero when nobody else can be there.
inline double pressure_term(double rate, int infected, int population) {
  return population <= 1 ? 0.0 : rate * infected / population;
}

// Reference O(N) evaluation straight from the contact matrices.
// `prev` holds the states at the previous step.
inline double force_of_infection(int i, std::span<const State> prev, const ContactMatrices& c,
                                 const RateVector& rates) {
  if (static_cast<int>(prev.size()) != c.n) {
    throw std::invalid_argument("force_of_infection: state length differs from contact size");
  }
  if (!c.present[i]) {
    return 0.0;
  }
  int total = 0;
  int floor_mates = 0;
  int room_mates = 0;
  int population = 0;
  for (int j = 0; j < c.n; ++j) {
    if (!c.present[j]) {
      continue;
    }
    ++population;
    if (j == i || prev[j] != State::infected) {
      continue;
    }
    ++total;
    floor_mates += c.floor_contact(i, j) ? 1 : 0;
    room_mates += c.room_contact(i, j) ? 1 : 0;
  }
  const int floor = c.floor_of[i];
  const int room = c.room_of[i];
  return pressure_term(rates.facility(), total, population) +
         pressure_term(rates.floor(floor), floor_mates, c.floor_population[floor]) +
         pressure_term(rates.room(), room_mates, c.room_population[room]);
}

// Who is where at each step, precomputed once per facility so the
// simulators and the likelihood aggregate infection counts in O(N).
class ContactPlan {
 public:
  struct Occupant {
    int individual;
    int floor;
    int room;
    bool admitted;
    int screening;
  };
  struct Step {
    std::vector<Occupant> occupants;
    std::vector<int> floor_population;
    std::vector<int> room_population;
    int population = 0;
  };

  ContactPlan(const Layout& layout, const FacilityTraces& traces)
      : n_(traces.size()), horizon_(traces.horizon()), n_floors_(layout.n_floors),
        n_rooms_(layout.n_rooms()), static_(is_static(layout, traces)) {
    const auto problems = validate(layout, traces);
    if (!problems.empty()) {
      throw ValidationError("invalid facility traces: " + describe(problems.front()) +
                            (problems.size() > 1
                                 ? " (+" + std::to_string(problems.size() - 1) + " more)"
                                 : std::string()));
    }
    const int steps = static_ ? 1 : horizon_;
    steps_.resize(steps);
    for (int t = 0; t < steps; ++t) {
      Step& s = steps_[t];
      s.floor_population.assign(n_floors_, 0);
      s.room_population.assign(n_rooms_, 0);
      for (int i = 0; i < n_; ++i) {
        if (!traces.present(i, t)) {
          continue;
        }
        s.occupants.push_back({i, traces.floor(i, t), traces.room(i, t), traces.admitted_at(i, t),
                               traces.screening(i, t)});
        ++s.floor_population[traces.floor(i, t)];
        ++s.room_population[traces.room(i, t)];
        ++s.population;
      }
    }
  }

  int size() const { return n_; }
  int horizon() const { return horizon_; }
  int n_floors() const { return n_floors_; }
  int n_rooms() const { return n_rooms_; }
  const Step& step(int t) const { return steps_[static_ ? 0 : t]; }

 private:
  static bool is_static(const Layout& layout, const FacilityTraces& traces) {
    if (traces.indexing() != Indexing::locations || layout.n_locations() != traces.size()) {
      return false;
    }
    for (int t = 0; t < traces.horizon(); ++t) {
      for (int i = 0; i < traces.size(); ++i) {
        if (!traces.present(i, t) || traces.room(i, t) != layout.room_of[i]) {
          return false;
        }
      }
    }
    return true;
  }

  int n_, horizon_, n_floors_, n_rooms_;
  bool static_;
  std::vector<Step> steps_;
};

// Infected counts among the occupants of one step, using the previous
// step's states (newly infected patients act from the next step on).
class InfectionPressure {
 public:
  InfectionPressure(const ContactPlan::Step& step, std::span<const State> prev,
                    const RateVector& rates)
      : step_(step), rates_(rates), floor_infected_(step.floor_population.size(), 0),
        room_infected_(step.room_population.size(), 0) {
    for (const auto& o : step.occupants) {
      if (prev[o.individual] == State::infected) {
        ++total_infected_;
        ++floor_infected_[o.floor];
        ++room_infected_[o.room];
      }
    }
  }

  // Hazard for a susceptible occupant (who contributes no infected count).
  double hazard(int floor, int room) const {
    return pressure_term(rates_.facility(), total_infected_, step_.population) +
           pressure_term(rates_.floor(floor), floor_infected_[floor], step_.floor_population[floor]) +
           pressure_term(rates_.room(), room_infected_[room], step_.room_population[room]);
  }

  int total_infected() const { return total_infected_; }

 private:
  const ContactPlan::Step& step_;
  const RateVector& rates_;
  int total_infected_ = 0;
  std::vector<int> floor_infected_;
  std::vector<int> room_infected_;
};

inline void check_rate_dimension(const RateVector& rates, int n_floors) {
  if (rates.n_floors() != n_floors) {
    throw std::invalid_argument("rate vector has " + std::to_string(rates.size()) +
                                " components, facility needs " + std::to_string(n_floors + 2));
  }
}

struct PartialOutcome {
  EpidemicMatrix colonization;
  EpidemicMatrix observation;
};

namespace detail {

// Random turnover with every location occupied at every step. When
// `observed` is non-null the observation matrix is filled as well; the
// colonization path does not depend on it.
inline EpidemicMatrix simulate_turnover(const ContactPlan& plan, const SimParams& params,
                                        const RateVector& rates, EpidemicMatrix* observed) {
  params.check();
  check_rate_dimension(rates, plan.n_floors());
  const int n = plan.size();
  const int horizon = plan.horizon();
  const std::uint64_t seed = params.seed;
  EpidemicMatrix x(n, horizon, MatrixKind::colonization);
  for (int i = 0; i < n; ++i) {
    const bool inf = rng::cell_uniform(seed, 0, i, rng::Event::initial_state) < params.alpha;
    x.set(i, 0, inf ? State::infected : State::susceptible);
    if (observed) {
      observed->set(i, 0, x.at(i, 0));
    }
  }
  const double eta = params.eta.value_or(0.0);
  for (int t = 1; t < horizon; ++t) {
    const auto& step = plan.step(t);
    const InfectionPressure pressure(step, x.step(t - 1), rates);
    for (const auto& o : step.occupants) {
      const int i = o.individual;
      const auto ut = static_cast<std::uint32_t>(t);
      const auto ui = static_cast<std::uint32_t>(i);
      const bool discharged = rng::cell_uniform(seed, ut, ui, rng::Event::discharge) < params.gamma;
      State next;
      if (discharged) {
        next = rng::cell_uniform(seed, ut, ui, rng::Event::admission_state) < params.alpha
                   ? State::infected
                   : State::susceptible;
      } else if (x.at(i, t - 1) == State::susceptible) {
        const double p = -std::expm1(-pressure.hazard(o.floor, o.room));
        next = rng::cell_uniform(seed, ut, ui, rng::Event::infection) < p ? State::infected
                                                                           : State::susceptible;
      } else {
        next = State::infected;
      }
      x.set(i, t, next);
      if (observed) {
        State y;
        if (discharged) {
          y = next;
        } else if (next == State::infected && observed->at(i, t - 1) == State::susceptible) {
          y = rng::cell_uniform(seed, ut, ui, rng::Event::observation) < eta ? State::infected
                                                                             : State::susceptible;
        } else {
          y = observed->at(i, t - 1);
        }
        observed->set(i, t, y);
      }
    }
  }
  return x;
}

inline ContactPlan static_plan(const Layout& layout, int horizon) {
  if (layout.n_locations() == 0) {
    throw std::invalid_argument("layout has no fixed locations");
  }
  if (horizon < 1) {
    throw std::invalid_argument("horizon must be >= 1");
  }
  FacilityTraces traces(layout.n_locations(), horizon, Indexing::locations);
  for (int t = 0; t < horizon; ++t) {
    for (int i = 0; i < layout.n_locations(); ++i) {
      traces.place(i, t, layout.floor_of(i), layout.room_of[i]);
    }
  }
  return ContactPlan(layout, traces);
}

}  // namespace detail

// Full observation under random turnover (fixed locations, full occupancy).
inline EpidemicMatrix simulate_full(const ContactPlan& plan, const SimParams& params,
                                    const RateVector& rates) {
  return detail::simulate_turnover(plan, params, rates, nullptr);
}

inline EpidemicMatrix simulate_full(const Layout& layout, const SimParams& params,
                                    const RateVector& rates, int horizon) {
  return simulate_full(detail::static_plan(layout, horizon), params, rates);
}

// Partial observation: admissions are screened, and a colonized but
// unobserved patient becomes observed with probability eta each step.
inline PartialOutcome simulate_partial(const ContactPlan& plan, const SimParams& params,
                                       const RateVector& rates) {
  if (!params.eta) {
    throw std::invalid_argument("simulate_partial: observation probability eta is required");
  }
  EpidemicMatrix y(plan.size(), plan.horizon(), MatrixKind::observation);
  EpidemicMatrix x = detail::simulate_turnover(plan, params, rates, &y);
  return {std::move(x), std::move(y)};
}

inline PartialOutcome simulate_partial(const Layout& layout, const SimParams& params,
                                       const RateVector& rates, int horizon) {
  return simulate_partial(detail::static_plan(layout, horizon), params, rates);
}

// Trace-driven simulation: admission states are the screening results and
// only within-facility acquisition is random.
inline EpidemicMatrix simulate_trace(const ContactPlan& plan, const RateVector& rates,
                                     std::uint64_t seed) {
  check_rate_dimension(rates, plan.n_floors());
  const int n = plan.size();
  const int horizon = plan.horizon();
  EpidemicMatrix x(n, horizon, MatrixKind::colonization, State::absent);
  const std::vector<State> nobody(n, State::absent);
  for (int t = 0; t < horizon; ++t) {
    const auto& step = plan.step(t);
    const auto prev = t == 0 ? std::span<const State>(nobody) : x.step(t - 1);
    const InfectionPressure pressure(step, prev, rates);
    for (const auto& o : step.occupants) {
      const int i = o.individual;
      State next;
      if (o.admitted) {
        next = o.screening == 1 ? State::infected : State::susceptible;
      } else if (prev[i] == State::susceptible) {
        const double p = -std::expm1(-pressure.hazard(o.floor, o.room));
        next = rng::cell_uniform(seed, static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i),
                                 rng::Event::infection) < p
                   ? State::infected
                   : State::susceptible;
      } else {
        next = State::infected;
      }
      x.set(i, t, next);
    }
  }
  return x;
}

inline EpidemicMatrix simulate_trace(const Layout& layout, const FacilityTraces& traces,
                                     const RateVector& rates, std::uint64_t seed) {
  return simulate_trace(ContactPlan(layout, traces), rates, seed);
}

// `patient_id,week,state` with state in {0,1,NA}. Labels come from the
// traces when given, otherwise rows are numbered from 1.
inline void write_matrix_csv(const EpidemicMatrix& m, const std::string& path,
                             const FacilityTraces* traces = nullptr) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "patient_id,week,state\n";
  for (int i = 0; i < m.size(); ++i) {
    const long long id = traces ? traces->label(i) : i + 1;
    for (int t = 0; t < m.horizon(); ++t) {
      out << id << ',' << t + 1 << ',';
      switch (m.at(i, t)) {
        case State::absent: out << "NA"; break;
        case State::susceptible: out << '0'; break;
        case State::infected: out << '1'; break;
      }
      out << '\n';
    }
  }
}

inline EpidemicMatrix read_matrix_csv(const std::string& path,
                                      MatrixKind kind = MatrixKind::colonization) {
  const auto table = csv::read(path);
  const auto c_id = table.column("patient_id");
  const auto c_week = table.column("week");
  const auto c_state = table.column("state");
  std::map<long long, int> ids;
  int horizon = 0;
  for (const auto& row : table.rows) {
    ids.emplace(csv::parse_int(row[c_id], "patient_id"), 0);
    horizon = std::max(horizon, static_cast<int>(csv::parse_int(row[c_week], "week")));
  }
  int next = 0;
  for (auto& [id, index] : ids) {
    index = next++;
  }
  EpidemicMatrix m(static_cast<int>(ids.size()), horizon, kind, State::absent);
  for (const auto& row : table.rows) {
    const int i = ids.at(csv::parse_int(row[c_id], "patient_id"));
    const int t = static_cast<int>(csv::parse_int(row[c_week], "week")) - 1;
    if (t < 0) {
      throw std::runtime_error("matrix: weeks are 1-based");
    }
    const std::string& s = row[c_state];
    if (s == "NA") {
      continue;
    }
    const long long v = csv::parse_int(s, "state");
    if (v != 0 && v != 1) {
      throw std::runtime_error("matrix: state must be 0, 1 or NA, got '" + s + "'");
    }
    m.set(i, t, v == 1 ? State::infected : State::susceptible);
  }
  return m;
}

}  // namespace hai_sbi
