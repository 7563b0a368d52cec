#pragma once

// Pooled observation vectors: total cases I, cases per floor L_k, and rooms
// with several cases R, assembled as a T x (K+2) matrix rescaled to [0,1].

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "json.hpp"
#include "simulator.hpp"

namespace hai_sbi {

inline std::vector<int> infected_series(const EpidemicMatrix& x) {
  std::vector<int> out(x.horizon(), 0);
  for (int t = 0; t < x.horizon(); ++t) {
    for (State s : x.step(t)) {
      out[t] += s == State::infected ? 1 : 0;
    }
  }
  return out;
}

inline std::vector<std::vector<int>> floor_series(const EpidemicMatrix& x, const ContactPlan& plan) {
  std::vector<std::vector<int>> out(plan.n_floors(), std::vector<int>(x.horizon(), 0));
  for (int t = 0; t < x.horizon(); ++t) {
    for (const auto& o : plan.step(t).occupants) {
      out[o.floor][t] += x.infected(o.individual, t) ? 1 : 0;
    }
  }
  return out;
}

inline std::vector<std::vector<int>> floor_series(const EpidemicMatrix& x, const Layout& layout,
                                                  const FacilityTraces& traces) {
  return floor_series(x, ContactPlan(layout, traces));
}

inline std::vector<int> multi_room_series(const EpidemicMatrix& x, const ContactPlan& plan) {
  std::vector<int> out(x.horizon(), 0);
  std::vector<int> cases(plan.n_rooms(), 0);
  for (int t = 0; t < x.horizon(); ++t) {
    std::fill(cases.begin(), cases.end(), 0);
    for (const auto& o : plan.step(t).occupants) {
      cases[o.room] += x.infected(o.individual, t) ? 1 : 0;
    }
    for (int c : cases) {
      out[t] += c >= 2 ? 1 : 0;
    }
  }
  return out;
}

inline std::vector<int> multi_room_series(const EpidemicMatrix& x, const Layout& layout,
                                          const FacilityTraces& traces) {
  return multi_room_series(x, ContactPlan(layout, traces));
}

inline double scalar_summary(std::span<const double> series) {
  if (series.empty()) {
    throw std::invalid_argument("scalar_summary: empty series");
  }
  return std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(series.size());
}

// Divisors per column: maximum observed facility and floor populations and
// the number of rooms ever occupied.
struct ScaleMeta {
  std::vector<double> divisor;
  std::vector<bool> zero_divisor;
};

inline ScaleMeta summary_scales(const ContactPlan& plan) {
  const int k = plan.n_floors();
  ScaleMeta meta;
  meta.divisor.assign(k + 2, 0.0);
  std::vector<bool> used_room(plan.n_rooms(), false);
  for (int t = 0; t < plan.horizon(); ++t) {
    const auto& step = plan.step(t);
    meta.divisor[0] = std::max(meta.divisor[0], static_cast<double>(step.population));
    for (int f = 0; f < k; ++f) {
      meta.divisor[f + 1] = std::max(meta.divisor[f + 1], static_cast<double>(step.floor_population[f]));
    }
    for (const auto& o : step.occupants) {
      used_room[o.room] = true;
    }
  }
  meta.divisor[k + 1] = static_cast<double>(std::count(used_room.begin(), used_room.end(), true));
  for (double d : meta.divisor) {
    meta.zero_divisor.push_back(d == 0.0);
  }
  return meta;
}

class SummaryMatrix {
 public:
  SummaryMatrix() = default;
  SummaryMatrix(int horizon, ScaleMeta meta)
      : horizon_(horizon), meta_(std::move(meta)),
        raw_(static_cast<std::size_t>(horizon) * meta_.divisor.size(), 0.0) {}

  int horizon() const { return horizon_; }
  int columns() const { return static_cast<int>(meta_.divisor.size()); }
  int n_floors() const { return columns() - 2; }
  const ScaleMeta& scale_meta() const { return meta_; }

  double raw(int t, int c) const { return raw_[index(t, c)]; }
  void set_raw(int t, int c, double v) { raw_[index(t, c)] = v; }

  double value(int t, int c) const {
    return meta_.zero_divisor[c] ? 0.0 : raw(t, c) / meta_.divisor[c];
  }

  std::vector<double> column(int c) const {
    std::vector<double> out(horizon_);
    for (int t = 0; t < horizon_; ++t) {
      out[t] = value(t, c);
    }
    return out;
  }

  // Column-major flattening of the chosen columns (all when empty).
  std::vector<double> flatten(const std::vector<int>& cols = {}) const {
    std::vector<double> out;
    if (cols.empty()) {
      for (int c = 0; c < columns(); ++c) {
        const auto col = column(c);
        out.insert(out.end(), col.begin(), col.end());
      }
    } else {
      for (int c : cols) {
        const auto col = column(c);
        out.insert(out.end(), col.begin(), col.end());
      }
    }
    return out;
  }

  bool operator==(const SummaryMatrix& o) const {
    return horizon_ == o.horizon_ && meta_.divisor == o.meta_.divisor && raw_ == o.raw_;
  }

 private:
  std::size_t index(int t, int c) const {
    if (t < 0 || t >= horizon_ || c < 0 || c >= columns()) {
      throw std::out_of_range("SummaryMatrix: (" + std::to_string(t) + ", " +
                              std::to_string(c) + ") out of range");
    }
    return static_cast<std::size_t>(t) * columns() + c;
  }

  int horizon_ = 0;
  ScaleMeta meta_;
  std::vector<double> raw_;
};

inline SummaryMatrix summary_matrix(const EpidemicMatrix& x, const ContactPlan& plan,
                                    const ScaleMeta& meta) {
  if (x.size() != plan.size() || x.horizon() > plan.horizon()) {
    throw std::invalid_argument("summary_matrix: matrix does not match facility");
  }
  const int k = plan.n_floors();
  SummaryMatrix out(x.horizon(), meta);
  const auto total = infected_series(x);
  const auto floors = floor_series(x, plan);
  const auto rooms = multi_room_series(x, plan);
  for (int t = 0; t < x.horizon(); ++t) {
    out.set_raw(t, 0, total[t]);
    for (int f = 0; f < k; ++f) {
      out.set_raw(t, f + 1, floors[f][t]);
    }
    out.set_raw(t, k + 1, rooms[t]);
  }
  return out;
}

inline SummaryMatrix summary_matrix(const EpidemicMatrix& x, const ContactPlan& plan) {
  return summary_matrix(x, plan, summary_scales(plan));
}

inline SummaryMatrix summary_matrix(const EpidemicMatrix& x, const Layout& layout,
                                    const FacilityTraces& traces) {
  return summary_matrix(x, ContactPlan(layout, traces));
}

// Recovers integer counts from rescaled values.
inline double unscale(double value, double divisor) { return std::round(value * divisor); }

// `t,I,L1..LK,Rm` with rescaled values, plus `<path>.json` holding divisors.
inline void write_summary_csv(const SummaryMatrix& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "t,I";
  for (int f = 1; f <= s.n_floors(); ++f) {
    out << ",L" << f;
  }
  out << ",Rm\n";
  for (int t = 0; t < s.horizon(); ++t) {
    out << t + 1;
    for (int c = 0; c < s.columns(); ++c) {
      out << ',' << csv::format_double(s.value(t, c));
    }
    out << '\n';
  }
  nlohmann::json meta;
  meta["divisor"] = s.scale_meta().divisor;
  meta["zero_divisor"] = s.scale_meta().zero_divisor;
  std::ofstream side(path + ".json");
  side << meta.dump(2) << '\n';
}

inline SummaryMatrix read_summary_csv(const std::string& path) {
  const auto table = csv::read(path);
  std::ifstream side(path + ".json");
  if (!side) {
    throw std::runtime_error("summary: missing scale sidecar '" + path + ".json'");
  }
  const auto meta_json = nlohmann::json::parse(side);
  ScaleMeta meta;
  meta.divisor = meta_json.at("divisor").get<std::vector<double>>();
  meta.zero_divisor = meta_json.at("zero_divisor").get<std::vector<bool>>();
  if (table.header.size() != meta.divisor.size() + 1) {
    throw std::runtime_error("summary: column count does not match sidecar");
  }
  SummaryMatrix s(static_cast<int>(table.rows.size()), meta);
  for (int t = 0; t < s.horizon(); ++t) {
    for (int c = 0; c < s.columns(); ++c) {
      const double v = csv::parse_double(table.rows[t][c + 1], table.header[c + 1]);
      s.set_raw(t, c, meta.zero_divisor[c] ? 0.0 : unscale(v, meta.divisor[c]));
    }
  }
  return s;
}

}  // namespace hai_sbi
