#pragma once

// Facility geometry, patient traces, and per-step contact structure.
//
// Steps and indices are 0-based in the API. Files use 1-based weeks and the
// original patient/room/floor labels.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "rng.hpp"

namespace hai_sbi {

inline constexpr int kNone = -1;

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Floors 0..K-1 and rooms 0..R-1. `room_of` is populated only for static
// facilities whose individuals are fixed locations (beds).
struct Layout {
  int n_floors = 0;
  std::vector<int> floor_of_room;
  std::vector<long long> room_label;  // external room id, for files
  std::vector<int> room_of;           // location -> room (static facilities)
  int max_room_occupancy = 0;         // 0 = unlimited

  int n_rooms() const { return static_cast<int>(floor_of_room.size()); }
  int n_locations() const { return static_cast<int>(room_of.size()); }
  int floor_of(int location) const { return floor_of_room.at(room_of.at(location)); }

  int room_index(long long label) const {
    const auto it = std::find(room_label.begin(), room_label.end(), label);
    return it == room_label.end() ? kNone : static_cast<int>(it - room_label.begin());
  }
};

// Whether row i is a fixed location (random-turnover models) or a patient
// (trace-driven model).
enum class Indexing { locations, patients };

// N x T presence/floor/room/screening records, stored step-major.
class FacilityTraces {
 public:
  FacilityTraces() = default;
  FacilityTraces(int n, int horizon, Indexing indexing)
      : n_(n),
        horizon_(horizon),
        indexing_(indexing),
        floor_(static_cast<std::size_t>(n) * horizon, kNone),
        room_(static_cast<std::size_t>(n) * horizon, kNone),
        screen_(static_cast<std::size_t>(n) * horizon, kNone),
        label_(n) {
    for (int i = 0; i < n; ++i) {
      label_[i] = i + 1;
    }
  }

  int size() const { return n_; }
  int horizon() const { return horizon_; }
  Indexing indexing() const { return indexing_; }

  bool present(int i, int t) const { return room_[at(i, t)] != kNone; }
  int floor(int i, int t) const { return floor_[at(i, t)]; }
  int room(int i, int t) const { return room_[at(i, t)]; }
  int screening(int i, int t) const { return screen_[at(i, t)]; }
  bool admitted_at(int i, int t) const {
    return present(i, t) && (t == 0 || !present(i, t - 1));
  }

  void place(int i, int t, int floor, int room) {
    floor_[at(i, t)] = floor;
    room_[at(i, t)] = room;
  }
  void set_floor(int i, int t, int floor) { floor_[at(i, t)] = floor; }
  void set_screening(int i, int t, int value) { screen_[at(i, t)] = value; }

  long long label(int i) const { return label_.at(i); }
  void set_label(int i, long long id) { label_.at(i) = id; }

  int population(int t) const {
    int count = 0;
    for (int i = 0; i < n_; ++i) {
      count += present(i, t) ? 1 : 0;
    }
    return count;
  }

  bool operator==(const FacilityTraces&) const = default;

 private:
  std::size_t at(int i, int t) const {
    if (i < 0 || i >= n_ || t < 0 || t >= horizon_) {
      throw std::out_of_range("traces: index (" + std::to_string(i) + ", " +
                              std::to_string(t) + ") out of range");
    }
    return static_cast<std::size_t>(t) * n_ + i;
  }

  int n_ = 0;
  int horizon_ = 0;
  Indexing indexing_ = Indexing::patients;
  std::vector<int> floor_;
  std::vector<int> room_;
  std::vector<int> screen_;
  std::vector<long long> label_;
};

struct Facility {
  Layout layout;
  FacilityTraces traces;
};

// Dense contact structure at one step.
struct ContactMatrices {
  int n = 0;
  std::vector<std::uint8_t> present;
  std::vector<int> floor_of;  // kNone when absent
  std::vector<int> room_of;
  std::vector<std::uint8_t> same_floor;  // n x n row-major
  std::vector<std::uint8_t> same_room;
  std::vector<int> floor_population;
  std::vector<int> room_population;

  bool floor_contact(int i, int j) const { return same_floor[static_cast<std::size_t>(i) * n + j] != 0; }
  bool room_contact(int i, int j) const { return same_room[static_cast<std::size_t>(i) * n + j] != 0; }
};

struct Violation {
  std::string kind;
  int individual = kNone;
  int step = kNone;
  std::string message;
};

inline std::string describe(const Violation& v) {
  std::string out = v.kind;
  if (v.individual != kNone) {
    out += " individual=" + std::to_string(v.individual);
  }
  if (v.step != kNone) {
    out += " step=" + std::to_string(v.step);
  }
  return out + ": " + v.message;
}

inline void check_room_floor(const Layout& layout, const FacilityTraces& traces, int i, int t) {
  const int room = traces.room(i, t);
  const int floor = traces.floor(i, t);
  if (room < 0 || room >= layout.n_rooms()) {
    throw ValidationError("patient " + std::to_string(traces.label(i)) + " at step " +
                          std::to_string(t) + ": unknown room index " + std::to_string(room));
  }
  if (floor != layout.floor_of_room[room]) {
    throw ValidationError("patient " + std::to_string(traces.label(i)) + " at step " +
                          std::to_string(t) + ": room " + std::to_string(layout.room_label[room]) +
                          " is on floor " + std::to_string(layout.floor_of_room[room] + 1) +
                          ", trace says floor " + std::to_string(floor + 1));
  }
}

inline ContactMatrices contact_matrices(const Layout& layout, const FacilityTraces& traces,
                                        int t) {
  if (t < 0 || t >= traces.horizon()) {
    throw std::out_of_range("contact_matrices: step " + std::to_string(t) + " outside horizon");
  }
  const int n = traces.size();
  ContactMatrices c;
  c.n = n;
  c.same_floor.assign(static_cast<std::size_t>(n) * n, 0);
  c.same_room.assign(static_cast<std::size_t>(n) * n, 0);
  c.floor_population.assign(layout.n_floors, 0);
  c.room_population.assign(layout.n_rooms(), 0);
  c.present.assign(n, 0);
  c.floor_of.assign(n, kNone);
  c.room_of.assign(n, kNone);
  for (int i = 0; i < n; ++i) {
    if (!traces.present(i, t)) {
      continue;
    }
    check_room_floor(layout, traces, i, t);
    c.present[i] = 1;
    c.floor_of[i] = traces.floor(i, t);
    c.room_of[i] = traces.room(i, t);
    ++c.floor_population[traces.floor(i, t)];
    ++c.room_population[traces.room(i, t)];
  }
  for (int i = 0; i < n; ++i) {
    if (!traces.present(i, t)) {
      continue;
    }
    for (int j = i + 1; j < n; ++j) {
      if (!traces.present(j, t)) {
        continue;
      }
      if (traces.floor(i, t) == traces.floor(j, t)) {
        c.same_floor[static_cast<std::size_t>(i) * n + j] = 1;
        c.same_floor[static_cast<std::size_t>(j) * n + i] = 1;
        if (traces.room(i, t) == traces.room(j, t)) {
          c.same_room[static_cast<std::size_t>(i) * n + j] = 1;
          c.same_room[static_cast<std::size_t>(j) * n + i] = 1;
        }
      }
    }
  }
  return c;
}

inline std::vector<Violation> validate(const Layout& layout, const FacilityTraces& traces) {
  std::vector<Violation> out;
  auto add = [&out](std::string kind, int i, int t, std::string msg) {
    out.push_back({std::move(kind), i, t, std::move(msg)});
  };

  if (layout.n_floors < 1) {
    add("layout", kNone, kNone, "facility needs at least one floor");
  }
  if (layout.room_label.size() != layout.floor_of_room.size()) {
    add("layout", kNone, kNone, "room labels and room floors differ in length");
  }
  std::vector<int> rooms_per_floor(std::max(layout.n_floors, 0), 0);
  for (int r = 0; r < layout.n_rooms(); ++r) {
    const int f = layout.floor_of_room[r];
    if (f < 0 || f >= layout.n_floors) {
      add("layout", kNone, kNone, "room " + std::to_string(r) + " has invalid floor");
    } else {
      ++rooms_per_floor[f];
    }
  }
  for (int f = 0; f < layout.n_floors; ++f) {
    if (rooms_per_floor[f] == 0) {
      add("layout", kNone, kNone, "floor " + std::to_string(f + 1) + " has no rooms");
    }
  }
  if (layout.n_locations() > 0) {
    std::vector<int> beds(layout.n_rooms(), 0);
    for (int i = 0; i < layout.n_locations(); ++i) {
      const int r = layout.room_of[i];
      if (r < 0 || r >= layout.n_rooms()) {
        add("layout", i, kNone, "location has invalid room");
      } else {
        ++beds[r];
      }
    }
    for (int r = 0; r < layout.n_rooms(); ++r) {
      if (beds[r] == 0) {
        add("layout", kNone, kNone, "room " + std::to_string(r) + " has no locations");
      }
    }
  }

  const int n = traces.size();
  const int horizon = traces.horizon();
  std::vector<int> occupancy(layout.n_rooms(), 0);
  for (int t = 0; t < horizon; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), 0);
    for (int i = 0; i < n; ++i) {
      const bool here = traces.present(i, t);
      const int room = traces.room(i, t);
      const int floor = traces.floor(i, t);
      if (!here) {
        if (floor != kNone) {
          add("floor_without_presence", i, t, "floor defined while absent");
        }
        if (traces.screening(i, t) != kNone) {
          add("screening_without_presence", i, t, "screening defined while absent");
        }
        continue;
      }
      if (room < 0 || room >= layout.n_rooms()) {
        add("room_range", i, t, "room index " + std::to_string(room) + " not in layout");
        continue;
      }
      ++occupancy[room];
      if (floor == kNone) {
        add("floor_missing", i, t, "present without floor");
      } else if (floor != layout.floor_of_room[room]) {
        add("room_floor_mismatch", i, t,
            "room " + std::to_string(layout.room_label[room]) + " is on floor " +
                std::to_string(layout.floor_of_room[room] + 1) + ", trace says " +
                std::to_string(floor + 1));
      }
      const int screen = traces.screening(i, t);
      if (traces.indexing() == Indexing::locations) {
        if (screen != kNone) {
          add("screening_unexpected", i, t, "location-indexed traces carry no screening");
        }
      } else if (traces.admitted_at(i, t)) {
        if (screen != 0 && screen != 1) {
          add("screening_missing", i, t, "admission step without a 0/1 screening result");
        }
      } else if (screen != kNone) {
        add("screening_not_admission", i, t, "screening defined at a non-admission step");
      }
    }
    if (layout.max_room_occupancy > 0) {
      for (int r = 0; r < layout.n_rooms(); ++r) {
        if (occupancy[r] > layout.max_room_occupancy) {
          add("room_capacity", kNone, t,
              "room " + std::to_string(layout.room_label[r]) + " holds " +
                  std::to_string(occupancy[r]) + " > " +
                  std::to_string(layout.max_room_occupancy));
        }
      }
    }
  }
  return out;
}

// Full-occupancy facility: every location present at every step, rooms
// filled sequentially floor by floor.
inline Facility static_layout(int n_floors, int locations_per_floor, int beds_per_room,
                              int horizon = 1) {
  if (n_floors < 1 || locations_per_floor < 1 || beds_per_room < 1 || horizon < 1) {
    throw std::invalid_argument("static_layout: counts must be >= 1");
  }
  if (locations_per_floor % beds_per_room != 0) {
    throw std::invalid_argument("static_layout: locations_per_floor (" +
                                std::to_string(locations_per_floor) +
                                ") not divisible by beds_per_room (" +
                                std::to_string(beds_per_room) + ")");
  }
  const int rooms_per_floor = locations_per_floor / beds_per_room;
  Facility out;
  Layout& layout = out.layout;
  layout.n_floors = n_floors;
  layout.max_room_occupancy = beds_per_room;
  for (int f = 0; f < n_floors; ++f) {
    for (int r = 0; r < rooms_per_floor; ++r) {
      layout.floor_of_room.push_back(f);
      layout.room_label.push_back(static_cast<long long>(layout.room_label.size()) + 1);
    }
  }
  const int n = n_floors * locations_per_floor;
  layout.room_of.resize(n);
  for (int i = 0; i < n; ++i) {
    layout.room_of[i] = i / beds_per_room;
  }
  out.traces = FacilityTraces(n, horizon, Indexing::locations);
  for (int t = 0; t < horizon; ++t) {
    for (int i = 0; i < n; ++i) {
      out.traces.place(i, t, layout.floor_of(i), layout.room_of[i]);
    }
  }
  return out;
}

// Rooms split as evenly as possible across floors (lower floors take the
// remainder), each with `beds_per_room` beds.
inline Layout room_layout(int n_floors, int n_rooms, int beds_per_room) {
  if (n_floors < 1 || n_rooms < n_floors || beds_per_room < 1) {
    throw std::invalid_argument("room_layout: need n_rooms >= n_floors >= 1 and beds >= 1");
  }
  Layout layout;
  layout.n_floors = n_floors;
  layout.max_room_occupancy = beds_per_room;
  for (int f = 0; f < n_floors; ++f) {
    const int count = n_rooms / n_floors + (f < n_rooms % n_floors ? 1 : 0);
    for (int r = 0; r < count; ++r) {
      layout.floor_of_room.push_back(f);
      layout.room_label.push_back(static_cast<long long>(layout.room_label.size()) + 1);
    }
  }
  return layout;
}

struct SynthConfig {
  int horizon = 53;
  double initial_occupancy = 0.6;  // fraction of beds filled at step 0
  double admission_rate = 0.27;    // per empty bed per step
  double mean_stay = 5.0;          // steps; <= 0 means nobody leaves
  double screen_positive_rate = 0.3;
  double transfer_rate = 0.03;     // per patient per step, to a free bed
  std::uint64_t seed = 1;
};

// Synthetic patient traces with the trace-file schema. Stays are geometric
// with the given mean (minimum one step); an empty bed admits a new patient
// with probability `admission_rate` each step; transfers are continuations
// of the same stay and are not re-screened.
inline FacilityTraces synth_traces(const Layout& layout, const SynthConfig& cfg) {
  auto unit = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument(std::string("synth_traces: ") + name + " must be in [0,1]");
    }
  };
  unit(cfg.initial_occupancy, "initial_occupancy");
  unit(cfg.admission_rate, "admission_rate");
  unit(cfg.screen_positive_rate, "screen_positive_rate");
  unit(cfg.transfer_rate, "transfer_rate");
  if (cfg.horizon < 1 || layout.max_room_occupancy < 1 || layout.n_rooms() < 1) {
    throw std::invalid_argument("synth_traces: need horizon >= 1 and bounded room capacity");
  }
  const double leave = cfg.mean_stay > 0.0 ? std::min(1.0, 1.0 / cfg.mean_stay) : 0.0;

  rng::Stream stream(cfg.seed, 0x7124CE5);
  struct Bed {
    int room;
    int patient = kNone;
  };
  std::vector<Bed> beds;
  for (int r = 0; r < layout.n_rooms(); ++r) {
    for (int b = 0; b < layout.max_room_occupancy; ++b) {
      beds.push_back({r});
    }
  }

  struct Record {
    int t, room, screen;
  };
  std::vector<std::vector<Record>> patients;
  auto admit = [&](Bed& bed, int t) {
    bed.patient = static_cast<int>(patients.size());
    patients.push_back({{t, bed.room, stream.bernoulli(cfg.screen_positive_rate) ? 1 : 0}});
  };

  for (auto& bed : beds) {
    if (stream.bernoulli(cfg.initial_occupancy)) {
      admit(bed, 0);
    }
  }
  for (int t = 1; t < cfg.horizon; ++t) {
    for (auto& bed : beds) {
      if (bed.patient != kNone && stream.bernoulli(leave)) {
        bed.patient = kNone;
      }
    }
    for (auto& bed : beds) {
      if (bed.patient == kNone || !stream.bernoulli(cfg.transfer_rate)) {
        continue;
      }
      std::vector<std::size_t> free;
      for (std::size_t b = 0; b < beds.size(); ++b) {
        if (beds[b].patient == kNone && beds[b].room != bed.room) {
          free.push_back(b);
        }
      }
      if (!free.empty()) {
        auto& target = beds[free[stream() % free.size()]];
        target.patient = bed.patient;
        bed.patient = kNone;
      }
    }
    for (auto& bed : beds) {
      if (bed.patient == kNone) {
        if (stream.bernoulli(cfg.admission_rate)) {
          admit(bed, t);
        }
      } else {
        patients[bed.patient].push_back({t, bed.room, kNone});
      }
    }
  }

  FacilityTraces traces(static_cast<int>(patients.size()), cfg.horizon, Indexing::patients);
  for (int i = 0; i < traces.size(); ++i) {
    for (const auto& rec : patients[i]) {
      traces.place(i, rec.t, layout.floor_of_room[rec.room], rec.room);
      if (rec.screen != kNone) {
        traces.set_screening(i, rec.t, rec.screen);
      }
    }
  }
  return traces;
}

// --- files ----------------------------------------------------------------

inline Layout read_layout_csv(const std::string& path) {
  const auto table = csv::read(path);
  const auto c_room = table.column("room");
  const auto c_floor = table.column("floor");
  Layout layout;
  std::map<long long, int> seen;
  for (const auto& row : table.rows) {
    const long long room = csv::parse_int(row[c_room], "room");
    const long long floor = csv::parse_int(row[c_floor], "floor");
    if (floor < 1) {
      throw std::runtime_error("layout: floor ids are 1-based, got " + row[c_floor]);
    }
    if (seen.count(room) != 0) {
      throw std::runtime_error("layout: duplicate room " + row[c_room]);
    }
    seen[room] = layout.n_rooms();
    layout.room_label.push_back(room);
    layout.floor_of_room.push_back(static_cast<int>(floor - 1));
    layout.n_floors = std::max(layout.n_floors, static_cast<int>(floor));
  }
  return layout;
}

inline void write_layout_csv(const Layout& layout, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "room,floor\n";
  for (int r = 0; r < layout.n_rooms(); ++r) {
    out << layout.room_label[r] << ',' << layout.floor_of_room[r] + 1 << '\n';
  }
}

// Reads `patient_id,week,floor,room,screen_result`. Rooms must exist in the
// layout; floor consistency is left to validate().
inline FacilityTraces read_traces_csv(const std::string& path, const Layout& layout) {
  const auto table = csv::read(path);
  const auto c_id = table.column("patient_id");
  const auto c_week = table.column("week");
  const auto c_floor = table.column("floor");
  const auto c_room = table.column("room");
  const auto c_screen = table.column("screen_result");
  std::map<long long, int> ids;
  int horizon = 0;
  for (const auto& row : table.rows) {
    ids.emplace(csv::parse_int(row[c_id], "patient_id"), 0);
    const long long week = csv::parse_int(row[c_week], "week");
    if (week < 1) {
      throw std::runtime_error("traces: weeks are 1-based, got " + row[c_week]);
    }
    horizon = std::max(horizon, static_cast<int>(week));
  }
  if (ids.empty()) {
    throw std::runtime_error("traces: no rows in '" + path + "'");
  }
  int next = 0;
  for (auto& [id, index] : ids) {
    index = next++;
  }
  FacilityTraces traces(static_cast<int>(ids.size()), horizon, Indexing::patients);
  for (const auto& [id, index] : ids) {
    traces.set_label(index, id);
  }
  for (const auto& row : table.rows) {
    const int i = ids.at(csv::parse_int(row[c_id], "patient_id"));
    const int t = static_cast<int>(csv::parse_int(row[c_week], "week")) - 1;
    if (traces.present(i, t)) {
      throw std::runtime_error("traces: duplicate row for patient " + row[c_id] + " week " +
                               row[c_week]);
    }
    const int room = layout.room_index(csv::parse_int(row[c_room], "room"));
    if (room == kNone) {
      throw std::runtime_error("traces: room " + row[c_room] + " not in layout");
    }
    traces.place(i, t, static_cast<int>(csv::parse_int(row[c_floor], "floor")) - 1, room);
    if (row[c_screen] != "NA") {
      traces.set_screening(i, t, static_cast<int>(csv::parse_int(row[c_screen], "screen_result")));
    }
  }
  return traces;
}

inline void write_traces_csv(const Layout& layout, const FacilityTraces& traces,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "patient_id,week,floor,room,screen_result\n";
  for (int i = 0; i < traces.size(); ++i) {
    for (int t = 0; t < traces.horizon(); ++t) {
      if (!traces.present(i, t)) {
        continue;
      }
      out << traces.label(i) << ',' << t + 1 << ',' << traces.floor(i, t) + 1 << ','
          << layout.room_label.at(traces.room(i, t)) << ',';
      const int s = traces.screening(i, t);
      if (s == kNone) {
        out << "NA";
      } else {
        out << s;
      }
      out << '\n';
    }
  }
}

}  // namespace hai_sbi
