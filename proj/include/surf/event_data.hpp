#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace surf {

struct MarkedEvent {
  double t = 0.0;
  int k = 0;

  friend bool operator==(const MarkedEvent&, const MarkedEvent&) = default;
};

// Events on an observation window [0, window] with 0 < t_1 < ... < t_N <= window.
struct EventSequence {
  std::vector<MarkedEvent> events;
  double window = 0.0;

  std::size_t size() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }
  double last_time() const noexcept { return events.empty() ? 0.0 : events.back().t; }

  // tau_i = t_i - t_{i-1} with t_0 = 0.
  std::vector<double> inter_arrivals() const;
  double survival_gap() const noexcept { return window - last_time(); }

  friend bool operator==(const EventSequence&, const EventSequence&) = default;
};

enum class Split { all, train, val, test };

std::string to_string(Split s);

struct Dataset {
  std::vector<EventSequence> sequences;
  int num_types = 1;
  Split split = Split::all;
  // Stored times are raw times divided by t_scale (1 for raw data).
  double t_scale = 1.0;
  // Non-empty only in per-sequence scaling mode; overrides t_scale.
  std::vector<double> sequence_scales;

  std::size_t size() const noexcept { return sequences.size(); }
  std::size_t num_events() const noexcept;
  double scale_of(std::size_t seq_index) const;
};

// Throws ValidationError naming `index` if the invariants do not hold.
void validate(const EventSequence& seq, int num_types, std::size_t index);

// JSON-lines: optional header {"K": int}, then one {"events":[{"t","k"}...],"T"} per line.
Dataset parse_dataset(std::istream& in);
Dataset load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const Dataset& ds, bool header = true);
void save_dataset(const std::filesystem::path& path, const Dataset& ds, bool header = true);
std::string sequence_to_json(const EventSequence& seq);

inline constexpr double kScaleEpsilon = 1e-8;

enum class ScaleMode { global, per_sequence };

// Largest observation window plus epsilon; 1.0 when the dataset has no events.
double compute_t_scale(const Dataset& ds);

// Divides all times (and windows) by a scale computed on `ds` itself.
Dataset normalize(const Dataset& ds, ScaleMode mode = ScaleMode::global);
// Applies a frozen scale from another split (val/test use the train scale).
Dataset apply_scale(const Dataset& ds, double t_scale);
double denormalize(const Dataset& ds, double value, std::size_t seq_index = 0);

// Deterministic shuffle by seed, then partition by sequence.
std::array<Dataset, 3> split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed);

// Pools sequences from several datasets; num_types is the max over inputs.
Dataset concat(std::span<const Dataset> parts);

}  // namespace surf
