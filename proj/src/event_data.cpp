#include "surf/event_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "surf/errors.hpp"

namespace surf {

using nlohmann::json;

namespace {
constexpr const char* kModule = "event_data";
}

std::vector<double> EventSequence::inter_arrivals() const {
  std::vector<double> tau(events.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    tau[i] = events[i].t - prev;
    prev = events[i].t;
  }
  return tau;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::all: break;
  }
  return "all";
}

std::size_t Dataset::num_events() const noexcept {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

double Dataset::scale_of(std::size_t seq_index) const {
  if (sequence_scales.empty()) return t_scale;
  return sequence_scales.at(seq_index);
}

void validate(const EventSequence& seq, int num_types, std::size_t index) {
  auto fail = [&](const std::string& msg) {
    throw ValidationError(kModule, "sequence " + std::to_string(index) + ": " + msg);
  };
  if (!std::isfinite(seq.window) || seq.window < 0.0) fail("window T must be finite and nonnegative");
  double prev = 0.0;
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    const auto& e = seq.events[i];
    if (!std::isfinite(e.t)) fail("event " + std::to_string(i) + " has non-finite time");
    if (e.t <= prev) fail("times not strictly increasing at event " + std::to_string(i));
    if (e.k < 0 || e.k >= num_types)
      fail("mark " + std::to_string(e.k) + " outside [0, " + std::to_string(num_types) + ")");
    prev = e.t;
  }
  if (prev > seq.window) fail("last event after window T");
}

Dataset parse_dataset(std::istream& in) {
  Dataset ds;
  int declared_k = -1;
  int max_mark = -1;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(kModule, e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError(kModule, "expected a JSON object", lineno);
    if (!j.contains("events")) {
      if (j.contains("K") && ds.sequences.empty() && declared_k < 0) {
        if (!j["K"].is_number_integer() || j["K"].get<int>() < 1)
          throw ParseError(kModule, "header K must be a positive integer", lineno);
        declared_k = j["K"].get<int>();
        continue;
      }
      throw ParseError(kModule, "missing \"events\"", lineno);
    }
    if (!j.contains("T") || !j["T"].is_number()) throw ParseError(kModule, "missing numeric \"T\"", lineno);
    if (!j["events"].is_array()) throw ParseError(kModule, "\"events\" must be an array", lineno);
    EventSequence seq;
    seq.window = j["T"].get<double>();
    seq.events.reserve(j["events"].size());
    for (const auto& e : j["events"]) {
      if (!e.is_object() || !e.contains("t") || !e["t"].is_number() || !e.contains("k") ||
          !e["k"].is_number_integer())
        throw ParseError(kModule, "event needs numeric \"t\" and integer \"k\"", lineno);
      seq.events.push_back({e["t"].get<double>(), e["k"].get<int>()});
      max_mark = std::max(max_mark, seq.events.back().k);
    }
    ds.sequences.push_back(std::move(seq));
  }
  ds.num_types = declared_k > 0 ? declared_k : std::max(1, max_mark + 1);
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) validate(ds.sequences[i], ds.num_types, i);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(kModule, "cannot open " + path.string());
  return parse_dataset(in);
}

std::string sequence_to_json(const EventSequence& seq) {
  json events = json::array();
  for (const auto& e : seq.events) events.push_back({{"t", e.t}, {"k", e.k}});
  json j = {{"events", std::move(events)}, {"T", seq.window}};
  return j.dump();
}

void write_dataset(std::ostream& out, const Dataset& ds, bool header) {
  if (header) out << json{{"K", ds.num_types}}.dump() << '\n';
  for (const auto& s : ds.sequences) out << sequence_to_json(s) << '\n';
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds, bool header) {
  std::ofstream out(path);
  if (!out) throw Error(kModule, "cannot write " + path.string());
  write_dataset(out, ds, header);
}

double compute_t_scale(const Dataset& ds) {
  if (ds.num_events() == 0) return 1.0;
  double m = 0.0;
  for (const auto& s : ds.sequences) m = std::max({m, s.window, s.last_time()});
  return m + kScaleEpsilon;
}

namespace {

EventSequence scaled(const EventSequence& s, double scale) {
  EventSequence out = s;
  for (auto& e : out.events) e.t /= scale;
  out.window /= scale;
  return out;
}

}  // namespace

Dataset normalize(const Dataset& ds, ScaleMode mode) {
  if (ds.sequences.empty()) throw ValidationError(kModule, "normalize: empty dataset");
  if (mode == ScaleMode::global) return apply_scale(ds, compute_t_scale(ds));

  Dataset out = ds;
  out.sequence_scales.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.sequences[i];
    double scale = s.empty() ? 1.0 : std::max(s.window, s.last_time()) + kScaleEpsilon;
    out.sequences[i] = scaled(s, scale);
    out.sequence_scales[i] = ds.scale_of(i) * scale;
  }
  return out;
}

Dataset apply_scale(const Dataset& ds, double t_scale) {
  if (!(t_scale > 0.0) || !std::isfinite(t_scale)) throw ValidationError(kModule, "t_scale must be positive");
  Dataset out = ds;
  for (auto& s : out.sequences) s = scaled(s, t_scale);
  out.t_scale = ds.t_scale * t_scale;
  for (auto& sc : out.sequence_scales) sc *= t_scale;
  return out;
}

double denormalize(const Dataset& ds, double value, std::size_t seq_index) {
  return value * ds.scale_of(seq_index);
}

std::array<Dataset, 3> split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions)
    if (!(f > 0.0)) throw ValidationError(kModule, "split fractions must be positive");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ValidationError(kModule, "split fractions must sum to 1");
  const std::size_t n = ds.size();
  if (n < 3) throw ValidationError(kModule, "split needs at least 3 sequences");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto count = [n](double f) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(f * static_cast<double>(n))), 1, n);
  };
  std::size_t n_train = std::min(count(fractions[0]), n - 2);
  std::size_t n_val = std::min(count(fractions[1]), n - n_train - 1);

  std::array<Dataset, 3> parts;
  const Split tags[3] = {Split::train, Split::val, Split::test};
  for (int p = 0; p < 3; ++p) {
    parts[p].num_types = ds.num_types;
    parts[p].t_scale = ds.t_scale;
    parts[p].split = tags[p];
  }
  for (std::size_t i = 0; i < n; ++i) {
    int p = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    parts[p].sequences.push_back(ds.sequences[order[i]]);
    if (!ds.sequence_scales.empty()) parts[p].sequence_scales.push_back(ds.sequence_scales[order[i]]);
  }
  return parts;
}

Dataset concat(std::span<const Dataset> parts) {
  Dataset out;
  if (parts.empty()) return out;
  out.split = parts.front().split;
  out.t_scale = parts.front().t_scale;
  for (const auto& p : parts) {
    if (p.t_scale != out.t_scale) throw ValidationError(kModule, "concat: datasets have different time scales");
    out.num_types = std::max(out.num_types, p.num_types);
    out.sequences.insert(out.sequences.end(), p.sequences.begin(), p.sequences.end());
  }
  return out;
}

}  // namespace surf
