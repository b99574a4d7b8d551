#include "surf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "surf/errors.hpp"
#include "surf/parallel.hpp"

namespace surf {
namespace {

constexpr const char* kModule = "synthetic";
constexpr double kPhaseDepth = 0.8;

// integral over [0, t] of ((1 + cos(w s)) / 2)^3 = integral of cos^6(w s / 2).
double cos6_integral(double t, double period) {
  const double w = 2.0 * std::numbers::pi / period;
  const double u = 0.5 * w * t;
  return (2.0 / w) * (10.0 * u + 7.5 * std::sin(2.0 * u) + 1.5 * std::sin(4.0 * u) + std::sin(6.0 * u) / 6.0) / 32.0;
}

double oscillatory_rate(const SyntheticSpec& s, double t) {
  const double c = 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * t / s.period));
  return s.base + (s.peak - s.base) * c * c * c;
}

double oscillatory_cumulative(const SyntheticSpec& s, double t) {
  return s.base * t + (s.peak - s.base) * cos6_integral(t, s.period);
}

double ramp_cumulative(const SyntheticSpec& s, double dt) { return s.ramp_a * dt + 0.5 * s.ramp_b * dt * dt; }

// Excitation sum_j alpha * exp(-beta (t - t_j)) over events strictly before t.
double hawkes_excitation(const SyntheticSpec& s, std::span<const MarkedEvent> history, double t) {
  double e = 0.0;
  for (const auto& ev : history)
    if (ev.t < t) e += s.alpha * std::exp(-s.beta * (t - ev.t));
  return e;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(kModule, what);
}

// Interval hazard from the last event under the true process.
class TrueHazard final : public IntervalHazard {
 public:
  TrueHazard(const SyntheticSpec& s, double t_last, double excitation)
      : s_(s), t0_(t_last), exc_(excitation), z0_(s.kind == SyntheticKind::oscillatory ? oscillatory_cumulative(s, t_last) : 0.0) {}

  double cumulative(double dt) const override {
    if (dt < 0.0) throw ValidationError(kModule, "negative interval length");
    switch (s_.kind) {
      case SyntheticKind::homogeneous: return s_.rate * dt;
      case SyntheticKind::oscillatory: return oscillatory_cumulative(s_, t0_ + dt) - z0_;
      case SyntheticKind::hawkes: return s_.mu * dt - exc_ * std::expm1(-s_.beta * dt) / s_.beta;
      case SyntheticKind::ramp: return ramp_cumulative(s_, dt);
    }
    return 0.0;
  }
  double intensity(double dt) const override {
    if (dt < 0.0) throw ValidationError(kModule, "negative interval length");
    switch (s_.kind) {
      case SyntheticKind::homogeneous: return s_.rate;
      case SyntheticKind::oscillatory: return oscillatory_rate(s_, t0_ + dt);
      case SyntheticKind::hawkes: return s_.mu + exc_ * std::exp(-s_.beta * dt);
      case SyntheticKind::ramp: return s_.ramp_a + s_.ramp_b * dt;
    }
    return 0.0;
  }
  double floor() const override {
    switch (s_.kind) {
      case SyntheticKind::homogeneous: return s_.rate;
      case SyntheticKind::oscillatory: return std::min(s_.base, s_.peak);
      case SyntheticKind::hawkes: return s_.mu;
      case SyntheticKind::ramp: return s_.ramp_a;
    }
    return 0.0;
  }

 private:
  SyntheticSpec s_;
  double t0_, exc_, z0_;
};

}  // namespace

std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::homogeneous: return "homogeneous";
    case SyntheticKind::oscillatory: return "oscillatory";
    case SyntheticKind::hawkes: return "hawkes";
    case SyntheticKind::ramp: return "ramp";
  }
  return "?";
}

SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "homogeneous") return SyntheticKind::homogeneous;
  if (s == "oscillatory") return SyntheticKind::oscillatory;
  if (s == "hawkes") return SyntheticKind::hawkes;
  if (s == "ramp" || s == "increasing-ramp") return SyntheticKind::ramp;
  throw ValidationError(kModule, "unknown process kind '" + s + "'");
}

void SyntheticSpec::validate() const {
  const auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  require(T > 0.0 && std::isfinite(T), "horizon T must be positive");
  require(num_types >= 1, "num_types must be >= 1");
  switch (kind) {
    case SyntheticKind::homogeneous: require(finite_nonneg(rate), "rate must be >= 0"); break;
    case SyntheticKind::oscillatory:
      require(finite_nonneg(base) && finite_nonneg(peak), "base and peak rates must be >= 0");
      require(period > 0.0, "period must be positive");
      break;
    case SyntheticKind::hawkes:
      require(finite_nonneg(mu) && finite_nonneg(alpha), "mu and alpha must be >= 0");
      require(beta > 0.0 && std::isfinite(beta), "beta must be positive");
      require(alpha / beta < 1.0, "Hawkes branching ratio alpha/beta must be < 1");
      break;
    case SyntheticKind::ramp:
      require(finite_nonneg(ramp_a) && finite_nonneg(ramp_b), "ramp coefficients must be >= 0");
      require(ramp_a > 0.0 || ramp_b > 0.0, "ramp intensity is identically zero");
      require(ramp_lookahead > 0.0, "ramp lookahead must be positive");
      break;
  }
  if (!mark_probs.empty()) {
    require(mark_probs.size() == static_cast<std::size_t>(num_types), "mark_probs must have num_types entries");
    double sum = 0.0;
    for (double p : mark_probs) {
      require(finite_nonneg(p), "mark probabilities must be >= 0");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "mark probabilities must sum to 1");
  }
  if (phase_marks) {
    require(num_types == 2, "phase marks need num_types = 2");
    require(mark_period > 0.0, "mark period must be positive");
  }
}

nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json j = {{"name", s.name},   {"kind", to_string(s.kind)}, {"T", s.T},
                      {"trials", s.trials}, {"seed", s.seed},          {"num_types", s.num_types}};
  switch (s.kind) {
    case SyntheticKind::homogeneous: j["rate"] = s.rate; break;
    case SyntheticKind::oscillatory:
      j["base"] = s.base;
      j["peak"] = s.peak;
      j["period"] = s.period;
      break;
    case SyntheticKind::hawkes:
      j["mu"] = s.mu;
      j["alpha"] = s.alpha;
      j["beta"] = s.beta;
      break;
    case SyntheticKind::ramp:
      j["ramp_a"] = s.ramp_a;
      j["ramp_b"] = s.ramp_b;
      j["ramp_lookahead"] = s.ramp_lookahead;
      break;
  }
  if (!s.mark_probs.empty()) j["mark_probs"] = s.mark_probs;
  if (s.phase_marks) {
    j["phase_marks"] = true;
    j["mark_period"] = s.mark_period;
  }
  return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    if (j.contains("preset")) s = preset(j.at("preset").get<std::string>());
    if (j.contains("kind")) s.kind = parse_synthetic_kind(j.at("kind").get<std::string>());
    s.name = j.value("name", s.name);
    s.T = j.value("T", s.T);
    s.trials = j.value("trials", s.trials);
    s.seed = j.value("seed", s.seed);
    s.num_types = j.value("num_types", s.num_types);
    s.rate = j.value("rate", s.rate);
    s.base = j.value("base", s.base);
    s.peak = j.value("peak", s.peak);
    s.period = j.value("period", s.period);
    s.mu = j.value("mu", s.mu);
    s.alpha = j.value("alpha", s.alpha);
    s.beta = j.value("beta", s.beta);
    s.ramp_a = j.value("ramp_a", s.ramp_a);
    s.ramp_b = j.value("ramp_b", s.ramp_b);
    s.ramp_lookahead = j.value("ramp_lookahead", s.ramp_lookahead);
    s.mark_probs = j.value("mark_probs", s.mark_probs);
    s.phase_marks = j.value("phase_marks", s.phase_marks);
    s.mark_period = j.value("mark_period", s.mark_period);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(kModule, std::string("bad process spec: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticSpec preset(const std::string& name) {
  SyntheticSpec s;
  s.name = name;
  if (name == "spikes") {
    s.kind = SyntheticKind::oscillatory;
    s.base = 0.5;
    s.peak = 20.0;
    s.period = 2.0;
    s.T = 6.0;
    s.trials = 200;
  } else if (name == "homogeneous") {
    s.kind = SyntheticKind::homogeneous;
    s.rate = 6.59375;
    s.T = 6.0;
    s.trials = 200;
  } else if (name == "hawkes") {
    s.kind = SyntheticKind::hawkes;
    s.mu = 1.0;
    s.alpha = 0.8;
    s.beta = 1.6;
    s.T = 20.0;
    s.trials = 200;
  } else if (name == "ramp") {
    s.kind = SyntheticKind::ramp;
    s.ramp_a = 0.0;
    s.ramp_b = 1.0;
    s.T = 20.0;
    s.trials = 300;
  } else if (name == "transfer-a") {
    s.kind = SyntheticKind::hawkes;
    s.mu = 2.0;
    s.alpha = 0.6;
    s.beta = 2.0;
  } else if (name == "transfer-b") {
    s.kind = SyntheticKind::oscillatory;
    s.base = 1.0;
    s.peak = 8.0;
    s.period = 3.0;
  } else if (name == "transfer-c") {
    s.kind = SyntheticKind::homogeneous;
    s.rate = 4.0;
  } else {
    throw ValidationError(kModule, "unknown preset '" + name + "'");
  }
  if (name.rfind("transfer-", 0) == 0) {
    s.T = 10.0;
    s.trials = 200;
    s.num_types = 2;
    s.phase_marks = true;
    s.mark_period = 2.0;
  }
  return s;
}

std::vector<std::string> preset_names() {
  return {"spikes", "homogeneous", "hawkes", "ramp", "transfer-a", "transfer-b", "transfer-c", "transfer"};
}

std::vector<SyntheticSpec> preset_group(const std::string& name) {
  if (name == "transfer") return {preset("transfer-a"), preset("transfer-b"), preset("transfer-c")};
  return {preset(name)};
}

double true_intensity(const SyntheticSpec& s, std::span<const MarkedEvent> history, double t) {
  switch (s.kind) {
    case SyntheticKind::homogeneous: return s.rate;
    case SyntheticKind::oscillatory: return oscillatory_rate(s, t);
    case SyntheticKind::hawkes: return s.mu + hawkes_excitation(s, history, t);
    case SyntheticKind::ramp: {
      double last = 0.0;
      for (const auto& e : history)
        if (e.t < t) last = e.t;
      return s.ramp_a + s.ramp_b * (t - last);
    }
  }
  return 0.0;
}

double true_cumulative(const SyntheticSpec& s, std::span<const MarkedEvent> history, double t) {
  require(t >= 0.0, "true_cumulative needs t >= 0");
  switch (s.kind) {
    case SyntheticKind::homogeneous: return s.rate * t;
    case SyntheticKind::oscillatory: return oscillatory_cumulative(s, t);
    case SyntheticKind::hawkes: {
      double z = s.mu * t;
      for (const auto& e : history)
        if (e.t < t) z -= s.alpha * std::expm1(-s.beta * (t - e.t)) / s.beta;
      return z;
    }
    case SyntheticKind::ramp: {
      double z = 0.0, last = 0.0;
      for (const auto& e : history) {
        if (e.t >= t) break;
        z += ramp_cumulative(s, e.t - last);
        last = e.t;
      }
      return z + ramp_cumulative(s, t - last);
    }
  }
  return 0.0;
}

std::vector<double> mark_distribution(const SyntheticSpec& s, double t) {
  if (s.phase_marks) {
    const double p0 = 0.5 * (1.0 + kPhaseDepth * std::cos(2.0 * std::numbers::pi * t / s.mark_period));
    return {p0, 1.0 - p0};
  }
  return mean_mark_distribution(s);
}

std::vector<double> mean_mark_distribution(const SyntheticSpec& s) {
  if (!s.mark_probs.empty()) return s.mark_probs;
  return std::vector<double>(static_cast<std::size_t>(s.num_types), 1.0 / s.num_types);
}

double mean_rate(const SyntheticSpec& s) {
  switch (s.kind) {
    case SyntheticKind::homogeneous: return s.rate;
    case SyntheticKind::oscillatory: return s.base + (s.peak - s.base) * 0.3125;
    case SyntheticKind::hawkes: return s.mu / (1.0 - s.alpha / s.beta);
    case SyntheticKind::ramp: {
      if (s.ramp_b == 0.0) return s.ramp_a;
      // E[gap] = integral of exp(-(a x + b x^2 / 2)) over x >= 0.
      const double c = std::sqrt(2.0 * s.ramp_b);
      const double gap = std::sqrt(std::numbers::pi / (2.0 * s.ramp_b)) * std::exp(s.ramp_a * s.ramp_a / (2.0 * s.ramp_b)) *
                         std::erfc(s.ramp_a / c);
      return 1.0 / gap;
    }
  }
  return 0.0;
}

double expected_count(const SyntheticSpec& s, double T) {
  switch (s.kind) {
    case SyntheticKind::homogeneous: return s.rate * T;
    case SyntheticKind::oscillatory: return oscillatory_cumulative(s, T);
    case SyntheticKind::hawkes: {
      // E lambda(t) relaxes from mu to the stationary rate at speed beta - alpha.
      const double k = s.beta - s.alpha;
      const double inf = s.beta * s.mu / k;
      return inf * T + (s.mu - inf) * (-std::expm1(-k * T)) / k;
    }
    case SyntheticKind::ramp: return mean_rate(s) * T;  // renewal-rate approximation
  }
  return 0.0;
}

EventSequence thinning_sample(const SyntheticSpec& s, double T, Rng& rng, ThinningStats* stats) {
  require(T > 0.0, "horizon must be positive");
  EventSequence seq;
  seq.window = T;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ThinningStats st;
  double t = 0.0, last = 0.0;
  double exc = 0.0;  // Hawkes excitation at time t
  for (;;) {
    double bound = 0.0, horizon = std::numeric_limits<double>::infinity();
    switch (s.kind) {
      case SyntheticKind::homogeneous: bound = s.rate; break;
      case SyntheticKind::oscillatory: bound = std::max(s.base, s.peak); break;
      case SyntheticKind::hawkes: bound = s.mu + exc; break;  // decays until the next event
      case SyntheticKind::ramp:
        horizon = s.ramp_lookahead;
        bound = s.ramp_a + s.ramp_b * (t + horizon - last);
        break;
    }
    if (!std::isfinite(bound) || bound < 0.0) throw NumericError(kModule, "thinning needs a finite dominating rate");
    if (bound == 0.0) break;  // only possible when the intensity stays zero
    const double step = std::exponential_distribution<double>(bound)(rng);
    if (step > horizon) {
      if (s.kind == SyntheticKind::hawkes) exc *= std::exp(-s.beta * horizon);
      t += horizon;
      if (t > T) break;
      continue;
    }
    if (s.kind == SyntheticKind::hawkes) exc *= std::exp(-s.beta * step);
    t += step;
    if (t > T) break;
    double lam = 0.0;
    switch (s.kind) {
      case SyntheticKind::homogeneous: lam = s.rate; break;
      case SyntheticKind::oscillatory: lam = oscillatory_rate(s, t); break;
      case SyntheticKind::hawkes: lam = s.mu + exc; break;
      case SyntheticKind::ramp: lam = s.ramp_a + s.ramp_b * (t - last); break;
    }
    ++st.candidates;
    const double ratio = lam / bound;
    st.max_ratio = std::max(st.max_ratio, ratio);
    if (ratio > 1.0 + 1e-12) throw NumericError(kModule, "intensity exceeded its dominating rate");
    if (unif(rng) * bound <= lam) {
      const auto probs = mark_distribution(s, t);
      std::discrete_distribution<int> mark(probs.begin(), probs.end());
      const int k = s.num_types > 1 ? mark(rng) : 0;
      // Equal times can appear only through rounding; keep times strictly increasing.
      if (!seq.events.empty() && t <= seq.events.back().t) continue;
      seq.events.push_back({t, k});
      ++st.accepted;
      last = t;
      if (s.kind == SyntheticKind::hawkes) exc += s.alpha;
    }
  }
  if (stats) {
    stats->candidates += st.candidates;
    stats->accepted += st.accepted;
    stats->max_ratio = std::max(stats->max_ratio, st.max_ratio);
  }
  return seq;
}

namespace {

Dataset empty_dataset(const SyntheticSpec& s) {
  Dataset ds;
  ds.num_types = s.num_types;
  ds.sequences.resize(s.trials);
  return ds;
}

Rng trial_stream(const SyntheticSpec& s, std::size_t i) { return substream(s.seed, "synthetic/" + s.name, i); }

}  // namespace

Dataset generate_serial(const SyntheticSpec& s) {
  s.validate();
  Dataset ds = empty_dataset(s);
  for (std::size_t i = 0; i < s.trials; ++i) {
    Rng rng = trial_stream(s, i);
    ds.sequences[i] = thinning_sample(s, s.T, rng);
  }
  return ds;
}

Dataset generate(const SyntheticSpec& s, int threads) {
  s.validate();
  Dataset ds = empty_dataset(s);
  parallel_for(s.trials, threads, [&](std::size_t i) {
    Rng rng = trial_stream(s, i);
    ds.sequences[i] = thinning_sample(s, s.T, rng);
  });
  return ds;
}

std::vector<double> rescale(const SyntheticSpec& s, const Dataset& ds) {
  std::vector<double> dz;
  for (const auto& seq : ds.sequences) {
    double last = 0.0, exc = 0.0;
    for (const auto& e : seq.events) {
      const TrueHazard h(s, last, exc);
      dz.push_back(h.cumulative(e.t - last));
      if (s.kind == SyntheticKind::hawkes) exc = exc * std::exp(-s.beta * (e.t - last)) + s.alpha;
      last = e.t;
    }
  }
  return dz;
}

TrueProcessModel::TrueProcessModel(SyntheticSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

IntervalState TrueProcessModel::next(std::span<const MarkedEvent> history) const {
  const double last = history.empty() ? 0.0 : history.back().t;
  IntervalState st;
  st.hazard = std::make_unique<TrueHazard>(spec_, last, spec_.kind == SyntheticKind::hawkes
                                                             ? hawkes_excitation(spec_, history, last) +
                                                                   (history.empty() ? 0.0 : spec_.alpha)
                                                             : 0.0);
  st.mark_probs = mean_mark_distribution(spec_);
  return st;
}

CorpusFiles make_corpus(const SyntheticSpec& s, const std::filesystem::path& dir, std::array<double, 3> fractions,
                        int threads) {
  const Dataset all = generate(s, threads);
  const auto parts = split(all, fractions, mix64(s.seed ^ hash_name("split")));
  std::filesystem::create_directories(dir);
  CorpusFiles f{dir / "all.jsonl", dir / "train.jsonl", dir / "val.jsonl", dir / "test.jsonl", dir / "manifest.json"};
  save_dataset(f.all, all);
  save_dataset(f.train, parts[0]);
  save_dataset(f.val, parts[1]);
  save_dataset(f.test, parts[2]);
  nlohmann::json m = {{"format", "surf-corpus"},
                      {"spec", to_json(s)},
                      {"seed", s.seed},
                      {"mean_rate", mean_rate(s)},
                      {"expected_count", expected_count(s, s.T)},
                      {"events", all.num_events()},
                      {"counts", {{"all", all.size()}, {"train", parts[0].size()}, {"val", parts[1].size()}, {"test", parts[2].size()}}},
                      {"files", {{"all", "all.jsonl"}, {"train", "train.jsonl"}, {"val", "val.jsonl"}, {"test", "test.jsonl"}}}};
  std::ofstream out(f.manifest);
  if (!out) throw Error(kModule, "cannot write " + f.manifest.string());
  out << m.dump(2) << '\n';
  return f;
}

}  // namespace surf
