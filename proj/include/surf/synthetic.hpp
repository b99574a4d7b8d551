#pragma once

// Ground-truth processes, an Ogata thinning sampler that is independent of
// the inversion path, and corpus generation.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "surf/conditional.hpp"
#include "surf/event_data.hpp"
#include "surf/rng.hpp"

namespace surf {

enum class SyntheticKind { homogeneous, oscillatory, hawkes, ramp };

std::string to_string(SyntheticKind k);
SyntheticKind parse_synthetic_kind(const std::string& s);

struct SyntheticSpec {
  std::string name = "custom";
  SyntheticKind kind = SyntheticKind::homogeneous;
  double rate = 1.0;  // homogeneous
  // oscillatory: base + (peak - base) * ((1 + cos(2 pi t / period)) / 2)^3
  double base = 0.5, peak = 20.0, period = 2.0;
  // hawkes: mu + sum_j alpha * exp(-beta (t - t_j))
  double mu = 1.0, alpha = 0.5, beta = 1.0;
  // ramp (renewal): a + b * (t - t_last)
  double ramp_a = 0.0, ramp_b = 1.0;
  double ramp_lookahead = 0.5;  // thinning window for the unbounded ramp

  int num_types = 1;
  // Fixed mark distribution (empty: uniform). With phase_marks and K = 2,
  // P(k = 0 | t) = 0.5 * (1 + 0.8 cos(2 pi t / mark_period)).
  std::vector<double> mark_probs;
  bool phase_marks = false;
  double mark_period = 2.0;

  double T = 6.0;
  std::size_t trials = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// Named configurations: spikes, homogeneous, hawkes, ramp, transfer-a/b/c.
SyntheticSpec preset(const std::string& name);
std::vector<std::string> preset_names();
// Families of a multi-corpus preset ("transfer" -> three families).
std::vector<SyntheticSpec> preset_group(const std::string& name);

// lambda*(t | events before t) and Lambda*(t) = integral over [0, t].
double true_intensity(const SyntheticSpec& s, std::span<const MarkedEvent> history, double t);
double true_cumulative(const SyntheticSpec& s, std::span<const MarkedEvent> history, double t);
// Mark distribution at an event time t.
std::vector<double> mark_distribution(const SyntheticSpec& s, double t);
// Time-averaged mark distribution (what is known before the event time).
std::vector<double> mean_mark_distribution(const SyntheticSpec& s);
// Long-run mean rate (homogeneous, oscillatory, stationary Hawkes, ramp renewal).
double mean_rate(const SyntheticSpec& s);
// E[N(T)] from an empty history.
double expected_count(const SyntheticSpec& s, double T);

struct ThinningStats {
  std::size_t candidates = 0;
  std::size_t accepted = 0;
  double max_ratio = 0.0;  // max lambda(t) / bound over candidates
};

// Ogata thinning on [0, T]; throws NumericError if lambda exceeds its bound.
EventSequence thinning_sample(const SyntheticSpec& s, double T, Rng& rng, ThinningStats* stats = nullptr);

// spec.trials sequences; trial i uses substream(spec.seed, "synthetic/" + name, i).
Dataset generate_serial(const SyntheticSpec& s);
Dataset generate(const SyntheticSpec& s, int threads = 0);

// Delta z_i = Lambda*(t_i) - Lambda*(t_{i-1}) for every event of every sequence.
std::vector<double> rescale(const SyntheticSpec& s, const Dataset& ds);

// The true process seen as a conditional model (raw time units).
class TrueProcessModel final : public ConditionalModel {
 public:
  explicit TrueProcessModel(SyntheticSpec spec);
  int num_types() const override { return spec_.num_types; }
  IntervalState next(std::span<const MarkedEvent> history) const override;
  const SyntheticSpec& spec() const { return spec_; }

 private:
  SyntheticSpec spec_;
};

struct CorpusFiles {
  std::filesystem::path all, train, val, test, manifest;
};

// Writes all/train/val/test.jsonl and manifest.json under dir.
CorpusFiles make_corpus(const SyntheticSpec& s, const std::filesystem::path& dir,
                        std::array<double, 3> fractions = {0.8, 0.1, 0.1}, int threads = 0);

}  // namespace surf
