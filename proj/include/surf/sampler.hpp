#pragma once

#include <span>
#include <vector>

#include "surf/conditional.hpp"
#include "surf/heads.hpp"
#include "surf/rng.hpp"

namespace surf {

struct NewtonConfig {
  double tol = 1e-4;        // on |Lambda(dt) - z|
  int max_iters = 8;        // Newton budget M
  int safeguard_iters = 200;
  double eps = 1e-6;        // guard in dt - F / max(F', eps)
  void validate() const;
};

struct InversionResult {
  double dt = 0.0;
  int iterations = 0;  // steps taken after the initial midpoint
  int newton_steps = 0;
  int bisection_steps = 0;
  int doublings = 0;
  double residual = 0.0;
  double lo = 0.0, hi = 0.0;  // final bracket
  bool converged = false;
  bool within_budget = false;  // converged in at most max_iters steps
  bool bracket_ok = true;      // Lambda(lo) <= z <= Lambda(hi) held throughout
};

// Solves Lambda(dt) = z by bracketed Newton with bisection fallback.
InversionResult invert(const IntervalHazard& hazard, double z, const NewtonConfig& cfg = {});

struct SampleResult {
  EventSequence sequence;
  bool truncated = false;
  std::size_t inversions = 0;
  std::size_t within_budget = 0;
};

// Draws z ~ Exp(1) per interval and inverts; stops at the first t > T.
SampleResult sample_sequence(const ConditionalModel& model, double T, Rng& rng, std::size_t max_events = 100000,
                             const NewtonConfig& cfg = {});

struct Prediction {
  double tau = 0.0;
  int mark = 0;
  std::vector<double> mark_probs;
  InversionResult inversion;
};

// tau_hat = Lambda^{-1}(-log(1 - q)); q = 0.5 gives the median.
Prediction predict_next(const ConditionalModel& model, std::span<const MarkedEvent> prefix, double q = 0.5,
                        const NewtonConfig& cfg = {});
Prediction predict_from_state(const IntervalState& state, double q = 0.5, const NewtonConfig& cfg = {});

enum class MarkDecode { argmax, sample };

// Autoregressive: each predicted (median time, mark) joins the history.
std::vector<Prediction> rollout(const ConditionalModel& model, std::span<const MarkedEvent> prefix, int horizon,
                                MarkDecode decode = MarkDecode::argmax, Rng* rng = nullptr,
                                const NewtonConfig& cfg = {});

int argmax(std::span<const double> v);
int draw_categorical(std::span<const double> probs, Rng& rng);

struct InversionCensus {
  std::size_t total = 0;
  std::size_t converged = 0;
  std::size_t within_budget = 0;
  std::size_t bracket_violations = 0;
  int max_iterations = 0;
  double max_residual = 0.0;
};

// Inverts hazards[i] at z[i]. The parallel version splits the work over
// threads; both reduce in index order and give identical counts.
InversionCensus inversion_census_serial(std::span<const IntervalHazard* const> hazards, std::span<const double> z,
                                        const NewtonConfig& cfg = {});
InversionCensus inversion_census(std::span<const IntervalHazard* const> hazards, std::span<const double> z,
                                 const NewtonConfig& cfg = {}, int threads = 0);

}  // namespace surf
