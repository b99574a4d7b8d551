#include "surf/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <random>

#include "surf/parallel.hpp"

#include "surf/errors.hpp"

namespace surf {

namespace {
constexpr const char* kModule = "sampler";
}

void NewtonConfig::validate() const {
  if (!(tol > 0.0) || max_iters < 1 || safeguard_iters < 0 || !(eps > 0.0))
    throw ValidationError(kModule, "Newton config needs tol > 0, max_iters >= 1, eps > 0");
}

InversionResult invert(const IntervalHazard& hazard, double z, const NewtonConfig& cfg) {
  if (!(z > 0.0) || !std::isfinite(z)) throw ValidationError(kModule, "target z must be positive and finite");
  InversionResult r;

  // Bracket: Lambda(0) = 0 < z; grow b from 2z / lambda(0) until Lambda(b) >= z.
  double a = 0.0, fa = 0.0;
  double b = 2.0 * z / std::max(hazard.intensity(0.0), cfg.eps);
  double fb = hazard.cumulative(b);
  const double fl = std::max(hazard.floor(), 1e-300);
  const int max_doublings =
      static_cast<int>(std::ceil(std::log2(std::max(1.0, z / (b * fl))))) + 64;
  while (!(fb >= z)) {
    if (r.doublings >= max_doublings || !std::isfinite(b))
      throw NumericError(kModule, "root not bracketed after " + std::to_string(r.doublings) +
                                      " doublings (intensity floor invariant broken?)");
    a = b;
    fa = fb;
    b *= 2.0;
    fb = hazard.cumulative(b);
    ++r.doublings;
  }

  double x = 0.5 * (a + b);
  const int budget = cfg.max_iters + cfg.safeguard_iters;
  for (int it = 0;; ++it) {
    const double F = hazard.cumulative(x) - z;
    if (!std::isfinite(F)) throw NumericError(kModule, "non-finite cumulative intensity during inversion");
    const double slope = std::max(hazard.cumulative_derivative(x), cfg.eps);
    // A bracket at double resolution cannot be improved further.
    const bool collapsed = b - a <= 4.0 * std::numeric_limits<double>::epsilon() * b;
    // Both the residual and the implied time error must be within tol.
    if ((std::abs(F) <= cfg.tol && std::abs(F) / slope <= cfg.tol) || collapsed) {
      r.converged = true;
      r.dt = x;
      r.residual = std::abs(F);
      r.iterations = it;
      break;
    }
    if (it >= budget) {
      r.dt = x;
      r.residual = std::abs(F);
      r.iterations = it;
      break;
    }
    if (F < 0.0) {
      a = x;
      fa = F + z;
    } else {
      b = x;
      fb = F + z;
    }
    if (!(fa <= z && z <= fb)) r.bracket_ok = false;
    const double step = x - F / slope;
    if (step > a && step < b) {
      x = step;
      ++r.newton_steps;
    } else {
      x = 0.5 * (a + b);
      ++r.bisection_steps;
    }
  }
  r.lo = a;
  r.hi = b;
  r.within_budget = r.converged && r.iterations <= cfg.max_iters;
  return r;
}

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

int draw_categorical(std::span<const double> probs, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double c = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    c += probs[k];
    if (u < c) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

SampleResult sample_sequence(const ConditionalModel& model, double T, Rng& rng, std::size_t max_events,
                             const NewtonConfig& cfg) {
  if (!(T > 0.0)) throw ValidationError(kModule, "horizon T must be positive");
  SampleResult out;
  out.sequence.window = T;
  std::exponential_distribution<double> exp1(1.0);
  double t = 0.0;
  while (true) {
    if (out.sequence.size() >= max_events) {
      out.truncated = true;
      break;
    }
    IntervalState st = model.next(out.sequence.events);
    const double z = exp1(rng);
    const InversionResult inv = invert(*st.hazard, z, cfg);
    ++out.inversions;
    if (inv.within_budget) ++out.within_budget;
    if (!inv.converged) throw NumericError(kModule, "inversion did not converge within the safeguard budget");
    const double t_new = t + inv.dt;
    if (t_new > T) break;
    // Draw the mark even when K = 1 so the stream layout does not depend on K.
    const int k = draw_categorical(st.mark_probs, rng);
    if (!(t_new > t)) break;  // dt underflowed against t; treat as end of representable time
    out.sequence.events.push_back({t_new, k});
    t = t_new;
  }
  return out;
}

Prediction predict_from_state(const IntervalState& state, double q, const NewtonConfig& cfg) {
  if (!(q > 0.0 && q < 1.0)) throw ValidationError(kModule, "quantile must be in (0, 1)");
  Prediction p;
  p.inversion = invert(*state.hazard, -std::log1p(-q), cfg);
  p.tau = p.inversion.dt;
  p.mark_probs = state.mark_probs;
  p.mark = argmax(p.mark_probs);
  return p;
}

Prediction predict_next(const ConditionalModel& model, std::span<const MarkedEvent> prefix, double q,
                        const NewtonConfig& cfg) {
  return predict_from_state(model.next(prefix), q, cfg);
}

std::vector<Prediction> rollout(const ConditionalModel& model, std::span<const MarkedEvent> prefix, int horizon,
                                MarkDecode decode, Rng* rng, const NewtonConfig& cfg) {
  if (horizon < 1) throw ValidationError(kModule, "rollout horizon must be >= 1");
  if (decode == MarkDecode::sample && rng == nullptr)
    throw ValidationError(kModule, "categorical mark decoding needs an rng");
  std::vector<MarkedEvent> hist(prefix.begin(), prefix.end());
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(horizon));
  for (int h = 0; h < horizon; ++h) {
    Prediction p = predict_next(model, hist, 0.5, cfg);
    if (decode == MarkDecode::sample) p.mark = draw_categorical(p.mark_probs, *rng);
    const double t_prev = hist.empty() ? 0.0 : hist.back().t;
    hist.push_back({t_prev + p.tau, p.mark});
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

void tally(InversionCensus& c, const InversionResult& r) {
  ++c.total;
  if (r.converged) ++c.converged;
  if (r.within_budget) ++c.within_budget;
  if (!r.bracket_ok) ++c.bracket_violations;
  c.max_iterations = std::max(c.max_iterations, r.iterations);
  c.max_residual = std::max(c.max_residual, r.residual);
}

void check_census_input(std::span<const IntervalHazard* const> hazards, std::span<const double> z) {
  if (hazards.size() != z.size()) throw ValidationError(kModule, "census needs one z per hazard");
}

}  // namespace

InversionCensus inversion_census_serial(std::span<const IntervalHazard* const> hazards, std::span<const double> z,
                                        const NewtonConfig& cfg) {
  check_census_input(hazards, z);
  InversionCensus c;
  for (std::size_t i = 0; i < hazards.size(); ++i) tally(c, invert(*hazards[i], z[i], cfg));
  return c;
}

InversionCensus inversion_census(std::span<const IntervalHazard* const> hazards, std::span<const double> z,
                                 const NewtonConfig& cfg, int threads) {
  check_census_input(hazards, z);
  std::vector<InversionResult> results(hazards.size());
  parallel_for(hazards.size(), threads, [&](std::size_t i) { results[i] = invert(*hazards[i], z[i], cfg); });
  InversionCensus c;
  for (const auto& r : results) tally(c, r);
  return c;
}

}  // namespace surf
