#include "surf/gof.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "surf/errors.hpp"
#include "surf/objective.hpp"
#include "surf/parallel.hpp"

namespace surf {
namespace {

constexpr const char* kModule = "gof_metrics";

// Per-sequence partial sums, reduced in sequence order.
struct SeqEval {
  double sq_err = 0.0;
  std::size_t correct = 0;
  double nll = 0.0;
  double time_nll = 0.0;
  std::size_t events = 0;
  std::vector<double> residuals;
  std::vector<double> h_sq_err;
  std::vector<std::size_t> h_correct, h_count;
  InversionCensus census;
};

void add_inversion(InversionCensus& c, const InversionResult& r) {
  ++c.total;
  if (r.converged) ++c.converged;
  if (r.within_budget) ++c.within_budget;
  if (!r.bracket_ok) ++c.bracket_violations;
  c.max_iterations = std::max(c.max_iterations, r.iterations);
  c.max_residual = std::max(c.max_residual, r.residual);
}

void merge(InversionCensus& a, const InversionCensus& b) {
  a.total += b.total;
  a.converged += b.converged;
  a.within_budget += b.within_budget;
  a.bracket_violations += b.bracket_violations;
  a.max_iterations = std::max(a.max_iterations, b.max_iterations);
  a.max_residual = std::max(a.max_residual, b.max_residual);
}

void check_horizons(const EvalOptions& opt) {
  for (int h : opt.horizons)
    if (h < 1) throw ValidationError(kModule, "horizons must be >= 1");
  if (opt.horizon_stride < 1) throw ValidationError(kModule, "horizon stride must be >= 1");
}

SeqEval eval_sequence(const ConditionalModel& model, const EventSequence& seq, double scale, int num_types,
                      const EvalOptions& opt) {
  SeqEval e;
  const std::size_t n = seq.size();
  e.events = n;
  const std::vector<IntervalState> states = model.all_states(seq);
  const SurfLoss sl = surf_loss(seq, states);
  e.residuals = sl.residuals.dz;
  // Event-time densities pick up 1/scale each when mapped back to original units.
  e.time_nll = sl.value + static_cast<double>(n) * std::log(scale);
  e.nll = e.time_nll;
  const std::vector<double> tau = seq.inter_arrivals();
  for (std::size_t i = 0; i < n; ++i) {
    const int k = seq.events[i].k;
    if (k < 0 || k >= num_types) throw ValidationError(kModule, "mark out of range for the model");
    const auto& p = states[i].mark_probs;
    e.nll -= std::log(std::max(p[static_cast<std::size_t>(k)], 1e-300));
    const Prediction pr = predict_from_state(states[i], 0.5, opt.newton);
    add_inversion(e.census, pr.inversion);
    const double err = (pr.tau - tau[i]) * scale;
    e.sq_err += err * err;
    if (pr.mark == k) ++e.correct;
  }

  const std::size_t H = opt.horizons.size();
  e.h_sq_err.assign(H, 0.0);
  e.h_correct.assign(H, 0);
  e.h_count.assign(H, 0);
  if (H == 0) return e;
  const int max_h = *std::max_element(opt.horizons.begin(), opt.horizons.end());
  for (std::size_t start = 0; start < n; start += opt.horizon_stride) {
    const std::span<const MarkedEvent> prefix(seq.events.data(), start);
    const std::size_t avail = n - start;
    const int steps = static_cast<int>(std::min<std::size_t>(avail, static_cast<std::size_t>(max_h)));
    const auto roll = rollout(model, prefix, steps, MarkDecode::argmax, nullptr, opt.newton);
    double t = start == 0 ? 0.0 : seq.events[start - 1].t;
    std::vector<double> abs_t(roll.size());
    for (std::size_t j = 0; j < roll.size(); ++j) abs_t[j] = t += roll[j].tau;
    for (std::size_t hi = 0; hi < H; ++hi) {
      const std::size_t h = static_cast<std::size_t>(opt.horizons[hi]);
      if (h > roll.size()) continue;
      const MarkedEvent& truth = seq.events[start + h - 1];
      const double err = (abs_t[h - 1] - truth.t) * scale;
      e.h_sq_err[hi] += err * err;
      if (roll[h - 1].mark == truth.k) ++e.h_correct[hi];
      ++e.h_count[hi];
    }
  }
  return e;
}

EvalReport reduce(const std::vector<SeqEval>& parts, const EvalOptions& opt) {
  EvalReport r;
  r.sequences = parts.size();
  double sq = 0.0, nll = 0.0, time_nll = 0.0;
  std::size_t correct = 0;
  const std::size_t H = opt.horizons.size();
  std::vector<double> hs(H, 0.0);
  std::vector<std::size_t> hc(H, 0), hn(H, 0);
  for (const auto& p : parts) {
    r.events += p.events;
    sq += p.sq_err;
    nll += p.nll;
    time_nll += p.time_nll;
    correct += p.correct;
    r.residuals.insert(r.residuals.end(), p.residuals.begin(), p.residuals.end());
    merge(r.census, p.census);
    for (std::size_t i = 0; i < H; ++i) {
      hs[i] += p.h_sq_err[i];
      hc[i] += p.h_correct[i];
      hn[i] += p.h_count[i];
    }
  }
  if (r.events > 0) {
    const double n = static_cast<double>(r.events);
    r.time_rmse = std::sqrt(sq / n);
    r.type_accuracy = static_cast<double>(correct) / n;
    r.per_event_nll = nll / n;
    r.per_event_time_nll = time_nll / n;
    r.gof = ks_exp1(r.residuals);
  }
  for (std::size_t i = 0; i < H; ++i) {
    HorizonMetrics m;
    m.h = opt.horizons[i];
    m.count = hn[i];
    if (hn[i] > 0) {
      m.rmse = std::sqrt(hs[i] / static_cast<double>(hn[i]));
      m.accuracy = static_cast<double>(hc[i]) / static_cast<double>(hn[i]);
    }
    r.per_horizon.push_back(m);
  }
  return r;
}

void check_inputs(const ConditionalModel& model, const Dataset& ds, const EvalOptions& opt) {
  if (ds.sequences.empty()) throw ValidationError(kModule, "cannot evaluate an empty split");
  if (ds.num_types > model.num_types())
    throw ValidationError(kModule, "dataset has " + std::to_string(ds.num_types) + " types, model has " +
                                       std::to_string(model.num_types()));
  check_horizons(opt);
  opt.newton.validate();
}

}  // namespace

GofReport ks_exp1(std::span<const double> samples) {
  if (samples.empty()) throw ValidationError(kModule, "KS test needs at least one sample");
  GofReport r;
  r.n = samples.size();
  r.x.assign(samples.begin(), samples.end());
  for (double v : r.x)
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(kModule, "KS samples must be positive and finite");
  std::sort(r.x.begin(), r.x.end());
  const double n = static_cast<double>(r.n);
  r.ecdf.resize(r.n);
  r.theoretical.resize(r.n);
  double d = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double F = -std::expm1(-r.x[i]);
    const double hi = static_cast<double>(i + 1) / n;
    const double lo = static_cast<double>(i) / n;
    r.ecdf[i] = hi;
    r.theoretical[i] = F;
    d = std::max({d, hi - F, F - lo});
  }
  r.ks_D = d;
  return r;
}

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError(kModule, "two-sample KS needs nonempty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return d;
}

void write_gof_csv(std::ostream& out, const GofReport& r) {
  out << "residual,ecdf,theoretical\n";
  out.precision(17);
  for (std::size_t i = 0; i < r.n; ++i) out << r.x[i] << ',' << r.ecdf[i] << ',' << r.theoretical[i] << '\n';
}

nlohmann::json to_json(const GofReport& r) { return {{"ks_D", r.ks_D}, {"n", r.n}}; }

EvalReport evaluate_serial(const ConditionalModel& model, const Dataset& ds, const EvalOptions& opt) {
  check_inputs(model, ds, opt);
  std::vector<SeqEval> parts;
  parts.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    parts.push_back(eval_sequence(model, ds.sequences[i], ds.scale_of(i), model.num_types(), opt));
  return reduce(parts, opt);
}

EvalReport evaluate(const ConditionalModel& model, const Dataset& ds, const EvalOptions& opt) {
  check_inputs(model, ds, opt);
  std::vector<SeqEval> parts(ds.size());
  parallel_for(ds.size(), opt.threads, [&](std::size_t i) {
    parts[i] = eval_sequence(model, ds.sequences[i], ds.scale_of(i), model.num_types(), opt);
  });
  return reduce(parts, opt);
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json hz = nlohmann::json::array();
  for (const auto& m : r.per_horizon) hz.push_back({{"h", m.h}, {"rmse", m.rmse}, {"accuracy", m.accuracy}, {"count", m.count}});
  return {{"time_rmse", r.time_rmse},
          {"type_accuracy", r.type_accuracy},
          {"per_event_nll", r.per_event_nll},
          {"per_event_time_nll", r.per_event_time_nll},
          {"sequences", r.sequences},
          {"events", r.events},
          {"ks_D", r.gof.ks_D},
          {"per_horizon", hz},
          {"inversions",
           {{"total", r.census.total},
            {"converged", r.census.converged},
            {"within_budget", r.census.within_budget},
            {"max_iterations", r.census.max_iterations},
            {"max_residual", r.census.max_residual}}}};
}

}  // namespace surf
