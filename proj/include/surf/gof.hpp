#pragma once

// Time-rescaling calibration and predictive metrics.

#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

#include "surf/conditional.hpp"
#include "surf/event_data.hpp"
#include "surf/sampler.hpp"

namespace surf {

struct GofReport {
  double ks_D = 0.0;
  std::size_t n = 0;
  std::vector<double> x;            // sorted samples
  std::vector<double> ecdf;         // i / n at x[i - 1]
  std::vector<double> theoretical;  // 1 - exp(-x)
};

// One-sample KS distance to Exp(1), checking both one-sided deviations at
// every order statistic.
GofReport ks_exp1(std::span<const double> samples);
// Two-sample KS distance sup |F_a - F_b|.
double ks_two_sample(std::span<const double> a, std::span<const double> b);

// CSV with header residual,ecdf,theoretical.
void write_gof_csv(std::ostream& out, const GofReport& r);
nlohmann::json to_json(const GofReport& r);

struct HorizonMetrics {
  int h = 0;
  double rmse = 0.0;      // absolute-time error of the h-th rolled-out event
  double accuracy = 0.0;  // h-th predicted mark vs the true mark
  std::size_t count = 0;
};

struct EvalReport {
  double time_rmse = 0.0;  // pooled over events, original time units
  double type_accuracy = 0.0;
  double per_event_nll = 0.0;  // (SurF NLL + type CE) / N in original time units
  double per_event_time_nll = 0.0;  // SurF NLL / N in original time units
  std::size_t sequences = 0;
  std::size_t events = 0;
  std::vector<double> residuals;  // Delta z_i for every event
  GofReport gof;
  std::vector<HorizonMetrics> per_horizon;
  InversionCensus census;  // next-event median inversions
};

struct EvalOptions {
  std::vector<int> horizons;   // empty skips rollouts
  std::size_t horizon_stride = 1;  // roll out from every stride-th prefix
  NewtonConfig newton;
  int threads = 0;  // parallel version only
};

// `ds` must be in the model's time units; metrics are reported after undoing
// the dataset's scale.
EvalReport evaluate_serial(const ConditionalModel& model, const Dataset& ds, const EvalOptions& opt = {});
EvalReport evaluate(const ConditionalModel& model, const Dataset& ds, const EvalOptions& opt = {});

nlohmann::json to_json(const EvalReport& r);

}  // namespace surf
