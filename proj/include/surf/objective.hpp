#pragma once

#include <span>
#include <vector>

#include "surf/autodiff.hpp"
#include "surf/conditional.hpp"
#include "surf/model.hpp"
#include "surf/sampler.hpp"

namespace surf {

struct LossWeights {
  double surf = 1.0;
  double type = 0.74;
  double fcst = 4.8;
};

struct LossBreakdown {
  double surf_nll = 0.0;
  double type_ce = 0.0;
  double fcst_rmse = 0.0;
  double total = 0.0;
  double per_event_nll = 0.0;  // (surf_nll + type_ce) / N over the batch
  std::size_t sequences = 0;
  std::size_t events = 0;
};

// Delta z_i = Lambda(tau_i | h_{i-1}) and the survival term over [t_N, T].
struct RescaledResiduals {
  std::vector<double> dz;
  double survival_z = 0.0;
};

struct SurfLoss {
  double value = 0.0;
  RescaledResiduals residuals;
};

// sum_i Lambda_i(tau_i) + Lambda_N(dT) - sum_i log lambda_i(tau_i), given the
// N + 1 interval hazards of seq.
SurfLoss surf_loss(const EventSequence& seq, std::span<const IntervalHazard* const> hazards);
SurfLoss surf_loss(const EventSequence& seq, std::span<const IntervalState> states);

// sum_i -log softmax(logits_i)[k_i]; logits row i belongs to event i.
double type_loss(const ad::Matrix& logits, std::span<const int> marks);
// sqrt(sum (tau_hat - tau)^2) per sequence.
double forecast_loss(std::span<const double> tau_hat, std::span<const double> tau);

// Tape versions.
ad::Var surf_loss(const HeadConfig& cfg, const ParamVars& vars, ad::Var raw, const EventSequence& seq);
ad::Var type_loss(ad::Var logits, std::span<const int> marks);

struct SequenceTerms {
  ad::Var surf, type, fcst, total;
};

// Per-sequence loss terms on `vars`'s tape. tau_hat for the forecast term is
// the median inversion of each interval, made differentiable through the
// implicit function Lambda(tau_hat) = ln 2.
SequenceTerms sequence_loss(const SurfModel& model, const ParamVars& vars, const EventSequence& seq,
                            const LossWeights& w, const NewtonConfig& newton = {}, Rng* dropout_rng = nullptr);

struct BatchItem {
  const EventSequence* seq;
  std::size_t id;  // reported in diagnostics
};

struct BatchResult {
  LossBreakdown loss;
  ParamStore grad;  // empty unless gradients were requested
};

struct BatchOptions {
  bool gradients = true;
  NewtonConfig newton;
  std::uint64_t dropout_seed = 0;  // used only when the model has dropout > 0
  int threads = 0;                 // parallel version only; 0 = all cores
};

inline constexpr std::size_t kBatchChunk = 8;

// Mean over sequences of per-sequence totals, with gradients. The serial
// reference uses one tape per sequence; the parallel version evaluates fixed
// chunks of kBatchChunk sequences per tape and reduces chunks in order, so
// its result does not depend on the thread count.
BatchResult total_loss_serial(const SurfModel& model, std::span<const BatchItem> batch, const LossWeights& w,
                              const BatchOptions& opt = {});
BatchResult total_loss(const SurfModel& model, std::span<const BatchItem> batch, const LossWeights& w,
                       const BatchOptions& opt = {});

std::vector<BatchItem> batch_of(const Dataset& ds);

}  // namespace surf
