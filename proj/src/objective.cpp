#include "surf/objective.hpp"

#include <cmath>
#include <numbers>

#include "surf/errors.hpp"
#include "surf/parallel.hpp"

namespace surf {

namespace {

constexpr const char* kModule = "objective";

void require_finite(double v, const char* term, std::size_t id) {
  if (!std::isfinite(v))
    throw NumericError(kModule, std::string("non-finite ") + term + " in sequence " + std::to_string(id));
}

std::vector<int> marks_of(const EventSequence& seq) {
  std::vector<int> k(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) k[i] = seq.events[i].k;
  return k;
}

}  // namespace

SurfLoss surf_loss(const EventSequence& seq, std::span<const IntervalHazard* const> hazards) {
  if (hazards.size() != seq.size() + 1)
    throw ValidationError(kModule, "need N + 1 interval hazards, got " + std::to_string(hazards.size()));
  SurfLoss out;
  const std::vector<double> tau = seq.inter_arrivals();
  out.residuals.dz.resize(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double dz = hazards[i]->cumulative(tau[i]);
    const double lam = hazards[i]->intensity(tau[i]);
    if (!(lam > 0.0)) throw NumericError(kModule, "intensity <= 0 at event " + std::to_string(i));
    out.residuals.dz[i] = dz;
    out.value += dz - std::log(lam);
  }
  out.residuals.survival_z = hazards.back()->cumulative(seq.survival_gap());
  out.value += out.residuals.survival_z;
  return out;
}

SurfLoss surf_loss(const EventSequence& seq, std::span<const IntervalState> states) {
  std::vector<const IntervalHazard*> h(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) h[i] = states[i].hazard.get();
  return surf_loss(seq, h);
}

double type_loss(const ad::Matrix& logits, std::span<const int> marks) {
  if (logits.rows < marks.size()) throw ValidationError(kModule, "fewer logit rows than marks");
  double s = 0.0;
  for (std::size_t i = 0; i < marks.size(); ++i) {
    if (marks[i] < 0 || static_cast<std::size_t>(marks[i]) >= logits.cols)
      throw ValidationError(kModule, "mark " + std::to_string(marks[i]) + " out of range");
    double m = -INFINITY;
    for (double v : logits.row_span(i)) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits.row_span(i)) z += std::exp(v - m);
    s += m + std::log(z) - logits(i, static_cast<std::size_t>(marks[i]));
  }
  return s;
}

double forecast_loss(std::span<const double> tau_hat, std::span<const double> tau) {
  if (tau_hat.size() != tau.size()) throw ValidationError(kModule, "forecast length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) s += (tau_hat[i] - tau[i]) * (tau_hat[i] - tau[i]);
  return std::sqrt(s);
}

ad::Var surf_loss(const HeadConfig& cfg, const ParamVars& vars, ad::Var raw, const EventSequence& seq) {
  std::vector<double> dt = seq.inter_arrivals();
  dt.push_back(seq.survival_gap());
  ad::Var cum = cumulative(cfg, vars, raw, dt);
  if (seq.empty()) return ad::sum(cum);
  ad::Var logl = log_intensity(cfg, vars, ad::slice_rows(raw, 0, seq.size()), std::span(dt).first(seq.size()));
  return ad::sub(ad::sum(cum), ad::sum(logl));
}

ad::Var type_loss(ad::Var logits, std::span<const int> marks) {
  std::vector<std::size_t> idx(marks.size());
  for (std::size_t i = 0; i < marks.size(); ++i) {
    if (marks[i] < 0 || static_cast<std::size_t>(marks[i]) >= logits.cols())
      throw ValidationError(kModule, "mark " + std::to_string(marks[i]) + " out of range");
    idx[i] = static_cast<std::size_t>(marks[i]);
  }
  ad::Var rows = ad::slice_rows(logits, 0, marks.size());
  return ad::neg(ad::sum(ad::pick(ad::log_softmax_rows(rows), idx)));
}

SequenceTerms sequence_loss(const SurfModel& model, const ParamVars& vars, const EventSequence& seq,
                            const LossWeights& w, const NewtonConfig& newton, Rng* dropout_rng) {
  ad::Tape& tape = *param(vars, "enc.h0").tape();
  const HeadConfig& hc = model.config().head;
  const SurfModel::Forward f = model.forward(vars, seq, dropout_rng);
  SequenceTerms t;
  t.surf = surf_loss(hc, vars, f.raw, seq);
  const std::size_t n = seq.size();
  if (n == 0) {
    t.type = tape.constant(ad::Matrix::scalar(0.0));
    t.fcst = tape.constant(ad::Matrix::scalar(0.0));
  } else {
    const std::vector<int> marks = marks_of(seq);
    t.type = type_loss(f.logits, marks);

    const std::vector<double> tau = seq.inter_arrivals();
    const ad::Matrix& raw = f.raw.value();
    std::vector<double> tau_hat(n), inv_lam(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto hz = make_hazard(hc, model.params(), raw.row_span(i));
      const InversionResult r = invert(*hz, std::numbers::ln2, newton);
      tau_hat[i] = r.dt;
      inv_lam[i] = 1.0 / std::max(hz->cumulative_derivative(r.dt), newton.eps);
    }
    // d tau_hat / d theta = -(d Lambda / d theta) / (d Lambda / d dt) at the solution.
    ad::Var cum = cumulative(hc, vars, ad::slice_rows(f.raw, 0, n), tau_hat);
    ad::Var shift = ad::mul(ad::sub(cum, ad::detach(cum)), tape.constant(ad::Matrix::column(inv_lam)));
    ad::Var err = ad::sub(tape.constant(ad::Matrix::column(tau_hat)), ad::add(shift, tape.constant(ad::Matrix::column(tau))));
    t.fcst = ad::sqrt(ad::sum(ad::square(err)));
  }
  ad::Var total = ad::scale(t.surf, w.surf);
  if (w.type != 0.0) total = ad::add(total, ad::scale(t.type, w.type));
  if (w.fcst != 0.0) total = ad::add(total, ad::scale(t.fcst, w.fcst));
  t.total = total;
  return t;
}

std::vector<BatchItem> batch_of(const Dataset& ds) {
  std::vector<BatchItem> b(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) b[i] = {&ds.sequences[i], i};
  return b;
}

namespace {

struct SeqValues {
  double surf = 0.0, type = 0.0, fcst = 0.0, total = 0.0;
};

SeqValues values_of(const SequenceTerms& t, std::size_t id) {
  SeqValues v{t.surf.item(), t.type.item(), t.fcst.item(), t.total.item()};
  require_finite(v.surf, "surf_nll", id);
  require_finite(v.type, "type_ce", id);
  require_finite(v.fcst, "fcst_rmse", id);
  require_finite(v.total, "total", id);
  return v;
}

Rng dropout_stream(const BatchOptions& opt, std::size_t id) { return substream(opt.dropout_seed, "dropout", id); }

bool uses_dropout(const SurfModel& m) { return m.config().encoder.dropout > 0.0; }

void finish(LossBreakdown& lb, const std::vector<SeqValues>& vals, std::span<const BatchItem> batch, const LossWeights& w) {
  for (std::size_t i = 0; i < vals.size(); ++i) {
    lb.surf_nll += vals[i].surf;
    lb.type_ce += vals[i].type;
    lb.fcst_rmse += vals[i].fcst;
    lb.events += batch[i].seq->size();
  }
  lb.sequences = vals.size();
  const double n = static_cast<double>(vals.size());
  lb.per_event_nll = lb.events > 0 ? (lb.surf_nll + lb.type_ce) / static_cast<double>(lb.events) : 0.0;
  lb.surf_nll /= n;
  lb.type_ce /= n;
  lb.fcst_rmse /= n;
  lb.total = w.surf * lb.surf_nll + w.type * lb.type_ce + w.fcst * lb.fcst_rmse;
}

void check_batch(std::span<const BatchItem> batch) {
  if (batch.empty()) throw ValidationError(kModule, "empty batch");
}

}  // namespace

// Tags numeric failures inside one sequence's graph with its id.
template <class F>
auto for_sequence(std::size_t id, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    if (std::string(e.what()).find(" in sequence ") != std::string::npos) throw;
    throw NumericError(kModule, std::string(e.what()) + " in sequence " + std::to_string(id));
  }
}

BatchResult total_loss_serial(const SurfModel& model, std::span<const BatchItem> batch, const LossWeights& w,
                              const BatchOptions& opt) {
  check_batch(batch);
  BatchResult out;
  if (opt.gradients) out.grad = zeros_like(model.params());
  std::vector<SeqValues> vals(batch.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for_sequence(batch[i].id, [&] {
      ad::Tape tape;
      ParamVars vars = bind(tape, model.params(), opt.gradients);
      Rng drop = dropout_stream(opt, batch[i].id);
      SequenceTerms t =
          sequence_loss(model, vars, *batch[i].seq, w, opt.newton, uses_dropout(model) ? &drop : nullptr);
      vals[i] = values_of(t, batch[i].id);
      if (opt.gradients) {
        tape.backward(ad::scale(t.total, inv_n));
        axpy(out.grad, 1.0, gradients(tape, vars));
      }
    });
  }
  finish(out.loss, vals, batch, w);
  return out;
}

BatchResult total_loss(const SurfModel& model, std::span<const BatchItem> batch, const LossWeights& w,
                       const BatchOptions& opt) {
  check_batch(batch);
  const std::size_t chunks = (batch.size() + kBatchChunk - 1) / kBatchChunk;
  std::vector<ParamStore> grads(chunks);
  std::vector<SeqValues> vals(batch.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  parallel_for(chunks, opt.threads, [&](std::size_t c) {
    ad::Tape tape;
    const std::size_t begin = c * kBatchChunk, end = std::min(batch.size(), begin + kBatchChunk);
    ParamVars vars = for_sequence(batch[begin].id, [&] { return bind(tape, model.params(), opt.gradients); });
    ad::Var chunk_total;
    for (std::size_t i = begin; i < end; ++i) {
      for_sequence(batch[i].id, [&] {
        Rng drop = dropout_stream(opt, batch[i].id);
        SequenceTerms t =
            sequence_loss(model, vars, *batch[i].seq, w, opt.newton, uses_dropout(model) ? &drop : nullptr);
        vals[i] = values_of(t, batch[i].id);
        chunk_total = i == begin ? t.total : ad::add(chunk_total, t.total);
      });
    }
    if (opt.gradients) {
      for_sequence(batch[begin].id, [&] {
        tape.backward(ad::scale(chunk_total, inv_n));
        grads[c] = gradients(tape, vars);
      });
    }
  });
  BatchResult out;
  if (opt.gradients) {
    out.grad = zeros_like(model.params());
    for (const auto& g : grads) axpy(out.grad, 1.0, g);
  }
  finish(out.loss, vals, batch, w);
  return out;
}

}  // namespace surf
