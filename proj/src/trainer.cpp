#include "surf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "surf/errors.hpp"

namespace surf {
namespace {

constexpr const char* kModule = "trainer";

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(kModule, what);
}

// Weighted running mean of batch breakdowns.
struct BreakdownSum {
  double surf = 0.0, type = 0.0, fcst = 0.0, total = 0.0, nll = 0.0;
  std::size_t sequences = 0, events = 0;

  void add(const LossBreakdown& b) {
    const double n = static_cast<double>(b.sequences);
    surf += b.surf_nll * n;
    type += b.type_ce * n;
    fcst += b.fcst_rmse * n;
    total += b.total * n;
    nll += b.per_event_nll * static_cast<double>(b.events);
    sequences += b.sequences;
    events += b.events;
  }
  LossBreakdown mean() const {
    LossBreakdown b;
    const double n = std::max<double>(1.0, static_cast<double>(sequences));
    b.surf_nll = surf / n;
    b.type_ce = type / n;
    b.fcst_rmse = fcst / n;
    b.total = total / n;
    b.per_event_nll = events > 0 ? nll / static_cast<double>(events) : 0.0;
    b.sequences = sequences;
    b.events = events;
    return b;
  }
};

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"surf_nll", b.surf_nll}, {"type_ce", b.type_ce},       {"fcst_rmse", b.fcst_rmse},
          {"total", b.total},       {"per_event_nll", b.per_event_nll}, {"sequences", b.sequences},
          {"events", b.events}};
}

LossBreakdown full_loss(const SurfModel& model, const Dataset& ds, const LossWeights& w, const TrainConfig& cfg) {
  BatchOptions opt;
  opt.gradients = false;
  opt.newton = cfg.newton;
  opt.threads = cfg.threads;
  const auto batch = batch_of(ds);
  return total_loss(model, batch, w, opt).loss;
}

void check_architecture(const ModelConfig& a, const ModelConfig& b) {
  require(to_json(a) == to_json(b), "checkpoint architecture " + to_json(a).dump() + " does not match config " +
                                        to_json(b).dump());
}

TrainResult fit(SurfModel model, const Dataset& train_n, const Dataset& val_n, const TrainConfig& cfg,
                const LossWeights& w, const EpochCallback& on_epoch) {
  TrainResult res{model, {}, 0, 0.0, false, {}};
  const Dataset& val_set = val_n.sequences.empty() ? train_n : val_n;
  try {
    res.best_val = full_loss(model, val_set, w, cfg).total;
  } catch (const NumericError& e) {
    res.aborted = true;
    res.abort_reason = e.what();
    return res;
  }
  if (cfg.epochs == 0 || train_n.sequences.empty()) return res;

  Optimizer opt(cfg, model.params());
  const std::size_t n = train_n.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(per_epoch) * cfg.epochs;
  long step = 0;
  int stale = 0;
  std::vector<std::size_t> order(n);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = substream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle);
    EpochLog log;
    log.epoch = epoch;
    log.weights = w;
    BreakdownSum sum;
    double norm_sum = 0.0;
    try {
      for (std::size_t b = 0; b < per_epoch; ++b) {
        std::vector<BatchItem> batch;
        for (std::size_t i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i)
          batch.push_back({&train_n.sequences[order[i]], order[i]});
        BatchOptions bo;
        bo.newton = cfg.newton;
        bo.threads = cfg.threads;
        bo.dropout_seed = mix64(cfg.seed ^ hash_name("dropout")) + static_cast<std::uint64_t>(step);
        BatchResult r = total_loss(model, batch, w, bo);
        sum.add(r.loss);
        const double norm = global_norm(r.grad);
        if (!std::isfinite(norm)) throw NumericError(kModule, "non-finite gradient norm at epoch " + std::to_string(epoch));
        norm_sum += norm;
        if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm)
          for (auto& [name, g] : r.grad)
            for (double& v : g.data) v *= cfg.clip_norm / norm;
        log.lr = cosine_lr(cfg, step, total_steps);
        opt.step(model.mutable_params(), r.grad, log.lr);
        ++step;
      }
      log.train = sum.mean();
      log.grad_norm = norm_sum / static_cast<double>(per_epoch);
      log.val = full_loss(model, val_set, w, cfg);
    } catch (const NumericError& e) {
      res.aborted = true;
      res.abort_reason = e.what();
      break;
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log.val.total < res.best_val) {
      res.best_val = log.val.total;
      res.best_epoch = epoch;
      res.model = model;
      log.improved = true;
      stale = 0;
    } else {
      ++stale;
    }
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (cfg.patience > 0 && stale >= cfg.patience) break;
  }
  return res;
}

}  // namespace

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::hybrid: return "hybrid";
    case Schedule::staged: return "staged";
    case Schedule::equal: return "equal";
  }
  return "?";
}

Schedule parse_schedule(const std::string& s) {
  if (s == "hybrid") return Schedule::hybrid;
  if (s == "staged") return Schedule::staged;
  if (s == "equal") return Schedule::equal;
  throw ValidationError(kModule, "unknown schedule '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "momentum"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "momentum" || s == "sgd") return OptimizerKind::momentum;
  throw ValidationError(kModule, "unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
  model.validate();
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(lr_min_ratio >= 0.0 && lr_min_ratio <= 1.0, "lr_min_ratio must be in [0, 1]");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(beta_type >= 0.0 && beta_fcst >= 0.0, "loss weights must be nonnegative");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, "Adam betas must be in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(clip_norm >= 0.0, "clip_norm must be >= 0");
  require(patience >= 0, "patience must be >= 0");
  newton.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"lr", c.lr},
          {"lr_min_ratio", c.lr_min_ratio},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"beta_type", c.beta_type},
          {"beta_fcst", c.beta_fcst},
          {"seed", c.seed},
          {"schedule", to_string(c.schedule)},
          {"optimizer", to_string(c.optimizer)},
          {"momentum", c.momentum},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"patience", c.patience},
          {"newton", {{"tol", c.newton.tol}, {"max_iters", c.newton.max_iters}, {"safeguard_iters", c.newton.safeguard_iters}, {"eps", c.newton.eps}}},
          {"corpora", c.corpora},
          {"val_corpora", c.val_corpora}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    require(j.is_object(), "train config must be a JSON object");
    nlohmann::json m = j.value("model", nlohmann::json::object());
    for (const char* key : {"num_types", "d_hidden", "num_layers", "num_heads", "dropout", "variant", "J", "M", "Q",
                            "glq_hidden", "floor", "learn_floor", "type_hidden", "scale_mode"})
      if (j.contains(key)) m[key] = j.at(key);
    c.model = model_config_from_json(m);
    c.lr = j.value("lr", c.lr);
    c.lr_min_ratio = j.value("lr_min_ratio", c.lr_min_ratio);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.beta_type = j.value("beta_type", c.beta_type);
    c.beta_fcst = j.value("beta_fcst", c.beta_fcst);
    c.seed = j.value("seed", c.seed);
    if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    c.momentum = j.value("momentum", c.momentum);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.patience = j.value("patience", c.patience);
    if (j.contains("newton")) {
      const auto& n = j.at("newton");
      c.newton.tol = n.value("tol", c.newton.tol);
      c.newton.max_iters = n.value("max_iters", c.newton.max_iters);
      c.newton.safeguard_iters = n.value("safeguard_iters", c.newton.safeguard_iters);
      c.newton.eps = n.value("eps", c.newton.eps);
    }
    c.corpora = j.value("corpora", c.corpora);
    c.val_corpora = j.value("val_corpora", c.val_corpora);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(kModule, std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

LossWeights schedule_weights(const TrainConfig& c, bool finetuning) {
  switch (c.schedule) {
    case Schedule::equal: return {1.0, 1.0, 1.0};
    case Schedule::staged: return {finetuning ? 0.0 : 1.0, c.beta_type, c.beta_fcst};
    case Schedule::hybrid: return {1.0, c.beta_type, c.beta_fcst};
  }
  return {};
}

nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"train", breakdown_json(e.train)},
          {"val", breakdown_json(e.val)},
          {"grad_norm", e.grad_norm},
          {"lr", e.lr},
          {"wall_seconds", e.wall_seconds},
          {"improved", e.improved},
          {"weights", {{"surf", e.weights.surf}, {"type", e.weights.type}, {"fcst", e.weights.fcst}}}};
}

Optimizer::Optimizer(const TrainConfig& cfg, const ParamStore& like)
    : kind_(cfg.optimizer),
      momentum_(cfg.momentum),
      b1_(cfg.adam_beta1),
      b2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      wd_(cfg.weight_decay),
      m_(zeros_like(like)),
      v_(zeros_like(like)) {}

void Optimizer::step(ParamStore& params, const ParamStore& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    const ad::Matrix& g = param(grad, name);
    ad::Matrix& m = m_.at(name);
    ad::Matrix& v = v_.at(name);
    if (g.size() != p.size()) throw ValidationError(kModule, "gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double update;
      if (kind_ == OptimizerKind::adam) {
        m.data[i] = b1_ * m.data[i] + (1.0 - b1_) * g.data[i];
        v.data[i] = b2_ * v.data[i] + (1.0 - b2_) * g.data[i] * g.data[i];
        update = (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + eps_);
      } else {
        m.data[i] = momentum_ * m.data[i] + g.data[i];
        update = m.data[i];
      }
      // Decoupled weight decay.
      p.data[i] -= lr * (update + wd_ * p.data[i]);
    }
  }
}

double cosine_lr(const TrainConfig& cfg, long step, long total_steps) {
  const double lo = cfg.lr * cfg.lr_min_ratio;
  if (total_steps <= 1) return cfg.lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lo + 0.5 * (cfg.lr - lo) * (1.0 + std::cos(std::numbers::pi * std::min(1.0, frac)));
}

Dataset to_model_units(const SurfModel& model, const Dataset& raw) {
  if (model.config().scale_mode == ScaleMode::per_sequence) return normalize(raw, ScaleMode::per_sequence);
  return apply_scale(raw, model.t_scale());
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_raw, const Dataset& val_raw, const EpochCallback& on_epoch) {
  cfg.validate();
  require(!train_raw.sequences.empty(), "training set is empty");
  require(train_raw.num_types <= cfg.model.encoder.num_types,
          "data has " + std::to_string(train_raw.num_types) + " types but the model has " +
              std::to_string(cfg.model.encoder.num_types));
  require(val_raw.num_types <= cfg.model.encoder.num_types, "validation data has more types than the model");
  SurfModel model(cfg.model, cfg.seed);
  model.set_t_scale(cfg.model.scale_mode == ScaleMode::global ? compute_t_scale(train_raw) : 1.0);
  return fit(model, to_model_units(model, train_raw), to_model_units(model, val_raw), cfg,
             schedule_weights(cfg, false), on_epoch);
}

TrainResult finetune(const SurfModel& init, const TrainConfig& cfg, const Dataset& train_raw, const Dataset& val_raw,
                     const EpochCallback& on_epoch) {
  cfg.validate();
  check_architecture(init.config(), cfg.model);
  require(!train_raw.sequences.empty(), "finetuning set is empty");
  require(train_raw.num_types <= init.num_types(), "finetuning data has more types than the checkpoint");
  return fit(init, to_model_units(init, train_raw), to_model_units(init, val_raw), cfg, schedule_weights(cfg, true),
             on_epoch);
}

LooResult leave_one_out(const std::vector<Corpus>& corpora, std::size_t held_out, const TrainConfig& cfg,
                        const EvalOptions& eval, const EpochCallback& on_epoch) {
  require(corpora.size() >= 2, "leave-one-out needs at least two corpora");
  require(held_out < corpora.size(), "held-out index out of range");
  std::vector<Dataset> tr, va;
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    if (i == held_out) continue;
    tr.push_back(corpora[i].train);
    va.push_back(corpora[i].val);
  }
  TrainResult trained = train(cfg, concat(tr), concat(va), on_epoch);
  const Dataset& target = corpora[held_out].test;
  const Dataset test_n = to_model_units(trained.model, target);
  SurfModel untrained(cfg.model, cfg.seed);
  untrained.set_t_scale(trained.model.t_scale());
  LooResult r{corpora[held_out].name, evaluate(trained.model, test_n, eval),
              evaluate(untrained, to_model_units(untrained, target), eval), std::move(trained)};
  return r;
}

}  // namespace surf
