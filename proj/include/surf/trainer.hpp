#pragma once

// Optimization loop: batching, Adam or momentum updates with cosine decay,
// clipping, early stopping on validation loss, and multi-corpus regimes.

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "surf/gof.hpp"
#include "surf/model.hpp"
#include "surf/objective.hpp"

namespace surf {

enum class Schedule { hybrid, staged, equal };
enum class OptimizerKind { adam, momentum };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  ModelConfig model;
  double lr = 3e-4;
  double lr_min_ratio = 0.01;  // cosine decays to lr * lr_min_ratio
  std::size_t batch_size = 256;
  int epochs = 50;
  double beta_type = 0.74;
  double beta_fcst = 4.8;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::hybrid;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double weight_decay = 1e-5;
  double clip_norm = 10.0;  // 0 disables clipping
  int patience = 10;        // 0 disables early stopping
  int threads = 0;
  NewtonConfig newton;
  std::vector<std::string> corpora;      // training files (joint when several)
  std::vector<std::string> val_corpora;  // optional validation files

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; model keys may sit at top level or under "model".
TrainConfig train_config_from_json(const nlohmann::json& j);

// Loss weights of the schedule; `finetuning` selects the staged second phase.
LossWeights schedule_weights(const TrainConfig& c, bool finetuning);

struct EpochLog {
  int epoch = 0;
  LossBreakdown train, val;
  double grad_norm = 0.0;  // mean pre-clip norm over steps
  double lr = 0.0;
  double wall_seconds = 0.0;
  bool improved = false;
  LossWeights weights;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainResult {
  SurfModel model;  // best-validation parameters
  std::vector<EpochLog> log;
  int best_epoch = 0;  // 0 means the initial parameters
  double best_val = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

// Optimizer state over a parameter store.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ParamStore& like);
  // One update with learning rate lr; grad must match params.
  void step(ParamStore& params, const ParamStore& grad, double lr);

 private:
  OptimizerKind kind_;
  double momentum_, b1_, b2_, eps_, wd_;
  long t_ = 0;
  ParamStore m_, v_;
};

double cosine_lr(const TrainConfig& cfg, long step, long total_steps);

// Datasets in raw time units. The model's scale is taken from `train`
// (pooled) and applied to `val`; an empty val set validates on train.
using EpochCallback = std::function<void(const EpochLog&)>;
TrainResult train(const TrainConfig& cfg, const Dataset& train, const Dataset& val, const EpochCallback& on_epoch = {});

// Warm start from `init`, keeping its time scale. The checkpoint's
// architecture must match cfg.model.
TrainResult finetune(const SurfModel& init, const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                     const EpochCallback& on_epoch = {});

// Raw dataset -> the model's normalized units.
Dataset to_model_units(const SurfModel& model, const Dataset& raw);

struct Corpus {
  std::string name;
  Dataset train, val, test;
};

struct LooResult {
  std::string held_out;
  EvalReport zero_shot;
  EvalReport untrained;  // same architecture and scale, initial parameters
  TrainResult trained;
};

LooResult leave_one_out(const std::vector<Corpus>& corpora, std::size_t held_out, const TrainConfig& cfg,
                        const EvalOptions& eval = {}, const EpochCallback& on_epoch = {});

}  // namespace surf
