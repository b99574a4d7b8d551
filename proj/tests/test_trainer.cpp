#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "surf/errors.hpp"
#include "surf/synthetic.hpp"
#include "surf/trainer.hpp"

using namespace surf;

namespace {

TrainConfig small_config(HeadKind kind = HeadKind::moe, int K = 1) {
  TrainConfig c;
  c.model.encoder.num_types = K;
  c.model.encoder.d_hidden = 8;
  c.model.encoder.num_layers = 1;
  c.model.encoder.num_heads = 2;
  c.model.head.kind = kind;
  c.lr = 1e-2;
  c.batch_size = 16;
  c.epochs = 5;
  c.seed = 1;
  return c;
}

Dataset family(const std::string& preset_name, std::size_t trials, std::uint64_t seed) {
  SyntheticSpec s = preset(preset_name);
  s.trials = trials;
  s.seed = seed;
  return generate(s);
}

SyntheticSpec homogeneous(double rate, double T, std::size_t trials, std::uint64_t seed) {
  SyntheticSpec s;
  s.name = "h" + std::to_string(rate);
  s.kind = SyntheticKind::homogeneous;
  s.rate = rate;
  s.T = T;
  s.trials = trials;
  s.seed = seed;
  return s;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  for (const auto& [name, m] : a)
    if (m.data != param(b, name).data) return false;
  return a.size() == b.size();
}

}  // namespace

TEST_CASE("one epoch on the spikes preset") {
  const Dataset ds = family("spikes", 200, 1);
  const auto parts = split(ds, {0.8, 0.1, 0.1}, 2);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  int calls = 0;
  const TrainResult r = train(cfg, parts[0], parts[1], [&](const EpochLog&) { ++calls; });
  CHECK(r.log.size() == 1);
  CHECK(calls == 1);
  CHECK(r.log[0].train.sequences == parts[0].size());
  CHECK(std::isfinite(r.log[0].val.total));
  CHECK(r.model.t_scale() == doctest::Approx(6.0).epsilon(1e-6));
  const auto j = to_json(r.log[0]);
  CHECK(j.contains("grad_norm"));
  CHECK(j.contains("wall_seconds"));
  CHECK(j["train"].contains("surf_nll"));
}

TEST_CASE("MoE with one component recovers a homogeneous rate") {
  const Dataset ds = generate(homogeneous(6.59375, 6.0, 120, 3));
  TrainConfig cfg = small_config();
  cfg.model.head.J = 1;
  cfg.beta_type = 0.0;
  cfg.beta_fcst = 0.0;
  cfg.epochs = 200;
  cfg.batch_size = 40;
  cfg.lr = 2e-2;
  cfg.patience = 0;
  const TrainResult r = train(cfg, ds, Dataset{});
  // Median-implied rate over the observed prefixes, in original units.
  const Dataset dn = to_model_units(r.model, ds);
  double tau_sum = 0.0;
  std::size_t count = 0;
  for (const auto& q : dn.sequences) {
    const auto states = r.model.all_states(q);
    for (std::size_t i = 0; i < q.size(); ++i) {
      tau_sum += predict_from_state(states[i]).tau * r.model.t_scale();
      ++count;
    }
  }
  const double rate = std::numbers::ln2 / (tau_sum / static_cast<double>(count));
  MESSAGE("median-implied rate ", rate, " after ", r.log.size(), " epochs");
  CHECK(std::abs(rate - 6.59375) <= 0.1 * 6.59375);
}

TEST_CASE("training is deterministic") {
  const Dataset ds = family("hawkes", 30, 4);
  TrainConfig cfg = small_config(HeadKind::glq);
  cfg.epochs = 2;
  const TrainResult a = train(cfg, ds, Dataset{});
  cfg.threads = 3;
  const TrainResult b = train(cfg, ds, Dataset{});
  CHECK(a.model.to_json().dump() == b.model.to_json().dump());
}

TEST_CASE("finetune: identity, staged weights, and architecture checks") {
  const Dataset ds = family("transfer-a", 30, 5);
  TrainConfig cfg = small_config(HeadKind::csb, 2);
  cfg.epochs = 2;
  const TrainResult base = train(cfg, ds, Dataset{});

  TrainConfig ft = cfg;
  ft.epochs = 0;
  const TrainResult same = finetune(base.model, ft, ds, Dataset{});
  CHECK(same.log.empty());
  CHECK(same_params(same.model.params(), base.model.params()));
  CHECK(same.model.t_scale() == base.model.t_scale());

  ft.epochs = 2;
  ft.schedule = Schedule::staged;
  const TrainResult staged = finetune(base.model, ft, ds, Dataset{});
  REQUIRE(!staged.log.empty());
  for (const auto& e : staged.log) {
    CHECK(e.weights.surf == 0.0);
    CHECK(e.val.total == doctest::Approx(ft.beta_type * e.val.type_ce + ft.beta_fcst * e.val.fcst_rmse).epsilon(1e-12));
  }
  CHECK(staged.model.t_scale() == base.model.t_scale());
  CHECK(schedule_weights(ft, false).surf == 1.0);
  ft.schedule = Schedule::equal;
  CHECK(schedule_weights(ft, true).type == 1.0);

  TrainConfig other = cfg;
  other.model.head.kind = HeadKind::moe;
  CHECK_THROWS_AS(finetune(base.model, other, ds, Dataset{}), ValidationError);
}

TEST_CASE("finetuning on a shifted corpus improves its held-out NLL") {
  const Dataset src = generate(homogeneous(2.0, 10.0, 60, 6));
  const Dataset dst = generate(homogeneous(12.0, 10.0, 80, 7));
  const auto parts = split(dst, {0.5, 0.1, 0.4}, 8);
  TrainConfig cfg = small_config();
  cfg.epochs = 15;
  const TrainResult joint = train(cfg, src, Dataset{});
  const double before = evaluate(joint.model, to_model_units(joint.model, parts[2])).per_event_nll;
  const TrainResult tuned = finetune(joint.model, cfg, parts[0], Dataset{});
  const double after = evaluate(tuned.model, to_model_units(tuned.model, parts[2])).per_event_nll;
  MESSAGE("held-out NLL before ", before, " after ", after);
  CHECK(after < before);
}

TEST_CASE("leave-one-out") {
  std::vector<Corpus> corpora;
  for (const std::string name : {"transfer-a", "transfer-b", "transfer-c"}) {
    SyntheticSpec s = preset(name);
    s.trials = 60;
    s.seed = 9;
    const auto parts = split(generate(s), {0.7, 0.1, 0.2}, 10);
    corpora.push_back({name, parts[0], parts[1], parts[2]});
  }
  TrainConfig cfg = small_config(HeadKind::moe, 2);
  cfg.epochs = 8;
  const LooResult r = leave_one_out(corpora, 2, cfg);
  MESSAGE("zero-shot D ", r.zero_shot.gof.ks_D, " untrained D ", r.untrained.gof.ks_D);
  CHECK(r.held_out == "transfer-c");
  CHECK(r.zero_shot.gof.ks_D < r.untrained.gof.ks_D);
  CHECK(r.zero_shot.events == r.untrained.events);
  CHECK_THROWS_AS(leave_one_out({corpora[0]}, 0, cfg), ValidationError);
  CHECK_THROWS_AS(leave_one_out(corpora, 3, cfg), ValidationError);
}

TEST_CASE("checkpoint round trip reproduces evaluation") {
  const Dataset ds = family("spikes", 20, 11);
  TrainConfig cfg = small_config(HeadKind::glq);
  cfg.epochs = 1;
  const TrainResult r = train(cfg, ds, Dataset{});
  const auto path = std::filesystem::temp_directory_path() / "surf_trainer_ckpt.json";
  r.model.save(path);
  const SurfModel back = SurfModel::load(path);
  std::filesystem::remove(path);
  EvalOptions opt;
  opt.horizons = {1, 2};
  const EvalReport a = evaluate(r.model, to_model_units(r.model, ds), opt);
  const EvalReport b = evaluate(back, to_model_units(back, ds), opt);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.residuals == b.residuals);
}

TEST_CASE("optimizer step with zero gradient is a no-op") {
  for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::momentum}) {
    TrainConfig cfg = small_config();
    cfg.optimizer = kind;
    cfg.weight_decay = 0.0;
    SurfModel m(cfg.model, 3);
    ParamStore p = m.params();
    Optimizer opt(cfg, p);
    for (int i = 0; i < 3; ++i) opt.step(p, zeros_like(p), 0.1);
    CHECK(same_params(p, m.params()));
  }
}

TEST_CASE("joint loss is the mean of per-corpus losses") {
  const Dataset a = family("transfer-a", 6, 12), b = family("transfer-b", 6, 13);
  TrainConfig cfg = small_config(HeadKind::moe, 2);
  SurfModel m(cfg.model, 4);
  const Dataset parts[] = {a, b};
  const Dataset joint = concat(parts);
  const LossWeights w;
  const double la = total_loss(m, batch_of(a), w).loss.total;
  const double lb = total_loss(m, batch_of(b), w).loss.total;
  const double lj = total_loss(m, batch_of(joint), w).loss.total;
  CHECK(lj == doctest::Approx(0.5 * (la + lb)).epsilon(1e-13));
}

TEST_CASE("divergent training aborts and keeps the best parameters") {
  const Dataset ds = family("spikes", 20, 14);
  TrainConfig cfg = small_config();
  cfg.lr = 1e6;
  cfg.clip_norm = 0.0;
  cfg.epochs = 20;
  cfg.patience = 0;
  const TrainResult r = train(cfg, ds, Dataset{});
  MESSAGE("aborted ", r.aborted, ": ", r.abort_reason);
  for (const auto& [name, p] : r.model.params())
    for (double v : p.data) CHECK(std::isfinite(v));
  if (r.aborted) CHECK(!r.abort_reason.empty());
}

TEST_CASE("train config JSON and validation") {
  TrainConfig c = small_config(HeadKind::glq, 3);
  c.schedule = Schedule::staged;
  c.corpora = {"a.jsonl", "b.jsonl"};
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  const TrainConfig flat = train_config_from_json({{"variant", "csb"}, {"d_hidden", 16}, {"lr", 0.5}});
  CHECK(flat.model.head.kind == HeadKind::csb);
  CHECK(flat.model.encoder.d_hidden == 16);
  CHECK(flat.lr == 0.5);
  CHECK_THROWS_AS(train_config_from_json({{"lr", -1.0}}), ValidationError);
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ValidationError);
  CHECK_THROWS_AS(train_config_from_json({{"schedule", "later"}}), ValidationError);
  CHECK_THROWS_AS(train_config_from_json({{"lr", "fast"}}), ValidationError);
  Dataset two = family("transfer-a", 3, 1);
  CHECK_THROWS_AS(train(small_config(), two, Dataset{}), ValidationError);
}
