// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "surf/cli.hpp"
#include "surf/gof.hpp"
#include "surf/objective.hpp"
#include "surf/sampler.hpp"
#include "surf/synthetic.hpp"
#include "surf/trainer.hpp"

namespace fs = std::filesystem;
using namespace surf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

int g_threads = 0;

std::vector<double> first_gaps(const EventSequence& s, std::size_t n) {
  auto tau = s.inter_arrivals();
  if (tau.size() < n) throw std::runtime_error("long-horizon sequence has too few events");
  tau.resize(n);
  return tau;
}

ModelConfig small_model(HeadKind kind, int K, int d, int layers, int heads) {
  ModelConfig c;
  c.encoder.num_types = K;
  c.encoder.d_hidden = d;
  c.encoder.num_layers = layers;
  c.encoder.num_heads = heads;
  c.head.kind = kind;
  return c;
}

TrainConfig train_cfg(const ModelConfig& m, int epochs, double lr, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.model = m;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.batch_size = 16;
  cfg.patience = 0;
  cfg.seed = seed;
  cfg.threads = g_threads;
  return cfg;
}

std::array<Dataset, 3> corpus(const std::string& name, std::uint64_t seed) {
  SyntheticSpec s = preset(name);
  s.seed = seed;
  return split(generate(s, g_threads), {0.8, 0.1, 0.1}, mix64(seed ^ hash_name("split")));
}

// ---- 1
Outcome trt_forward() {
  SyntheticSpec s = preset("spikes");
  Rng rng = substream(101, "acceptance/thinning");
  Dataset ds;
  ds.sequences.push_back(thinning_sample(s, 2000.0, rng));
  ds.sequences[0].events.resize(10000);
  ds.sequences[0].window = ds.sequences[0].events.back().t;
  const GofReport r = ks_exp1(rescale(s, ds));
  return {r.ks_D <= 0.02, fmt("KS D = %.4f over %zu rescaled gaps (<= 0.02)", r.ks_D, r.n)};
}

// ---- 2
Outcome trt_reverse() {
  const SyntheticSpec s = preset("spikes");
  Rng a = substream(102, "acceptance/thinning");
  const auto thin = first_gaps(thinning_sample(s, 2000.0, a), 10000);
  Rng b = substream(102, "acceptance/inversion");
  const TrueProcessModel truth(s);
  const SampleResult inv = sample_sequence(truth, 2000.0, b);
  const auto newton = first_gaps(inv.sequence, 10000);
  const double D = ks_two_sample(thin, newton);
  return {D <= 0.025, fmt("two-sample KS D = %.4f, Newton vs thinning, 10000 gaps each (<= 0.025)", D)};
}

// ---- 3
// A random positive MLP intensity softplus(w2 . tanh(pre + wt u) + b2) with
// fan-in scaled weights.
struct RandomMlp {
  ParamStore params;
  HeadConfig cfg;
  explicit RandomMlp(Rng& rng, int Q) {
    cfg.kind = HeadKind::glq;
    cfg.Q = Q;
    const std::size_t P = static_cast<std::size_t>(cfg.glq_hidden), d = 8;
    const double bound = std::sqrt(6.0 / static_cast<double>(1 + d + P));
    params["head.W"] = xavier_uniform(d, P, rng);
    params["head.b"] = uniform(1, P, -0.5, 0.5, rng);
    params["head.wt"] = uniform(1, P, -bound, bound, rng);
    params["head.W2"] = xavier_uniform(P, 1, rng);
    params["head.b2"] = uniform(1, 1, -1.0, 1.0, rng);
  }
};

Outcome glq_convergence() {
  Rng rng = substream(103, "acceptance/glq");
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    const RandomMlp mlp(rng, 8);
    ad::Matrix h(1, 8);
    for (double& x : h.data) x = g(rng);
    ad::Tape tape;
    const ParamVars vars = surf::bind(tape, mlp.params, false);
    const ad::Matrix raw = head_raw(vars, tape.constant(h)).value();
    const auto hz = make_hazard(mlp.cfg, mlp.params, raw.row_span(0));
    const auto& glq = dynamic_cast<const GLQHazard&>(*hz);
    double dt = u(rng);
    while (dt <= 0.0) dt = u(rng);
    const double q8 = glq.cumulative(dt), q64 = glq.cumulative_with(cached_gl_rule(64), dt);
    worst = std::max(worst, std::abs(q8 - q64) / std::max(1.0, q64));
  }

  // Gradients of sum Lambda - sum log lambda over 100 intervals, Q = 8 vs 64.
  const RandomMlp base(rng, 8);
  ad::Matrix H(100, 8);
  for (double& x : H.data) x = g(rng);
  std::vector<double> dt(100);
  for (double& x : dt) x = u(rng);
  const auto grads = [&](int Q) {
    HeadConfig cfg = base.cfg;
    cfg.Q = Q;
    ad::Tape tape;
    const ParamVars vars = surf::bind(tape, base.params, true);
    const ad::Var raw = head_raw(vars, tape.constant(H));
    tape.backward(ad::sub(ad::sum(cumulative(cfg, vars, raw, dt)), ad::sum(log_intensity(cfg, vars, raw, dt))));
    return gradients(tape, vars);
  };
  const ParamStore g8 = grads(8), g64 = grads(64);
  double gworst = 0.0;
  for (const auto& [name, m] : g64)
    for (std::size_t i = 0; i < m.size(); ++i)
      gworst = std::max(gworst, std::abs(param(g8, name).data[i] - m.data[i]) / std::max(1.0, std::abs(m.data[i])));
  return {worst <= 1e-9 && gworst <= 1e-8,
          fmt("max |L8 - L64|/max(1, L64) = %.2e (<= 1e-9); max gradient rel. diff = %.2e (<= 1e-8)", worst, gworst)};
}

// ---- 4
Outcome gradient_consistency() {
  Rng rng = substream(104, "acceptance/fd");
  std::normal_distribution<double> g(0.0, 1.5);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  double worst_lambda = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    std::vector<double> rm(8), rc(36);
    for (double& x : rm) x = g(rng);
    for (double& x : rc) x = g(rng);
    const MoEHazard moe = MoEHazard::from_raw(rm, 1e-4);
    const CSBHazard csb = CSBHazard::from_raw(rc, 1e-4);
    const double dt = u(rng), h = 1e-6;
    for (const IntervalHazard* hz : {static_cast<const IntervalHazard*>(&moe), static_cast<const IntervalHazard*>(&csb)}) {
      const double fd = (hz->cumulative(dt + h) - hz->cumulative(dt - h)) / (2.0 * h);
      worst_lambda = std::max(worst_lambda, std::abs(hz->intensity(dt) - fd) / std::max(1.0, hz->intensity(dt)));
    }
  }

  EventSequence seq;
  seq.events = {{0.12, 0}, {0.31, 1}, {0.55, 0}};
  seq.window = 0.8;
  const std::vector<BatchItem> batch = {{&seq, 0}};
  BatchOptions opt;
  opt.newton.tol = 1e-13;
  const LossWeights w;
  double worst_grad = 0.0;
  std::size_t checked = 0;
  for (HeadKind kind : {HeadKind::moe, HeadKind::csb, HeadKind::glq}) {
    const SurfModel model(small_model(kind, 2, 8, 2, 2), 7);
    const ParamStore an = total_loss_serial(model, batch, w, opt).grad;
    BatchOptions plain = opt;
    plain.gradients = false;
    for (const auto& [name, m] : model.params()) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double h = 1e-6;
        SurfModel p = model, q = model;
        p.mutable_params()[name].data[i] += h;
        q.mutable_params()[name].data[i] -= h;
        const double fd = (total_loss_serial(p, batch, w, plain).loss.total -
                           total_loss_serial(q, batch, w, plain).loss.total) /
                          (2.0 * h);
        const double a = param(an, name).data[i];
        worst_grad = std::max(worst_grad, std::abs(fd - a) / std::max(1.0, std::abs(a)));
        ++checked;
      }
    }
  }
  return {worst_lambda <= 1e-6 && worst_grad <= 1e-5,
          fmt("lambda vs dLambda/dt: %.2e (<= 1e-6); loss gradient vs central differences: %.2e over %zu "
              "coordinates, 3 heads (<= 1e-5)",
              worst_lambda, worst_grad, checked)};
}

// ---- 5
Outcome spike_recovery(SurfModel& out_model) {
  const auto parts = corpus("spikes", 105);
  TrainConfig cfg = train_cfg(small_model(HeadKind::moe, 1, 32, 2, 4), 60, 3e-3, 105);
  cfg.model.head.J = 4;
  const TrainResult r = train(cfg, parts[0], parts[1]);
  out_model = r.model;
  const EvalReport ev = evaluate(r.model, to_model_units(r.model, parts[2]), {.threads = g_threads});

  double n_train = 0.0, T_train = 0.0, T_test = 0.0;
  for (const auto& s : parts[0].sequences) n_train += static_cast<double>(s.size()), T_train += s.window;
  for (const auto& s : parts[2].sequences) T_test += s.window;
  const double rate = n_train / T_train, n_test = static_cast<double>(parts[2].num_events());
  const double poisson = (rate * T_test - n_test * std::log(rate)) / n_test;
  const double gain = poisson - ev.per_event_time_nll;
  return {!r.aborted && ev.gof.ks_D <= 0.10 && gain >= 0.3,
          fmt("test KS D = %.4f (<= 0.10); NLL/event %.4f vs Poisson MLE %.4f, gain %.3f nats (>= 0.3)", ev.gof.ks_D,
              ev.per_event_time_nll, poisson, gain)};
}

// ---- 6
Outcome expressiveness(std::vector<SurfModel>& out_models) {
  const auto parts = corpus("ramp", 106);
  double nll[3];
  int v = 0;
  for (HeadKind kind : {HeadKind::moe, HeadKind::csb, HeadKind::glq}) {
    const TrainConfig cfg = train_cfg(small_model(kind, 1, 16, 1, 2), 150, 1e-2, 106);
    const TrainResult r = train(cfg, parts[0], parts[1]);
    nll[v++] = evaluate(r.model, to_model_units(r.model, parts[2]), {.threads = g_threads}).per_event_time_nll;
    out_models.push_back(r.model);
  }

  Rng rng = substream(106, "acceptance/monotone");
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::size_t violations = 0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    std::vector<double> raw(8);
    for (double& x : raw) x = g(rng);
    const MoEHazard h = MoEHazard::from_raw(raw, d % 2 == 0 ? 0.0 : 1e-4);
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    if (h.intensity(b) > h.intensity(a)) ++violations;
  }
  const double gap_csb = nll[0] - nll[1], gap_glq = nll[0] - nll[2];
  return {gap_csb >= 0.1 && gap_glq >= 0.1 && violations == 0,
          fmt("time NLL/event MoE %.4f, CSB %.4f, GLQ %.4f; gaps %.3f, %.3f (>= 0.1); MoE monotonicity "
              "violations %zu/%d",
              nll[0], nll[1], nll[2], gap_csb, gap_glq, violations, draws)};
}

// ---- 7
Outcome floor_bias() {
  Rng rng = substream(107, "acceptance/floor");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.5);
  HeadConfig glq;
  glq.kind = HeadKind::glq;
  ParamStore gp;
  init_head(glq, 8, gp, rng);
  double worst_excess = -1e300, worst_diff = 0.0;
  for (int s = 0; s < 100; ++s) {
    const double T = 1000.0 * u(rng);
    std::vector<double> cuts = {0.0, T};
    for (int i = 0; i < 30; ++i) cuts.push_back(T * u(rng));
    std::sort(cuts.begin(), cuts.end());
    std::vector<double> rm(8), rc(36), rg(16);
    for (double& x : rm) x = g(rng);
    for (double& x : rc) x = g(rng);
    for (double& x : rg) x = g(rng);
    HeadConfig with = glq, without = glq;
    with.floor = 1e-4;
    without.floor = 0.0;
    double diff = 0.0;
    for (std::size_t i = 1; i < cuts.size(); ++i) {
      const double dt = cuts[i] - cuts[i - 1];
      diff += MoEHazard::from_raw(rm, 1e-4).cumulative(dt) - MoEHazard::from_raw(rm, 0.0).cumulative(dt);
      diff += CSBHazard::from_raw(rc, 1e-4).cumulative(dt) - CSBHazard::from_raw(rc, 0.0).cumulative(dt);
      diff += make_hazard(with, gp, rg)->cumulative(dt) - make_hazard(without, gp, rg)->cumulative(dt);
    }
    diff /= 3.0;  // mean over the three heads, each bounded by T * floor
    worst_excess = std::max(worst_excess, diff - (T * 1e-4 + 1e-12));
    worst_diff = std::max(worst_diff, diff);
  }
  return {worst_excess <= 0.0,
          fmt("max compensator shift %.3e nats (<= T * 1e-4 <= 0.1); worst margin %.2e", worst_diff, worst_excess)};
}

// ---- 8
Outcome newton_budget(const std::vector<const SurfModel*>& models, const std::vector<Dataset>& data) {
  Rng rng = substream(108, "acceptance/census");
  std::exponential_distribution<double> e(1.0);
  std::vector<IntervalState> states;
  std::vector<const IntervalHazard*> hz;
  std::vector<double> z;
  const std::size_t total = 10000;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const Dataset ds = to_model_units(*models[m], data[m]);
    std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
    const std::size_t count = total / models.size() + (m < total % models.size() ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) {
      const EventSequence& s = ds.sequences[pick(rng)];
      std::uniform_int_distribution<std::size_t> pos(0, s.size());
      const std::size_t p = pos(rng);
      states.push_back(models[m]->next(std::span(s.events).first(p)));
      z.push_back(e(rng));
    }
  }
  for (const auto& s : states) hz.push_back(s.hazard.get());
  const InversionCensus c = inversion_census(hz, z, {}, g_threads);
  const double frac = static_cast<double>(c.within_budget) / static_cast<double>(c.total);
  return {frac >= 0.99 && c.converged == c.total && c.bracket_violations == 0,
          fmt("%zu/%zu within 8 Newton iterations (%.2f%%, >= 99%%); %zu/%zu converged; max iterations %d; "
              "bracket violations %zu",
              c.within_budget, c.total, 100.0 * frac, c.converged, c.total, c.max_iterations, c.bracket_violations)};
}

// ---- 9
Outcome jacobian_diagonality() {
  Rng rng = substream(109, "acceptance/jacobian");
  std::exponential_distribution<double> e(5.0);
  double worst = 0.0, min_diag = 1e300;
  for (HeadKind kind : {HeadKind::moe, HeadKind::csb, HeadKind::glq}) {
    const SurfModel model(small_model(kind, 1, 8, 1, 2), 9);
    for (int trial = 0; trial < 20; ++trial) {
      EventSequence base;
      double t = 0.0;
      for (int i = 0; i < 5; ++i) base.events.push_back({t += e(rng), 0});
      base.window = t + e(rng);
      const auto states = model.all_states(base);  // frozen encodings
      const double h = 0x1p-14;  // dyadic, so shifted times stay exact longer
      for (std::size_t j = 0; j < 5; ++j) {
        EventSequence plus = base, minus = base;
        for (std::size_t i = j; i < 5; ++i) plus.events[i].t += h, minus.events[i].t -= h;
        const auto dp = surf_loss(plus, states).residuals.dz, dm = surf_loss(minus, states).residuals.dz;
        for (std::size_t i = 0; i < 5; ++i) {
          const double d = (dp[i] - dm[i]) / (2.0 * h);
          if (i == j)
            min_diag = std::min(min_diag, std::abs(d));
          else
            worst = std::max(worst, std::abs(d));
        }
      }
    }
  }
  return {worst <= 1e-10 && min_diag > 0.0,
          fmt("max |dz_i/dtau_j|, i != j: %.2e (<= 1e-10); min diagonal %.3e; 60 sequences, 3 heads", worst,
              min_diag)};
}

// ---- 10
Outcome transfer() {
  std::vector<Corpus> corpora;
  for (const std::string name : {"transfer-a", "transfer-b", "transfer-c"}) {
    const auto parts = corpus(name, 110);
    corpora.push_back({name, parts[0], parts[1], parts[2]});
  }
  const TrainConfig cfg = train_cfg(small_model(HeadKind::moe, 2, 16, 1, 2), 20, 3e-3, 110);
  const LooResult r = leave_one_out(corpora, 2, cfg, {.threads = g_threads});
  const double z = r.zero_shot.gof.ks_D, u = r.untrained.gof.ks_D;
  return {!r.trained.aborted && z < u && u - z >= 0.1,
          fmt("held-out %s: zero-shot KS D = %.4f vs untrained %.4f, improvement %.3f (>= 0.1)", r.held_out.c_str(), z,
              u, u - z)};
}

// ---- 11
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Epoch logs carry wall-clock time; everything else must match bit for bit.
std::string strip_wall(const std::string& log) {
  std::stringstream in(log);
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_seconds");
    out += j.dump() + "\n";
  }
  return out;
}

Outcome pipeline(const fs::path& work) {
  std::ostringstream sink, errs;
  const auto cli = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "surf");
    const int rc = surf::run(args, sink, errs);
    if (rc != 0) throw std::runtime_error("surf " + args[1] + " exited " + std::to_string(rc) + ": " + errs.str());
  };
  const auto once = [&](const fs::path& dir) {
    const std::string d = dir.string();
    cli({"gen", "--preset", "spikes", "--trials", "40", "--seed", "11", "--threads", "1", "--out", d + "/data", "--force"});
    cli({"train", "--data", d + "/data/train.jsonl", "--val", d + "/data/val.jsonl", "--d-hidden", "8", "--layers", "1",
         "--heads", "2", "--epochs", "3", "--batch-size", "8", "--lr", "3e-3", "--seed", "11", "--threads", "1", "--out",
         d + "/run", "--force"});
    cli({"eval", "--ckpt", d + "/run/model.json", "--data", d + "/data/test.jsonl", "--horizons", "1..3", "--threads",
         "1", "--out", d + "/eval", "--force"});
    cli({"gof", "--ckpt", d + "/run/model.json", "--data", d + "/data/test.jsonl", "--threads", "1", "--out",
         d + "/gof", "--force"});
    cli({"sample", "--ckpt", d + "/run/model.json", "--T", "6", "--n", "5", "--seed", "11", "--threads", "1", "--out",
         d + "/sample", "--force"});
  };
  once(work / "a");
  once(work / "b");
  const std::vector<std::string> files = {"data/all.jsonl",   "data/train.jsonl",     "data/manifest.json",
                                          "run/model.json",   "run/summary.json",     "eval/eval.json",
                                          "eval/calibration.csv", "gof/gof.json",     "sample/samples.jsonl"};
  std::size_t identical = 0;
  std::string mismatch;
  for (const auto& f : files) {
    if (slurp(work / "a" / f) == slurp(work / "b" / f))
      ++identical;
    else
      mismatch += " " + f;
  }
  const bool logs = strip_wall(slurp(work / "a/run/train_log.jsonl")) == strip_wall(slurp(work / "b/run/train_log.jsonl"));
  return {identical == files.size() && logs,
          fmt("gen -> train -> eval -> gof -> sample exit 0; %zu/%zu artifacts bit-identical across --threads 1 "
              "reruns, training log %s%s",
              identical, files.size(), logs ? "identical" : "differs", mismatch.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs every acceptance criterion and prints one PASS/FAIL line each.", "surf_acceptance"};
  std::string work = (fs::temp_directory_path() / "surf_acceptance").string();
  std::vector<int> only;
  app.add_option("--workdir", work, "Scratch directory for the pipeline run")->capture_default_str();
  app.add_option("--threads", g_threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--only", only, "Run only these criterion numbers");
  CLI11_PARSE(app, argc, argv);

  SurfModel spike_model(small_model(HeadKind::moe, 1, 8, 1, 2), 0);
  std::vector<SurfModel> ramp_models;
  const auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "trt-forward", 30, trt_forward},
      {2, "trt-reverse", 60, trt_reverse},
      {3, "glq-convergence", 60, glq_convergence},
      {4, "gradient-consistency", 30, gradient_consistency},
      {5, "spike-recovery", 0, [&] { return spike_recovery(spike_model); }},
      {6, "expressiveness", 0, [&] { return expressiveness(ramp_models); }},
      {7, "floor-bias", 0, floor_bias},
      {8, "newton-budget", 0,
       [&] {
         // The three ramp variants, on the ramp test split.
         if (ramp_models.empty()) expressiveness(ramp_models);
         const auto parts = corpus("ramp", 106);
         return newton_budget({&ramp_models[0], &ramp_models[1], &ramp_models[2]}, {parts[2], parts[2], parts[2]});
       }},
      {9, "jacobian-diagonality", 0, jacobian_diagonality},
      {10, "transfer", 0, transfer},
      {11, "pipeline", 0, [&] { return pipeline(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!want(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && s > c.limit_s) {
      o.pass = false;
      o.detail += fmt("; runtime over %.0f s", c.limit_s);
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << fmt(" %2d %-21s ", c.id, c.name) << o.detail << fmt(" [%.1f s]", s)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
