#include "surf/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "surf/errors.hpp"
#include "surf/gof.hpp"
#include "surf/sampler.hpp"
#include "surf/synthetic.hpp"
#include "surf/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace surf {
namespace {

constexpr const char* kModule = "cli";

// Expands "--config file.json" into flags. The file holds a flat object such
// as {"lr": 0.01, "data": ["a", "b"]}; flags given on the command line win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw ValidationError(kModule, "cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(kModule, path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError(kModule, path + " must hold a JSON object");
  const auto given = [&](const std::string& flag) {
    for (const auto& a : out)
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  const auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back(flag);
        out.push_back(text(v));
      }
    } else {
      out.push_back(flag);
      out.push_back(text(value));
    }
  }
  return out;
}

struct Common {
  std::uint64_t seed = 0;
  int threads = 0;
  bool force = false;
  std::string out;
};

struct ModelFlags {
  std::string variant = "moe";
  int num_types = 0;  // 0: from the data
  int d_hidden = 32, layers = 2, heads = 4;
  double dropout = 0.0;
  int J = 4, M = 12, Q = 8, glq_hidden = 16;
  double floor = 1e-4;
  bool learn_floor = false;
  std::string scale_mode = "global";
};

struct TrainFlags {
  double lr = 3e-4, lr_min_ratio = 0.01;
  std::size_t batch_size = 256;
  int epochs = 50, patience = 10;
  double beta_type = 0.74, beta_fcst = 4.8;
  std::string schedule = "hybrid", optimizer = "adam";
  double weight_decay = 1e-5, clip_norm = 10.0, momentum = 0.9;
  std::vector<std::string> data, val;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

void add_common(CLI::App* sub, Common& c, bool out_required, const std::string& out_help) {
  sub->add_option("--seed", c.seed, "Seed for all random streams");
  sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
  auto* o = sub->add_option("--out", c.out, out_help);
  if (out_required) o->required();
  sub->add_flag("--force", c.force, "Overwrite an existing output directory");
}

void add_model_flags(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--variant", m.variant, "Intensity head")->check(CLI::IsMember({"moe", "csb", "glq"}));
  sub->add_option("--num-types", m.num_types, "Mark types K (0 = from the data)");
  sub->add_option("--d-hidden", m.d_hidden, "Embedding width d (attention runs at 2d)");
  sub->add_option("--layers", m.layers, "Transformer layers");
  sub->add_option("--heads", m.heads, "Attention heads");
  sub->add_option("--dropout", m.dropout, "Dropout rate");
  sub->add_option("--J", m.J, "MoE components");
  sub->add_option("--M", m.M, "CSB basis functions");
  sub->add_option("--Q", m.Q, "GLQ nodes");
  sub->add_option("--glq-hidden", m.glq_hidden, "GLQ MLP width");
  sub->add_option("--floor", m.floor, "Intensity floor");
  sub->add_flag("--learn-floor", m.learn_floor, "Learn the floor (lower-bounded)");
  sub->add_option("--scale-mode", m.scale_mode, "Time normalization")->check(CLI::IsMember({"global", "per_sequence"}));
}

void add_train_flags(CLI::App* sub, TrainFlags& t) {
  sub->add_option("--lr", t.lr, "Peak learning rate");
  sub->add_option("--lr-min-ratio", t.lr_min_ratio, "Final cosine learning rate as a fraction of --lr");
  sub->add_option("--batch-size", t.batch_size, "Sequences per step");
  sub->add_option("--epochs", t.epochs, "Maximum epochs");
  sub->add_option("--patience", t.patience, "Early-stopping patience in epochs (0 = off)");
  sub->add_option("--beta-type", t.beta_type, "Weight of the mark cross-entropy");
  sub->add_option("--beta-fcst", t.beta_fcst, "Weight of the forecast term");
  sub->add_option("--schedule", t.schedule, "Loss schedule")->check(CLI::IsMember({"hybrid", "staged", "equal"}));
  sub->add_option("--optimizer", t.optimizer, "Optimizer")->check(CLI::IsMember({"adam", "momentum"}));
  sub->add_option("--momentum", t.momentum, "Momentum coefficient (momentum optimizer)");
  sub->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay");
  sub->add_option("--clip-norm", t.clip_norm, "Global gradient-norm clip (0 = off)");
}

ModelConfig model_config(const ModelFlags& m, int data_types) {
  ModelConfig c;
  c.encoder.num_types = m.num_types > 0 ? m.num_types : std::max(1, data_types);
  c.encoder.d_hidden = m.d_hidden;
  c.encoder.num_layers = m.layers;
  c.encoder.num_heads = m.heads;
  c.encoder.dropout = m.dropout;
  c.head.kind = parse_head_kind(m.variant);
  c.head.J = m.J;
  c.head.M = m.M;
  c.head.Q = m.Q;
  c.head.glq_hidden = m.glq_hidden;
  c.head.floor = m.floor;
  c.head.learn_floor = m.learn_floor;
  c.scale_mode = m.scale_mode == "global" ? ScaleMode::global : ScaleMode::per_sequence;
  c.validate();
  return c;
}

TrainConfig train_config(const TrainFlags& t, const ModelConfig& model, const Common& c) {
  TrainConfig cfg;
  cfg.model = model;
  cfg.lr = t.lr;
  cfg.lr_min_ratio = t.lr_min_ratio;
  cfg.batch_size = t.batch_size;
  cfg.epochs = t.epochs;
  cfg.patience = t.patience;
  cfg.beta_type = t.beta_type;
  cfg.beta_fcst = t.beta_fcst;
  cfg.schedule = parse_schedule(t.schedule);
  cfg.optimizer = parse_optimizer(t.optimizer);
  cfg.momentum = t.momentum;
  cfg.weight_decay = t.weight_decay;
  cfg.clip_norm = t.clip_norm;
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  cfg.corpora = t.data;
  cfg.val_corpora = t.val;
  cfg.validate();
  return cfg;
}

// Refuses to reuse a non-empty directory unless --force.
void prepare_out_dir(const Common& c) {
  const fs::path dir(c.out);
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ValidationError(kModule, c.out + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!c.force) throw ValidationError(kModule, "output directory " + c.out + " is not empty (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error(kModule, "cannot write " + p.string());
  out << j.dump(2) << '\n';
}

void write_run(const Common& c, const std::string& command, const std::vector<std::string>& args, const json& config,
               const std::vector<std::string>& artifacts) {
  const std::string canon = config.dump();
  write_json(fs::path(c.out) / "run.json", {{"command", command},
                                            {"args", args},
                                            {"config", config},
                                            {"config_hash", hex64(mix64(hash_name(canon)))},
                                            {"seed", c.seed},
                                            {"threads", c.threads},
                                            {"artifacts", artifacts}});
}

Dataset load_all(const std::vector<std::string>& paths) {
  std::vector<Dataset> parts;
  for (const auto& p : paths) parts.push_back(load_dataset(p));
  return concat(parts);
}

std::vector<int> parse_horizons(const std::string& s) {
  std::vector<int> h;
  if (s.empty()) return h;
  std::stringstream ss(s);
  std::string tok;
  try {
    while (std::getline(ss, tok, ',')) {
      const auto dots = tok.find("..");
      if (dots == std::string::npos) {
        h.push_back(std::stoi(tok));
      } else {
        const int a = std::stoi(tok.substr(0, dots)), b = std::stoi(tok.substr(dots + 2));
        if (a > b) throw ValidationError(kModule, "empty horizon range " + tok);
        for (int i = a; i <= b; ++i) h.push_back(i);
      }
    }
  } catch (const std::logic_error&) {
    throw ValidationError(kModule, "bad horizon list '" + s + "' (use e.g. 1..10 or 1,2,5)");
  }
  for (int v : h)
    if (v < 1) throw ValidationError(kModule, "horizons must be >= 1");
  return h;
}

void write_log(const fs::path& p, const std::vector<EpochLog>& log) {
  std::ofstream out(p);
  if (!out) throw Error(kModule, "cannot write " + p.string());
  for (const auto& e : log) out << to_json(e).dump() << '\n';
}

json train_summary(const TrainResult& r) {
  return {{"epochs_run", r.log.size()},
          {"best_epoch", r.best_epoch},
          {"best_val_total", r.best_val},
          {"aborted", r.aborted},
          {"abort_reason", r.abort_reason}};
}

// Writes checkpoint, log and summary; an aborted run still keeps its best
// parameters and then reports failure.
int finish_training(const Common& c, const std::string& command, const std::vector<std::string>& args,
                    const TrainConfig& cfg, const TrainResult& r, std::ostream& out, std::ostream& err) {
  const fs::path dir(c.out);
  r.model.save(dir / "model.json");
  write_log(dir / "train_log.jsonl", r.log);
  write_json(dir / "summary.json", train_summary(r));
  write_run(c, command, args, to_json(cfg), {"model.json", "train_log.jsonl", "summary.json"});
  out << command << ": " << r.log.size() << " epochs, best epoch " << r.best_epoch << ", best val loss " << r.best_val
      << " -> " << (dir / "model.json").string() << '\n';
  if (r.aborted) {
    err << "error: " << r.abort_reason << " (best checkpoint kept)\n";
    return 2;
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Survival-flow temporal point processes: generate, train, evaluate and sample.", "surf"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  const auto with_config = [&](CLI::App* sub) {
    sub->option_defaults()->always_capture_default();
    sub->add_option("--config", "JSON file of flag values (explicit flags win)");
  };

  // gen
  Common gen_c;
  std::string gen_preset = "spikes", gen_spec;
  std::size_t gen_trials = 0;
  double gen_T = 0.0;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus (all/train/val/test.jsonl + manifest.json)");
  with_config(gen);
  gen->add_option("--preset", gen_preset, "Preset: spikes, homogeneous, hawkes, ramp, transfer-a/b/c, transfer");
  gen->add_option("--spec", gen_spec, "Process spec JSON file (overrides --preset)");
  gen->add_option("--trials", gen_trials, "Sequences per family (0 = preset value)");
  gen->add_option("--T", gen_T, "Window length (0 = preset value)");
  add_common(gen, gen_c, true, "Output directory");

  // train
  Common tr_c;
  ModelFlags tr_m;
  TrainFlags tr_t;
  auto* tr = app.add_subcommand("train", "Train a model; writes model.json, train_log.jsonl, summary.json");
  with_config(tr);
  tr->add_option("--data", tr_t.data, "Training JSON-lines files (several = joint training)")->required();
  tr->add_option("--val", tr_t.val, "Validation files (default: validate on training data)");
  add_model_flags(tr, tr_m);
  add_train_flags(tr, tr_t);
  add_common(tr, tr_c, true, "Output directory");

  // finetune
  Common ft_c;
  TrainFlags ft_t;
  std::string ft_ckpt;
  auto* ft = app.add_subcommand("finetune", "Warm-start training of a checkpoint on one corpus");
  with_config(ft);
  ft->add_option("--ckpt", ft_ckpt, "Checkpoint to start from")->required();
  ft->add_option("--data", ft_t.data, "Training JSON-lines files")->required();
  ft->add_option("--val", ft_t.val, "Validation files");
  add_train_flags(ft, ft_t);
  add_common(ft, ft_c, true, "Output directory");

  // eval
  Common ev_c;
  std::string ev_ckpt, ev_data, ev_horizons;
  std::size_t ev_stride = 1;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; writes eval.json and calibration.csv");
  with_config(ev);
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "JSON-lines file in original time units")->required();
  ev->add_option("--horizons", ev_horizons, "Rollout horizons, e.g. 1..10 or 1,2,5 (empty = none)");
  ev->add_option("--horizon-stride", ev_stride, "Roll out from every n-th prefix");
  add_common(ev, ev_c, false, "Output directory (default: print JSON)");

  // gof
  Common gf_c;
  std::string gf_ckpt, gf_data, gf_truth;
  auto* gf = app.add_subcommand("gof", "Time-rescaling KS test; writes gof.json and calibration.csv");
  with_config(gf);
  gf->add_option("--ckpt", gf_ckpt, "Checkpoint");
  gf->add_option("--truth", gf_truth, "Use a ground-truth process instead: preset name or spec JSON file");
  gf->add_option("--data", gf_data, "JSON-lines file in original time units")->required();
  add_common(gf, gf_c, false, "Output directory (default: print JSON)");

  // sample
  Common sm_c;
  std::string sm_ckpt;
  double sm_T = 0.0;
  std::size_t sm_n = 1, sm_max = 100000;
  auto* sm = app.add_subcommand("sample", "Sample sequences from a checkpoint by Newton inversion");
  with_config(sm);
  sm->add_option("--ckpt", sm_ckpt, "Checkpoint")->required();
  sm->add_option("--T", sm_T, "Window length in original time units")->required();
  sm->add_option("--n", sm_n, "Number of sequences");
  sm->add_option("--max-events", sm_max, "Events per sequence before truncation");
  add_common(sm, sm_c, false, "Output directory (default: JSON lines on stdout)");

  // loo
  Common lo_c;
  ModelFlags lo_m;
  TrainFlags lo_t;
  std::vector<std::string> lo_dirs;
  std::size_t lo_held = 0;
  std::string lo_horizons;
  auto* lo = app.add_subcommand("loo", "Leave-one-out: train on all corpora but one, evaluate zero-shot on it");
  with_config(lo);
  lo->add_option("--corpora", lo_dirs, "Corpus directories with train/val/test.jsonl (from gen)")->required();
  lo->add_option("--held-out", lo_held, "Index of the held-out corpus");
  lo->add_option("--horizons", lo_horizons, "Rollout horizons for the held-out report");
  add_model_flags(lo, lo_m);
  add_train_flags(lo, lo_t);
  add_common(lo, lo_c, true, "Output directory");

  try {
    std::vector<std::string> argv_rev = expand_config(args);
    std::reverse(argv_rev.begin(), argv_rev.end());
    if (!argv_rev.empty()) argv_rev.pop_back();  // program name
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    // --help on a subcommand arrives here too.
    if (e.get_exit_code() == 0) {
      for (CLI::App* sub : app.get_subcommands()) out << sub->help();
      if (app.get_subcommands().empty()) out << app.help();
      return 0;
    }
    err << "error: cli: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  const std::vector<std::string> cmd_args(args.begin() + (args.empty() ? 0 : 1), args.end());

  try {
    if (gen->parsed()) {
      prepare_out_dir(gen_c);
      std::vector<SyntheticSpec> specs;
      if (!gen_spec.empty()) {
        std::ifstream in(gen_spec);
        if (!in) throw ValidationError(kModule, "cannot open " + gen_spec);
        json j;
        try {
          j = json::parse(in);
        } catch (const json::exception& e) {
          throw ValidationError(kModule, gen_spec + ": " + e.what());
        }
        specs.push_back(synthetic_spec_from_json(j));
      } else {
        specs = preset_group(gen_preset);
      }
      json cfg = json::array();
      std::vector<std::string> artifacts;
      for (auto& s : specs) {
        s.seed = gen_c.seed;
        if (gen_trials > 0) s.trials = gen_trials;
        if (gen_T > 0.0) s.T = gen_T;
        s.validate();
        const fs::path dir = specs.size() == 1 ? fs::path(gen_c.out) : fs::path(gen_c.out) / s.name;
        make_corpus(s, dir, {0.8, 0.1, 0.1}, gen_c.threads);
        cfg.push_back(to_json(s));
        const std::string rel = specs.size() == 1 ? "" : s.name + "/";
        for (const char* f : {"all.jsonl", "train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"})
          artifacts.push_back(rel + f);
        out << "gen: " << s.name << " (" << to_string(s.kind) << "), " << s.trials << " sequences, T = " << s.T
            << " -> " << dir.string() << '\n';
      }
      write_run(gen_c, "gen", cmd_args, cfg, artifacts);
      return 0;
    }

    if (tr->parsed()) {
      const Dataset train_raw = load_all(tr_t.data);
      const Dataset val_raw = load_all(tr_t.val);
      const TrainConfig cfg = train_config(tr_t, model_config(tr_m, std::max(train_raw.num_types, val_raw.num_types)), tr_c);
      prepare_out_dir(tr_c);
      const TrainResult r = train(cfg, train_raw, val_raw, [&](const EpochLog& e) {
        out << "epoch " << e.epoch << " train " << e.train.total << " val " << e.val.total << (e.improved ? " *" : "")
            << '\n';
      });
      return finish_training(tr_c, "train", cmd_args, cfg, r, out, err);
    }

    if (ft->parsed()) {
      const SurfModel init = SurfModel::load(ft_ckpt);
      const Dataset train_raw = load_all(ft_t.data);
      const Dataset val_raw = load_all(ft_t.val);
      const TrainConfig cfg = train_config(ft_t, init.config(), ft_c);
      prepare_out_dir(ft_c);
      const TrainResult r = finetune(init, cfg, train_raw, val_raw, [&](const EpochLog& e) {
        out << "epoch " << e.epoch << " train " << e.train.total << " val " << e.val.total << (e.improved ? " *" : "")
            << '\n';
      });
      return finish_training(ft_c, "finetune", cmd_args, cfg, r, out, err);
    }

    if (ev->parsed()) {
      const SurfModel model = SurfModel::load(ev_ckpt);
      const Dataset raw = load_dataset(ev_data);
      EvalOptions opt;
      opt.horizons = parse_horizons(ev_horizons);
      opt.horizon_stride = ev_stride;
      opt.threads = ev_c.threads;
      const EvalReport rep = evaluate(model, to_model_units(model, raw), opt);
      json j = to_json(rep);
      if (ev_c.out.empty()) {
        out << j.dump(2) << '\n';
        return 0;
      }
      prepare_out_dir(ev_c);
      write_json(fs::path(ev_c.out) / "eval.json", j);
      std::ofstream csv(fs::path(ev_c.out) / "calibration.csv");
      write_gof_csv(csv, rep.gof);
      write_run(ev_c, "eval", cmd_args, {{"ckpt", ev_ckpt}, {"data", ev_data}, {"horizons", opt.horizons}},
                {"eval.json", "calibration.csv"});
      out << "eval: rmse " << rep.time_rmse << ", accuracy " << rep.type_accuracy << ", nll/event "
          << rep.per_event_nll << ", KS D " << rep.gof.ks_D << '\n';
      return 0;
    }

    if (gf->parsed()) {
      if (gf_ckpt.empty() == gf_truth.empty()) throw ValidationError(kModule, "give exactly one of --ckpt or --truth");
      const Dataset raw = load_dataset(gf_data);
      std::vector<double> dz;
      if (!gf_ckpt.empty()) {
        const SurfModel model = SurfModel::load(gf_ckpt);
        EvalOptions opt;
        opt.threads = gf_c.threads;
        dz = evaluate(model, to_model_units(model, raw), opt).residuals;
      } else {
        SyntheticSpec spec;
        if (fs::exists(gf_truth)) {
          std::ifstream in(gf_truth);
          spec = synthetic_spec_from_json(json::parse(in));
        } else {
          spec = preset(gf_truth);
        }
        dz = rescale(spec, raw);
      }
      const GofReport rep = ks_exp1(dz);
      const double crit = 1.36 / std::sqrt(static_cast<double>(rep.n));
      json j = {{"ks_D", rep.ks_D}, {"n", rep.n}, {"critical_D_0.05", crit}, {"reject_0.05", rep.ks_D > crit}};
      if (gf_c.out.empty()) {
        out << j.dump(2) << '\n';
        return 0;
      }
      prepare_out_dir(gf_c);
      write_json(fs::path(gf_c.out) / "gof.json", j);
      std::ofstream csv(fs::path(gf_c.out) / "calibration.csv");
      write_gof_csv(csv, rep);
      write_run(gf_c, "gof", cmd_args, {{"ckpt", gf_ckpt}, {"truth", gf_truth}, {"data", gf_data}},
                {"gof.json", "calibration.csv"});
      out << "gof: KS D " << rep.ks_D << " over " << rep.n << " residuals\n";
      return 0;
    }

    if (sm->parsed()) {
      const SurfModel model = SurfModel::load(sm_ckpt);
      if (!(sm_T > 0.0)) throw ValidationError(kModule, "--T must be positive");
      const double scale =
          model.config().scale_mode == ScaleMode::per_sequence ? sm_T + kScaleEpsilon : model.t_scale();
      Dataset ds;
      ds.num_types = model.num_types();
      std::size_t truncated = 0;
      for (std::size_t i = 0; i < sm_n; ++i) {
        Rng rng = substream(sm_c.seed, "sample", i);
        SampleResult r = sample_sequence(model, sm_T / scale, rng, sm_max);
        truncated += r.truncated ? 1 : 0;
        EventSequence s;
        s.window = sm_T;
        for (const auto& e : r.sequence.events) {
          const double t = std::min(e.t * scale, sm_T);
          if (!s.events.empty() && t <= s.events.back().t) continue;  // rounding at the original scale
          s.events.push_back({t, e.k});
        }
        ds.sequences.push_back(std::move(s));
      }
      if (sm_c.out.empty()) {
        write_dataset(out, ds);
      } else {
        prepare_out_dir(sm_c);
        save_dataset(fs::path(sm_c.out) / "samples.jsonl", ds);
        write_run(sm_c, "sample", cmd_args, {{"ckpt", sm_ckpt}, {"T", sm_T}, {"n", sm_n}, {"max_events", sm_max}},
                  {"samples.jsonl"});
        out << "sample: " << sm_n << " sequences, " << ds.num_events() << " events -> "
            << (fs::path(sm_c.out) / "samples.jsonl").string() << '\n';
      }
      if (truncated > 0) err << "warning [sampler]: " << truncated << " sequences hit --max-events\n";
      return 0;
    }

    if (lo->parsed()) {
      std::vector<Corpus> corpora;
      int types = 1;
      for (const auto& d : lo_dirs) {
        const fs::path p(d);
        Corpus c{p.filename().string(), load_dataset(p / "train.jsonl"), load_dataset(p / "val.jsonl"),
                 load_dataset(p / "test.jsonl")};
        if (c.name.empty()) c.name = p.parent_path().filename().string();
        types = std::max({types, c.train.num_types, c.val.num_types, c.test.num_types});
        corpora.push_back(std::move(c));
      }
      const TrainConfig cfg = train_config(lo_t, model_config(lo_m, types), lo_c);
      prepare_out_dir(lo_c);
      EvalOptions opt;
      opt.horizons = parse_horizons(lo_horizons);
      opt.threads = lo_c.threads;
      const LooResult r = leave_one_out(corpora, lo_held, cfg, opt, [&](const EpochLog& e) {
        out << "epoch " << e.epoch << " train " << e.train.total << " val " << e.val.total << (e.improved ? " *" : "")
            << '\n';
      });
      r.trained.model.save(fs::path(lo_c.out) / "model.json");
      write_log(fs::path(lo_c.out) / "train_log.jsonl", r.trained.log);
      write_json(fs::path(lo_c.out) / "loo.json", {{"held_out", r.held_out},
                                                   {"zero_shot", to_json(r.zero_shot)},
                                                   {"untrained", to_json(r.untrained)},
                                                   {"training", train_summary(r.trained)}});
      write_run(lo_c, "loo", cmd_args, to_json(cfg), {"model.json", "train_log.jsonl", "loo.json"});
      out << "loo: held out " << r.held_out << ", zero-shot KS D " << r.zero_shot.gof.ks_D << " vs untrained "
          << r.untrained.gof.ks_D << '\n';
      if (r.trained.aborted) {
        err << "error: " << r.trained.abort_reason << '\n';
        return 2;
      }
      return 0;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    err << "error: cli: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace surf
