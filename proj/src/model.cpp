#include "surf/model.hpp"

#include <cmath>
#include <fstream>

#include "surf/errors.hpp"

namespace surf {

using nlohmann::json;

namespace {
constexpr const char* kModule = "model";
}

void ModelConfig::validate() const {
  encoder.validate();
  head.validate();
  if (type_hidden < 0) throw ValidationError(kModule, "type_hidden must be >= 0");
}

json to_json(const ModelConfig& cfg) {
  return {{"num_types", cfg.encoder.num_types},
          {"d_hidden", cfg.encoder.d_hidden},
          {"num_layers", cfg.encoder.num_layers},
          {"num_heads", cfg.encoder.num_heads},
          {"dropout", cfg.encoder.dropout},
          {"variant", to_string(cfg.head.kind)},
          {"J", cfg.head.J},
          {"M", cfg.head.M},
          {"Q", cfg.head.Q},
          {"glq_hidden", cfg.head.glq_hidden},
          {"floor", cfg.head.floor},
          {"learn_floor", cfg.head.learn_floor},
          {"type_hidden", cfg.type_hidden},
          {"scale_mode", cfg.scale_mode == ScaleMode::global ? "global" : "per_sequence"}};
}

namespace {

ModelConfig parse_model_config(const json& j) {
  ModelConfig c;
  if (!j.is_object()) throw ValidationError(kModule, "model config must be a JSON object");
  c.encoder.num_types = j.value("num_types", c.encoder.num_types);
  c.encoder.d_hidden = j.value("d_hidden", c.encoder.d_hidden);
  c.encoder.num_layers = j.value("num_layers", c.encoder.num_layers);
  c.encoder.num_heads = j.value("num_heads", c.encoder.num_heads);
  c.encoder.dropout = j.value("dropout", c.encoder.dropout);
  c.head.kind = parse_head_kind(j.value("variant", to_string(c.head.kind)));
  c.head.J = j.value("J", c.head.J);
  c.head.M = j.value("M", c.head.M);
  c.head.Q = j.value("Q", c.head.Q);
  c.head.glq_hidden = j.value("glq_hidden", c.head.glq_hidden);
  c.head.floor = j.value("floor", c.head.floor);
  c.head.learn_floor = j.value("learn_floor", c.head.learn_floor);
  c.type_hidden = j.value("type_hidden", c.type_hidden);
  const std::string sm = j.value("scale_mode", std::string("global"));
  if (sm != "global" && sm != "per_sequence") throw ValidationError(kModule, "unknown scale_mode " + sm);
  c.scale_mode = sm == "global" ? ScaleMode::global : ScaleMode::per_sequence;
  c.validate();
  return c;
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  try {
    return parse_model_config(j);
  } catch (const json::exception& e) {
    throw ValidationError(kModule, std::string("malformed model config: ") + e.what());
  }
}

void init_type_head(const ModelConfig& cfg, ParamStore& params, Rng& rng) {
  const std::size_t D = cfg.encoder.width(), Hd = static_cast<std::size_t>(cfg.type_width());
  params["type.W1"] = xavier_uniform(D, Hd, rng);
  params["type.b1"] = ad::Matrix(1, Hd);
  params["type.W2"] = xavier_uniform(Hd, static_cast<std::size_t>(cfg.encoder.num_types), rng);
  params["type.b2"] = ad::Matrix(1, static_cast<std::size_t>(cfg.encoder.num_types));
}

ad::Var type_logits(const ParamVars& vars, ad::Var H) {
  ad::Var hid = ad::tanh(ad::add(ad::matmul(H, param(vars, "type.W1")), param(vars, "type.b1")));
  return ad::add(ad::matmul(hid, param(vars, "type.W2")), param(vars, "type.b2"));
}

std::vector<double> softmax(std::span<const double> logits) {
  double m = -INFINITY;
  for (double v : logits) m = std::max(m, v);
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= s;
  return p;
}

SurfModel::SurfModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng enc = substream(seed, "init.encoder");
  Rng head = substream(seed, "init.head");
  Rng type = substream(seed, "init.type");
  init_encoder(cfg_.encoder, params_, enc);
  init_head(cfg_.head, cfg_.encoder.width(), params_, head);
  init_type_head(cfg_, params_, type);
}

SurfModel::SurfModel(const ModelConfig& cfg, ParamStore params, double t_scale)
    : cfg_(cfg), params_(std::move(params)), t_scale_(t_scale) {
  cfg_.validate();
  // Compare against a fresh initialization so a checkpoint for a different
  // architecture is rejected up front.
  SurfModel ref(cfg_, 0);
  for (const auto& [name, m] : ref.params_) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError(kModule, "checkpoint lacks parameter " + name);
    if (it->second.rows != m.rows || it->second.cols != m.cols)
      throw ValidationError(kModule, "parameter " + name + " has shape " + shape_str(it->second) + ", expected " +
                                         shape_str(m));
  }
  if (params_.size() != ref.params_.size()) throw ValidationError(kModule, "checkpoint has unexpected parameters");
}

SurfModel::Forward SurfModel::forward(const ParamVars& vars, const EventSequence& seq, Rng* dropout_rng) const {
  Forward f;
  f.H = encode(cfg_.encoder, vars, seq, dropout_rng);
  f.raw = head_raw(vars, f.H);
  f.logits = type_logits(vars, f.H);
  return f;
}

std::vector<IntervalState> SurfModel::all_states(const EventSequence& seq) const {
  ad::Tape tape;
  ParamVars vars = bind(tape, params_, false);
  Forward f = forward(vars, seq);
  const ad::Matrix& raw = f.raw.value();
  const ad::Matrix& logits = f.logits.value();
  std::vector<IntervalState> out;
  out.reserve(raw.rows);
  for (std::size_t i = 0; i < raw.rows; ++i)
    out.push_back({make_hazard(cfg_.head, params_, raw.row_span(i)), softmax(logits.row_span(i))});
  return out;
}

IntervalState SurfModel::next(std::span<const MarkedEvent> history) const {
  EventSequence prefix;
  prefix.events.assign(history.begin(), history.end());
  prefix.window = prefix.last_time();
  ad::Tape tape;
  ParamVars vars = bind(tape, params_, false);
  Forward f = forward(vars, prefix);
  const std::size_t last = history.size();
  return {make_hazard(cfg_.head, params_, f.raw.value().row_span(last)), softmax(f.logits.value().row_span(last))};
}

json SurfModel::to_json() const {
  json params = json::object();
  for (const auto& [name, m] : params_) params[name] = {{"shape", {m.rows, m.cols}}, {"values", m.data}};
  return {{"format", "surf-checkpoint"},
          {"version", kCheckpointVersion},
          {"config", surf::to_json(cfg_)},
          {"t_scale", t_scale_},
          {"params", std::move(params)}};
}

SurfModel SurfModel::from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "surf-checkpoint")
      throw ValidationError(kModule, "not a surf checkpoint");
    if (j.value("version", 0) != kCheckpointVersion)
      throw ValidationError(kModule, "unsupported checkpoint version " + std::to_string(j.value("version", 0)));
    ModelConfig cfg = model_config_from_json(j.at("config"));
    ParamStore params;
    for (const auto& [name, p] : j.at("params").items()) {
      const auto shape = p.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw ValidationError(kModule, "parameter " + name + " must be 2-D");
      params.emplace(name, ad::Matrix(shape[0], shape[1], p.at("values").get<std::vector<double>>()));
    }
    return SurfModel(cfg, std::move(params), j.at("t_scale").get<double>());
  } catch (const json::exception& e) {
    throw ValidationError(kModule, std::string("malformed checkpoint: ") + e.what());
  }
}

void SurfModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(kModule, "cannot write " + path.string());
  out << to_json().dump() << '\n';
}

SurfModel SurfModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(kModule, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(kModule, path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace surf
