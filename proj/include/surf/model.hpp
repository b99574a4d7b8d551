#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "surf/conditional.hpp"
#include "surf/encoder.hpp"
#include "surf/heads.hpp"
#include "surf/params.hpp"

namespace surf {

struct ModelConfig {
  EncoderConfig encoder;
  HeadConfig head;
  int type_hidden = 0;  // 0 means d_hidden
  ScaleMode scale_mode = ScaleMode::global;

  int type_width() const { return type_hidden > 0 ? type_hidden : encoder.d_hidden; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Encoder + intensity head + type head. Works in normalized time: inputs
// must already be divided by t_scale().
class SurfModel final : public ConditionalModel {
 public:
  static constexpr int kCheckpointVersion = 1;

  SurfModel(const ModelConfig& cfg, std::uint64_t seed);
  SurfModel(const ModelConfig& cfg, ParamStore params, double t_scale);

  const ModelConfig& config() const { return cfg_; }
  const ParamStore& params() const { return params_; }
  ParamStore& mutable_params() { return params_; }
  double t_scale() const { return t_scale_; }
  void set_t_scale(double s) { t_scale_ = s; }

  int num_types() const override { return cfg_.encoder.num_types; }
  IntervalState next(std::span<const MarkedEvent> history) const override;
  std::vector<IntervalState> all_states(const EventSequence& seq) const override;

  struct Forward {
    ad::Var H;       // (N+1) x width encodings
    ad::Var raw;     // (N+1) x raw_width head rows
    ad::Var logits;  // (N+1) x K mark logits
  };
  Forward forward(const ParamVars& vars, const EventSequence& seq, Rng* dropout_rng = nullptr) const;

  nlohmann::json to_json() const;
  static SurfModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SurfModel load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  double t_scale_ = 1.0;
};

// Type head: 2-layer tanh MLP from encodings to K logits ("type.*").
void init_type_head(const ModelConfig& cfg, ParamStore& params, Rng& rng);
ad::Var type_logits(const ParamVars& vars, ad::Var H);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace surf
