#pragma once

#include "surf/autodiff.hpp"
#include "surf/event_data.hpp"
#include "surf/params.hpp"

namespace surf {

struct EncoderConfig {
  int num_types = 1;
  int d_hidden = 32;
  int num_layers = 2;
  int num_heads = 4;
  double dropout = 0.0;

  // Type and time embeddings are concatenated, so attention runs at 2 * d_hidden.
  std::size_t width() const { return 2 * static_cast<std::size_t>(d_hidden); }
  std::size_t ffn_width() const { return 2 * width(); }
  void validate() const;
};

// Adds "enc.*" parameters.
void init_encoder(const EncoderConfig& cfg, ParamStore& params, Rng& rng);

// Rows [h_0, h_1, ..., h_N] of width cfg.width(); h_i summarizes events 1..i.
// h_0 is the learned initial embedding itself. Dropout is applied only when
// `dropout_rng` is non-null and cfg.dropout > 0.
ad::Var encode(const EncoderConfig& cfg, const ParamVars& vars, const EventSequence& seq,
               Rng* dropout_rng = nullptr);

}  // namespace surf
