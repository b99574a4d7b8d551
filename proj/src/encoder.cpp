#include "surf/encoder.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "surf/errors.hpp"

namespace surf {

namespace {

constexpr const char* kModule = "encoder";

std::string layer_name(int l, const char* part) { return "enc.l" + std::to_string(l) + "." + part; }

ad::Var layer_norm(const ParamVars& vars, ad::Var x, const std::string& prefix) {
  return ad::layer_norm_rows(x, param(vars, prefix + "_g"), param(vars, prefix + "_b"));
}

ad::Var maybe_dropout(ad::Var x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  return ad::dropout(x, p, *rng);
}

ad::Var self_attention(const EncoderConfig& cfg, const ParamVars& vars, int l, ad::Var x) {
  const std::size_t heads = static_cast<std::size_t>(cfg.num_heads);
  const std::size_t dh = cfg.width() / heads;
  ad::Var q = ad::matmul(x, param(vars, layer_name(l, "Wq")));
  ad::Var k = ad::matmul(x, param(vars, layer_name(l, "Wk")));
  ad::Var v = ad::matmul(x, param(vars, layer_name(l, "Wv")));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dh, dh);
    ad::Var kh = ad::slice_cols(k, h * dh, dh);
    ad::Var vh = ad::slice_cols(v, h * dh, dh);
    ad::Var att = ad::causal_softmax(ad::scale(ad::matmul_nt(qh, kh), scale));
    outs.push_back(ad::matmul(att, vh));
  }
  return ad::add(ad::matmul(ad::concat_cols(outs), param(vars, layer_name(l, "Wo"))), param(vars, layer_name(l, "bo")));
}

}  // namespace

void EncoderConfig::validate() const {
  if (num_types < 1) throw ValidationError(kModule, "num_types must be >= 1");
  if (d_hidden < 2 || num_layers < 1 || num_heads < 1)
    throw ValidationError(kModule, "d_hidden >= 2, num_layers >= 1 and num_heads >= 1 required");
  if (d_hidden % num_heads != 0) throw ValidationError(kModule, "d_hidden must be divisible by num_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError(kModule, "dropout must be in [0, 1)");
}

void init_encoder(const EncoderConfig& cfg, ParamStore& params, Rng& rng) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.d_hidden), D = cfg.width(), F = cfg.ffn_width();
  const std::size_t th = std::max<std::size_t>(1, d / 2);

  std::normal_distribution<double> n01(0.0, 1.0);
  ad::Matrix emb(static_cast<std::size_t>(cfg.num_types), d);
  for (double& v : emb.data) v = n01(rng);
  params["enc.type_emb"] = std::move(emb);

  // Time units tanh(s * (t - c)) with centers c spread over the normalized
  // window and slopes large enough to resolve sub-window structure.
  std::uniform_real_distribution<double> slope(4.0, 16.0), center(0.0, 1.0);
  std::bernoulli_distribution sign(0.5);
  ad::Matrix w1(1, th), b1(1, th);
  for (std::size_t j = 0; j < th; ++j) {
    const double s = (sign(rng) ? 1.0 : -1.0) * slope(rng);
    w1.data[j] = s;
    b1.data[j] = -s * center(rng);
  }
  params["enc.time_w1"] = std::move(w1);
  params["enc.time_b1"] = std::move(b1);
  params["enc.time_w2"] = xavier_uniform(th, d, rng);
  params["enc.time_b2"] = ad::Matrix(1, d);

  ad::Matrix h0(1, D);
  for (double& v : h0.data) v = 0.1 * n01(rng);
  params["enc.h0"] = std::move(h0);

  for (int l = 0; l < cfg.num_layers; ++l) {
    params[layer_name(l, "ln1_g")] = ad::Matrix(1, D, 1.0);
    params[layer_name(l, "ln1_b")] = ad::Matrix(1, D);
    params[layer_name(l, "Wq")] = xavier_uniform(D, D, rng);
    params[layer_name(l, "Wk")] = xavier_uniform(D, D, rng);
    params[layer_name(l, "Wv")] = xavier_uniform(D, D, rng);
    params[layer_name(l, "Wo")] = xavier_uniform(D, D, rng);
    params[layer_name(l, "bo")] = ad::Matrix(1, D);
    params[layer_name(l, "ln2_g")] = ad::Matrix(1, D, 1.0);
    params[layer_name(l, "ln2_b")] = ad::Matrix(1, D);
    params[layer_name(l, "ff_W1")] = xavier_uniform(D, F, rng);
    params[layer_name(l, "ff_b1")] = ad::Matrix(1, F);
    params[layer_name(l, "ff_W2")] = xavier_uniform(F, D, rng);
    params[layer_name(l, "ff_b2")] = ad::Matrix(1, D);
  }
  params["enc.lnf_g"] = ad::Matrix(1, D, 1.0);
  params["enc.lnf_b"] = ad::Matrix(1, D);
}

ad::Var encode(const EncoderConfig& cfg, const ParamVars& vars, const EventSequence& seq, Rng* dropout_rng) {
  ad::Var h0 = param(vars, "enc.h0");
  const std::size_t n = seq.size();
  if (n == 0) return h0;
  ad::Tape& tape = *h0.tape();

  std::vector<std::size_t> marks(n);
  std::vector<double> times(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = seq.events[i].k;
    if (k < 0 || k >= cfg.num_types)
      throw ValidationError(kModule, "mark " + std::to_string(k) + " at event " + std::to_string(i) +
                                         " outside [0, " + std::to_string(cfg.num_types) + ")");
    marks[i] = static_cast<std::size_t>(k);
    times[i] = seq.events[i].t;
  }

  ad::Var type_e = ad::gather_rows(param(vars, "enc.type_emb"), marks);
  ad::Var t = tape.constant(ad::Matrix::column(times));
  ad::Var time_h = ad::tanh(ad::add(ad::mul(t, param(vars, "enc.time_w1")), param(vars, "enc.time_b1")));
  ad::Var time_e = ad::tanh(ad::add(ad::matmul(time_h, param(vars, "enc.time_w2")), param(vars, "enc.time_b2")));
  const ad::Var parts[] = {type_e, time_e};
  ad::Var x = ad::concat_cols(parts);

  for (int l = 0; l < cfg.num_layers; ++l) {
    ad::Var a = self_attention(cfg, vars, l, layer_norm(vars, x, layer_name(l, "ln1")));
    x = ad::add(x, maybe_dropout(a, cfg.dropout, dropout_rng));
    ad::Var y = layer_norm(vars, x, layer_name(l, "ln2"));
    y = ad::relu(ad::add(ad::matmul(y, param(vars, layer_name(l, "ff_W1"))), param(vars, layer_name(l, "ff_b1"))));
    y = ad::add(ad::matmul(y, param(vars, layer_name(l, "ff_W2"))), param(vars, layer_name(l, "ff_b2")));
    x = ad::add(x, maybe_dropout(y, cfg.dropout, dropout_rng));
  }
  x = layer_norm(vars, x, "enc.lnf");
  const ad::Var rows[] = {h0, x};
  return ad::concat_rows(rows);
}

}  // namespace surf
