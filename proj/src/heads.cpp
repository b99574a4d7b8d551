#include "surf/heads.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "surf/errors.hpp"

namespace surf {

namespace {

constexpr const char* kModule = "heads";

void check_dt(double dt) {
  if (!(dt >= 0.0)) throw ValidationError(kModule, "dt must be nonnegative, got " + std::to_string(dt));
}

ad::Var constant_column(ad::Tape& tape, std::span<const double> v) { return tape.constant(ad::Matrix::column(v)); }

}  // namespace

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::moe: return "moe";
    case HeadKind::csb: return "csb";
    case HeadKind::glq: return "glq";
  }
  return "moe";
}

HeadKind parse_head_kind(const std::string& s) {
  if (s == "moe") return HeadKind::moe;
  if (s == "csb") return HeadKind::csb;
  if (s == "glq") return HeadKind::glq;
  throw ValidationError(kModule, "unknown head variant '" + s + "' (expected moe, csb or glq)");
}

int HeadConfig::raw_width() const {
  switch (kind) {
    case HeadKind::moe: return 2 * J;
    case HeadKind::csb: return 3 * M;
    case HeadKind::glq: return glq_hidden;
  }
  return 0;
}

void HeadConfig::validate() const {
  if (J < 1 || M < 1 || glq_hidden < 1) throw ValidationError(kModule, "J, M and the GLQ width must be positive");
  if (Q < 1 || Q > kMaxGLNodes) throw ValidationError(kModule, "Q must be in [1, 64]");
  if (!(floor >= 0.0) || !std::isfinite(floor)) throw ValidationError(kModule, "floor must be finite and >= 0");
  if (learn_floor && floor <= kFloorLowerBound)
    throw ValidationError(kModule, "a learnable floor must start above 1e-6");
}

// ---------------------------------------------------------------- constant

ConstantHazard::ConstantHazard(double rate) : rate_(rate) {
  if (!(rate > 0.0)) throw ValidationError(kModule, "constant rate must be positive");
}

double ConstantHazard::cumulative(double dt) const {
  check_dt(dt);
  return rate_ * dt;
}

double ConstantHazard::intensity(double dt) const {
  check_dt(dt);
  return rate_;
}

// ---------------------------------------------------------------- MoE

MoEHazard::MoEHazard(std::vector<double> w, std::vector<double> gamma, double floor)
    : w_(std::move(w)), gamma_(std::move(gamma)), floor_(floor) {
  if (w_.size() != gamma_.size() || w_.empty()) throw ValidationError(kModule, "MoE needs J weights and J rates");
}

MoEHazard MoEHazard::from_raw(std::span<const double> raw, double floor) {
  if (raw.size() % 2 != 0) throw ValidationError(kModule, "MoE raw row must have even width");
  const std::size_t J = raw.size() / 2;
  std::vector<double> w(J), g(J);
  for (std::size_t j = 0; j < J; ++j) {
    w[j] = ad::softplus(raw[j]);
    g[j] = ad::softplus(raw[J + j]) + kRateEpsilon;
  }
  MoEHazard h(std::move(w), std::move(g), floor);
  h.raw_.assign(raw.begin(), raw.end());
  return h;
}

double MoEHazard::cumulative(double dt) const {
  check_dt(dt);
  double s = floor_ * dt;
  for (std::size_t j = 0; j < w_.size(); ++j) s += w_[j] / gamma_[j] * -std::expm1(-gamma_[j] * dt);
  return s;
}

double MoEHazard::intensity(double dt) const {
  check_dt(dt);
  double s = floor_;
  for (std::size_t j = 0; j < w_.size(); ++j) s += w_[j] * std::exp(-gamma_[j] * dt);
  return s;
}

void MoEHazard::raw_gradients(double dt, std::span<double> d_cum, std::span<double> d_log_intensity) const {
  const std::size_t J = w_.size();
  if (raw_.size() != 2 * J || d_cum.size() != 2 * J || d_log_intensity.size() != 2 * J)
    throw ValidationError(kModule, "raw_gradients needs a hazard built from_raw and 2J outputs");
  const double lam = intensity(dt);
  for (std::size_t j = 0; j < J; ++j) {
    const double g = gamma_[j], e = std::exp(-g * dt), one_m = -std::expm1(-g * dt);
    const double dw = ad::sigmoid(raw_[j]), dg = ad::sigmoid(raw_[J + j]);
    d_cum[j] = one_m / g * dw;
    d_cum[J + j] = w_[j] * (dt * e / g - one_m / (g * g)) * dg;
    d_log_intensity[j] = e / lam * dw;
    d_log_intensity[J + j] = -w_[j] * dt * e / lam * dg;
  }
}

// ---------------------------------------------------------------- CSB

CSBHazard::CSBHazard(std::vector<double> alpha, std::vector<double> beta, std::vector<double> delta, double floor)
    : alpha_(std::move(alpha)), beta_(std::move(beta)), delta_(std::move(delta)), floor_(floor) {
  if (alpha_.empty() || alpha_.size() != beta_.size() || alpha_.size() != delta_.size())
    throw ValidationError(kModule, "CSB needs M values each of alpha, beta and delta");
}

CSBHazard CSBHazard::from_raw(std::span<const double> raw, double floor) {
  if (raw.size() % 3 != 0) throw ValidationError(kModule, "CSB raw row width must be a multiple of 3");
  const std::size_t M = raw.size() / 3;
  std::vector<double> a(M), b(M), d(M);
  for (std::size_t m = 0; m < M; ++m) {
    a[m] = ad::softplus(raw[m]);
    b[m] = ad::softplus(raw[M + m]) + kRateEpsilon;
    d[m] = raw[2 * M + m];
  }
  CSBHazard h(std::move(a), std::move(b), std::move(d), floor);
  h.raw_.assign(raw.begin(), raw.end());
  return h;
}

double CSBHazard::cumulative(double dt) const {
  check_dt(dt);
  double s = floor_ * dt;
  for (std::size_t m = 0; m < alpha_.size(); ++m)
    s += alpha_[m] * (ad::softplus(beta_[m] * dt + delta_[m]) - ad::softplus(delta_[m]));
  return s;
}

double CSBHazard::intensity(double dt) const {
  check_dt(dt);
  double s = floor_;
  for (std::size_t m = 0; m < alpha_.size(); ++m) s += alpha_[m] * beta_[m] * ad::sigmoid(beta_[m] * dt + delta_[m]);
  return s;
}

void CSBHazard::raw_gradients(double dt, std::span<double> d_cum, std::span<double> d_log_intensity) const {
  const std::size_t M = alpha_.size();
  if (raw_.size() != 3 * M || d_cum.size() != 3 * M || d_log_intensity.size() != 3 * M)
    throw ValidationError(kModule, "raw_gradients needs a hazard built from_raw and 3M outputs");
  const double lam = intensity(dt);
  for (std::size_t m = 0; m < M; ++m) {
    const double a = alpha_[m], b = beta_[m], d = delta_[m];
    const double s = ad::sigmoid(b * dt + d), s0 = ad::sigmoid(d);
    const double da = ad::sigmoid(raw_[m]), db = ad::sigmoid(raw_[M + m]);
    d_cum[m] = (ad::softplus(b * dt + d) - ad::softplus(d)) * da;
    d_cum[M + m] = a * dt * s * db;
    d_cum[2 * M + m] = a * (s - s0);
    d_log_intensity[m] = b * s / lam * da;
    d_log_intensity[M + m] = a * (s + b * dt * s * (1.0 - s)) / lam * db;
    d_log_intensity[2 * M + m] = a * b * s * (1.0 - s) / lam;
  }
}

// ---------------------------------------------------------------- GLQ

GLQHazard::GLQHazard(std::vector<double> pre, std::vector<double> wt, std::vector<double> w2, double b2, double floor,
                     const GLRule* rule)
    : pre_(std::move(pre)), wt_(std::move(wt)), w2_(std::move(w2)), b2_(b2), floor_(floor), rule_(rule) {
  if (pre_.size() != wt_.size() || pre_.size() != w2_.size() || rule_ == nullptr)
    throw ValidationError(kModule, "GLQ hazard width mismatch");
}

double GLQHazard::mlp_intensity(double dt) const {
  double f = b2_;
  for (std::size_t k = 0; k < pre_.size(); ++k) f += w2_[k] * std::tanh(pre_[k] + wt_[k] * dt);
  return ad::softplus(f);
}

double GLQHazard::cumulative_with(const GLRule& rule, double dt) const {
  check_dt(dt);
  const double half = 0.5 * dt;
  double s = 0.0;
  for (std::size_t q = 0; q < rule.size(); ++q) s += rule.weights[q] * mlp_intensity(half * (1.0 + rule.nodes[q]));
  return half * s + floor_ * dt;
}

double GLQHazard::mlp_intensity_slope(double dt) const {
  double f = b2_, df = 0.0;
  for (std::size_t k = 0; k < pre_.size(); ++k) {
    const double th = std::tanh(pre_[k] + wt_[k] * dt);
    f += w2_[k] * th;
    df += w2_[k] * (1.0 - th * th) * wt_[k];
  }
  return ad::sigmoid(f) * df;
}

double GLQHazard::cumulative(double dt) const { return cumulative_with(*rule_, dt); }

double GLQHazard::cumulative_derivative(double dt) const {
  check_dt(dt);
  // d/dt of (dt / 2) sum_q w_q g(dt (1 + x_q) / 2)
  const double half = 0.5 * dt;
  double s = 0.0, ds = 0.0;
  for (std::size_t q = 0; q < rule_->size(); ++q) {
    const double c = 0.5 * (1.0 + rule_->nodes[q]);
    s += rule_->weights[q] * mlp_intensity(dt * c);
    ds += rule_->weights[q] * mlp_intensity_slope(dt * c) * c;
  }
  return 0.5 * s + half * ds + floor_;
}

double GLQHazard::intensity(double dt) const {
  check_dt(dt);
  return mlp_intensity(dt) + floor_;
}

// ---------------------------------------------------------------- parameters

void init_head(const HeadConfig& cfg, std::size_t d_model, ParamStore& params, Rng& rng) {
  cfg.validate();
  const std::size_t P = static_cast<std::size_t>(cfg.raw_width());
  params["head.W"] = xavier_uniform(d_model, P, rng);
  ad::Matrix b(1, P);
  switch (cfg.kind) {
    case HeadKind::moe: {
      // Weights start at softplus(0); rate biases span [-2, 4].
      const std::size_t J = static_cast<std::size_t>(cfg.J);
      for (std::size_t j = 0; j < J; ++j) b.data[J + j] = J == 1 ? 1.0 : -2.0 + 6.0 * double(j) / double(J - 1);
      break;
    }
    case HeadKind::csb: {
      const std::size_t M = static_cast<std::size_t>(cfg.M);
      std::uniform_real_distribution<double> u(-3.0, 3.0);
      for (std::size_t m = 0; m < M; ++m) b.data[2 * M + m] = u(rng);
      break;
    }
    case HeadKind::glq: {
      // Normalized gaps span orders of magnitude below 1, so the dt weights get
      // log-uniform magnitudes in [1, 30] with random signs.
      ad::Matrix wt(1, P);
      std::uniform_real_distribution<double> logmag(0.0, std::log(30.0));
      std::bernoulli_distribution sign(0.5);
      for (double& x : wt.data) x = (sign(rng) ? 1.0 : -1.0) * std::exp(logmag(rng));
      params["head.wt"] = std::move(wt);
      params["head.W2"] = xavier_uniform(P, 1, rng);
      params["head.b2"] = ad::Matrix(1, 1);
      break;
    }
  }
  params["head.b"] = std::move(b);
  if (cfg.learn_floor) {
    // softplus(raw) + 1e-6 = floor
    const double target = cfg.floor - kFloorLowerBound;
    params["head.floor_raw"] = ad::Matrix::scalar(std::log(std::expm1(target)));
  }
}

double floor_value(const HeadConfig& cfg, const ParamStore& params) {
  if (!cfg.learn_floor) return cfg.floor;
  return ad::softplus(param(params, "head.floor_raw").data[0]) + kFloorLowerBound;
}

std::unique_ptr<IntervalHazard> make_hazard(const HeadConfig& cfg, const ParamStore& params,
                                            std::span<const double> raw_row) {
  const double fl = floor_value(cfg, params);
  switch (cfg.kind) {
    case HeadKind::moe: return std::make_unique<MoEHazard>(MoEHazard::from_raw(raw_row, fl));
    case HeadKind::csb: return std::make_unique<CSBHazard>(CSBHazard::from_raw(raw_row, fl));
    case HeadKind::glq: {
      const auto& wt = param(params, "head.wt").data;
      const auto& w2 = param(params, "head.W2").data;
      return std::make_unique<GLQHazard>(std::vector<double>(raw_row.begin(), raw_row.end()), wt, w2,
                                         param(params, "head.b2").data[0], fl, &cached_gl_rule(cfg.Q));
    }
  }
  throw ValidationError(kModule, "unknown head kind");
}

// ---------------------------------------------------------------- tape

ad::Var head_raw(const ParamVars& vars, ad::Var H) {
  return ad::add(ad::matmul(H, param(vars, "head.W")), param(vars, "head.b"));
}

ad::Var floor_var(const HeadConfig& cfg, const ParamVars& vars, ad::Tape& tape) {
  if (!cfg.learn_floor) return tape.constant(ad::Matrix::scalar(cfg.floor));
  return ad::add_scalar(ad::softplus(param(vars, "head.floor_raw")), kFloorLowerBound);
}

namespace {

struct MoEParts {
  ad::Var w, gamma;
};

MoEParts moe_parts(const HeadConfig& cfg, ad::Var raw) {
  const std::size_t J = static_cast<std::size_t>(cfg.J);
  return {ad::softplus(ad::slice_cols(raw, 0, J)), ad::add_scalar(ad::softplus(ad::slice_cols(raw, J, J)), kRateEpsilon)};
}

struct CSBParts {
  ad::Var alpha, beta, delta;
};

CSBParts csb_parts(const HeadConfig& cfg, ad::Var raw) {
  const std::size_t M = static_cast<std::size_t>(cfg.M);
  return {ad::softplus(ad::slice_cols(raw, 0, M)), ad::add_scalar(ad::softplus(ad::slice_cols(raw, M, M)), kRateEpsilon),
          ad::slice_cols(raw, 2 * M, M)};
}

// f(dt) for every row at the given offsets: rows x 1 pre-softplus output.
ad::Var glq_mlp(const ParamVars& vars, ad::Var raw_rows, ad::Var dt_col) {
  ad::Var hidden = ad::tanh(ad::add(raw_rows, ad::mul(dt_col, param(vars, "head.wt"))));
  return ad::add(ad::matmul(hidden, param(vars, "head.W2")), param(vars, "head.b2"));
}

void check_rows(ad::Var raw, std::span<const double> dt) {
  if (raw.rows() != dt.size())
    throw ValidationError(kModule, "need one dt per raw row (" + std::to_string(raw.rows()) + " rows, " +
                                       std::to_string(dt.size()) + " dt)");
  for (double v : dt) check_dt(v);
}

}  // namespace

ad::Var cumulative(const HeadConfig& cfg, const ParamVars& vars, ad::Var raw, std::span<const double> dt) {
  check_rows(raw, dt);
  ad::Tape& tape = *raw.tape();
  ad::Var dtc = constant_column(tape, dt);
  ad::Var linear = ad::mul(dtc, floor_var(cfg, vars, tape));
  switch (cfg.kind) {
    case HeadKind::moe: {
      auto [w, g] = moe_parts(cfg, raw);
      ad::Var terms = ad::mul(ad::div(w, g), ad::one_minus_exp_neg(ad::mul(g, dtc)));
      return ad::add(ad::sum_rows(terms), linear);
    }
    case HeadKind::csb: {
      auto [a, b, d] = csb_parts(cfg, raw);
      ad::Var diff = ad::sub(ad::softplus(ad::add(ad::mul(b, dtc), d)), ad::softplus(d));
      return ad::add(ad::sum_rows(ad::mul(a, diff)), linear);
    }
    case HeadKind::glq: {
      const GLRule& rule = cached_gl_rule(cfg.Q);
      const std::size_t n = dt.size(), Q = rule.size();
      std::vector<std::size_t> idx(n * Q);
      std::vector<double> u(n * Q), wq(n * Q);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < Q; ++q) {
          idx[i * Q + q] = i;
          u[i * Q + q] = 0.5 * dt[i] * (1.0 + rule.nodes[q]);
          wq[i * Q + q] = 0.5 * dt[i] * rule.weights[q];
        }
      ad::Var f = glq_mlp(vars, ad::gather_rows(raw, idx), constant_column(tape, u));
      return ad::add(ad::segment_weighted_sum(ad::softplus(f), wq, Q), linear);
    }
  }
  throw ValidationError(kModule, "unknown head kind");
}

ad::Var log_intensity(const HeadConfig& cfg, const ParamVars& vars, ad::Var raw, std::span<const double> dt) {
  check_rows(raw, dt);
  ad::Tape& tape = *raw.tape();
  ad::Var dtc = constant_column(tape, dt);
  ad::Var fl = floor_var(cfg, vars, tape);
  ad::Var lam;
  switch (cfg.kind) {
    case HeadKind::moe: {
      auto [w, g] = moe_parts(cfg, raw);
      lam = ad::sum_rows(ad::mul(w, ad::exp(ad::neg(ad::mul(g, dtc)))));
      break;
    }
    case HeadKind::csb: {
      auto [a, b, d] = csb_parts(cfg, raw);
      lam = ad::sum_rows(ad::mul(ad::mul(a, b), ad::sigmoid(ad::add(ad::mul(b, dtc), d))));
      break;
    }
    case HeadKind::glq: lam = ad::softplus(glq_mlp(vars, raw, dtc)); break;
  }
  return ad::log(ad::add(lam, fl));
}

}  // namespace surf
