#pragma once

// Monotone cumulative-intensity heads. Each interval i is described by a row
// of raw parameters produced from h_{i-1} by a linear layer; Lambda(dt) is
// the compensator over [t_{i-1}, t_{i-1} + dt] and lambda its derivative.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "surf/autodiff.hpp"
#include "surf/params.hpp"
#include "surf/quadrature.hpp"

namespace surf {

enum class HeadKind { moe, csb, glq };

std::string to_string(HeadKind k);
HeadKind parse_head_kind(const std::string& s);

inline constexpr double kRateEpsilon = 1e-4;
inline constexpr double kFloorLowerBound = 1e-6;

struct HeadConfig {
  HeadKind kind = HeadKind::moe;
  int J = 4;             // MoE components
  int M = 12;            // CSB basis functions
  int Q = 8;             // GLQ nodes
  int glq_hidden = 16;   // GLQ MLP width
  double floor = 1e-4;   // lambda_floor (initial value when learnable)
  bool learn_floor = false;

  // Width of the per-interval raw row computed from h.
  int raw_width() const;
  void validate() const;
};

// Plain-double view of one interval's head.
class IntervalHazard {
 public:
  virtual ~IntervalHazard() = default;
  virtual double cumulative(double dt) const = 0;
  virtual double intensity(double dt) const = 0;
  virtual double floor() const = 0;
  // d cumulative / d dt. Equals intensity() for closed-form heads; differs for
  // GLQ by the quadrature error.
  virtual double cumulative_derivative(double dt) const { return intensity(dt); }
};

class ConstantHazard final : public IntervalHazard {
 public:
  explicit ConstantHazard(double rate);
  double cumulative(double dt) const override;
  double intensity(double dt) const override;
  double floor() const override { return rate_; }

 private:
  double rate_;
};

class MoEHazard final : public IntervalHazard {
 public:
  MoEHazard(std::vector<double> w, std::vector<double> gamma, double floor);
  // raw = [raw_w (J), raw_gamma (J)]
  static MoEHazard from_raw(std::span<const double> raw, double floor);

  double cumulative(double dt) const override;
  double intensity(double dt) const override;
  double floor() const override { return floor_; }
  const std::vector<double>& w() const { return w_; }
  const std::vector<double>& gamma() const { return gamma_; }

  // Closed-form d Lambda(dt)/d raw and d log lambda(dt)/d raw (length 2J).
  void raw_gradients(double dt, std::span<double> d_cum, std::span<double> d_log_intensity) const;

 private:
  std::vector<double> w_, gamma_, raw_;
  double floor_;
};

class CSBHazard final : public IntervalHazard {
 public:
  CSBHazard(std::vector<double> alpha, std::vector<double> beta, std::vector<double> delta, double floor);
  // raw = [raw_alpha (M), raw_beta (M), delta (M)]
  static CSBHazard from_raw(std::span<const double> raw, double floor);

  double cumulative(double dt) const override;
  double intensity(double dt) const override;
  double floor() const override { return floor_; }

  // Closed-form gradients with respect to the raw row (length 3M).
  void raw_gradients(double dt, std::span<double> d_cum, std::span<double> d_log_intensity) const;

 private:
  std::vector<double> alpha_, beta_, delta_, raw_;
  double floor_;
};

// lambda(dt) = softplus(w2 . tanh(pre + wt * dt) + b2) + floor, where pre is
// the h-dependent part of the first layer. Lambda uses a Q-point rule.
class GLQHazard final : public IntervalHazard {
 public:
  GLQHazard(std::vector<double> pre, std::vector<double> wt, std::vector<double> w2, double b2, double floor,
            const GLRule* rule);

  double cumulative(double dt) const override;
  double intensity(double dt) const override;
  double floor() const override { return floor_; }
  double cumulative_derivative(double dt) const override;
  double cumulative_with(const GLRule& rule, double dt) const;
  // softplus(f(dt)) without the floor, and its derivative in dt.
  double mlp_intensity(double dt) const;
  double mlp_intensity_slope(double dt) const;

 private:
  std::vector<double> pre_, wt_, w2_;
  double b2_, floor_;
  const GLRule* rule_;
};

// ---- parameters ----
// Adds head parameters ("head.*") for encodings of width d_model.
void init_head(const HeadConfig& cfg, std::size_t d_model, ParamStore& params, Rng& rng);
double floor_value(const HeadConfig& cfg, const ParamStore& params);

// Hazard for a single raw row (the per-interval parameters from h).
std::unique_ptr<IntervalHazard> make_hazard(const HeadConfig& cfg, const ParamStore& params,
                                            std::span<const double> raw_row);

// ---- tape versions ----
// Raw rows for every encoding row: H (n x d_model) -> n x raw_width.
ad::Var head_raw(const ParamVars& vars, ad::Var H);
ad::Var floor_var(const HeadConfig& cfg, const ParamVars& vars, ad::Tape& tape);
// Lambda(dt_i | row i) and log lambda(dt_i | row i) as n x 1 columns.
ad::Var cumulative(const HeadConfig& cfg, const ParamVars& vars, ad::Var raw, std::span<const double> dt);
ad::Var log_intensity(const HeadConfig& cfg, const ParamVars& vars, ad::Var raw, std::span<const double> dt);

}  // namespace surf
