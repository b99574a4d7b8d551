#include "surf/params.hpp"

#include <cmath>
#include <random>

#include "surf/errors.hpp"

namespace surf {

ParamVars bind(ad::Tape& tape, const ParamStore& params, bool tracked) {
  ParamVars vars;
  for (const auto& [name, value] : params) vars.emplace(name, tracked ? tape.variable(value) : tape.constant(value));
  return vars;
}

ParamStore gradients(const ad::Tape& tape, const ParamVars& vars) {
  ParamStore g;
  for (const auto& [name, v] : vars) g.emplace(name, tape.grad(v));
  return g;
}

const ad::Matrix& param(const ParamStore& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("model", "missing parameter " + name);
  return it->second;
}

ad::Var param(const ParamVars& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ValidationError("model", "missing parameter " + name);
  return it->second;
}

ParamStore zeros_like(const ParamStore& params) {
  ParamStore z;
  for (const auto& [name, m] : params) z.emplace(name, ad::Matrix(m.rows, m.cols));
  return z;
}

void axpy(ParamStore& a, double s, const ParamStore& b) {
  for (auto& [name, m] : a) {
    const ad::Matrix& bm = param(b, name);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] += s * bm.data[i];
  }
}

double global_norm(const ParamStore& g) {
  double s = 0.0;
  for (const auto& [name, m] : g)
    for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

std::size_t count_scalars(const ParamStore& params) {
  std::size_t n = 0;
  for (const auto& [name, m] : params) n += m.size();
  return n;
}

ad::Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform(rows, cols, -bound, bound, rng);
}

ad::Matrix uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Matrix m(rows, cols);
  for (double& v : m.data) v = u(rng);
  return m;
}

}  // namespace surf
