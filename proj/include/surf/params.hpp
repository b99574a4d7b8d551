#pragma once

#include <map>
#include <string>

#include "surf/autodiff.hpp"
#include "surf/rng.hpp"

namespace surf {

// Named parameters in a fixed (sorted) order; the order defines reductions.
using ParamStore = std::map<std::string, ad::Matrix>;
using ParamVars = std::map<std::string, ad::Var>;

// Places every parameter on the tape, as variables or as constants.
ParamVars bind(ad::Tape& tape, const ParamStore& params, bool tracked);
// Gradients of the last backward(), shaped like the store.
ParamStore gradients(const ad::Tape& tape, const ParamVars& vars);

const ad::Matrix& param(const ParamStore& params, const std::string& name);
ad::Var param(const ParamVars& vars, const std::string& name);

ParamStore zeros_like(const ParamStore& params);
// a += s * b over matching names.
void axpy(ParamStore& a, double s, const ParamStore& b);
double global_norm(const ParamStore& g);
std::size_t count_scalars(const ParamStore& params);

ad::Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);
ad::Matrix uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng);

}  // namespace surf
