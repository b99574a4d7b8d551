#pragma once

#include <functional>
#include <vector>

namespace surf {

// Gauss-Legendre rule on [-1, 1].
struct GLRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const noexcept { return nodes.size(); }
};

inline constexpr int kMaxGLNodes = 64;

// Newton on P_Q from Chebyshev-like initial guesses; throws for Q outside [1, 64].
GLRule gl_rule(int q);
// Process-wide immutable cache of gl_rule(q).
const GLRule& cached_gl_rule(int q);

// Integral of f over [a, b] with the rule mapped onto the interval.
double gl_integrate(const GLRule& rule, const std::function<double(double)>& f, double a, double b);

// Adaptive Simpson with Richardson correction; used as a reference integrator.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-12,
                        int max_depth = 50);

}  // namespace surf
