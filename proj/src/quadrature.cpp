#include "surf/quadrature.hpp"

#include <array>
#include <cmath>
#include <mutex>
#include <numbers>

#include "surf/errors.hpp"

namespace surf {

namespace {

// P_n(x) and P_n'(x) by the three-term recurrence.
void legendre(int n, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  if (n == 0) {
    p = 1.0;
    dp = 0.0;
    return;
  }
  for (int k = 2; k <= n; ++k) {
    const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = pk;
  }
  p = p1;
  dp = n * (x * p1 - p0) / (x * x - 1.0);
}

double simpson_step(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                    double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

GLRule gl_rule(int q) {
  if (q < 1 || q > kMaxGLNodes)
    throw ValidationError("heads", "Gauss-Legendre order " + std::to_string(q) + " outside [1, 64]");
  GLRule rule;
  rule.nodes.resize(q);
  rule.weights.resize(q);
  if (q == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = 2.0;
    return rule;
  }
  for (int i = 1; i <= q; ++i) {
    double x = std::cos(std::numbers::pi * (i - 0.25) / (q + 0.5));
    double p = 0.0, dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      legendre(q, x, p, dp);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) <= 1e-14) break;
    }
    legendre(q, x, p, dp);
    // Roots come out in decreasing order; store ascending.
    rule.nodes[q - i] = x;
    rule.weights[q - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

const GLRule& cached_gl_rule(int q) {
  static std::array<GLRule, kMaxGLNodes + 1> cache;
  static std::array<std::once_flag, kMaxGLNodes + 1> once;
  if (q < 1 || q > kMaxGLNodes) return cache[0] = gl_rule(q);  // throws
  std::call_once(once[q], [q] { cache[q] = gl_rule(q); });
  return cache[q];
}

double gl_integrate(const GLRule& rule, const std::function<double(double)>& f, double a, double b) {
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.size(); ++i) s += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return half * s;
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol, int max_depth) {
  if (a == b) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace surf
