#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "surf/errors.hpp"
#include "surf/heads.hpp"

using namespace surf;

namespace {

std::vector<double> random_raw(std::size_t n, std::mt19937_64& rng, double sd = 1.5) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

HeadConfig config(HeadKind k, double floor = 1e-4) {
  HeadConfig c;
  c.kind = k;
  c.floor = floor;
  return c;
}

// A GLQ head with its static parameters drawn from the model initializer.
struct GlqFixture {
  HeadConfig cfg = config(HeadKind::glq);
  ParamStore params;
  explicit GlqFixture(std::uint64_t seed, std::size_t d_model = 16) {
    Rng rng(seed);
    init_head(cfg, d_model, params, rng);
  }
  std::unique_ptr<IntervalHazard> hazard(std::mt19937_64& rng) const {
    return make_hazard(cfg, params, random_raw(static_cast<std::size_t>(cfg.glq_hidden), rng, 1.0));
  }
};

}  // namespace

TEST_CASE("analytic MoE and CSB values") {
  const MoEHazard moe({1.0}, {1.0}, 0.0);
  CHECK(moe.cumulative(std::numbers::ln2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(moe.intensity(1.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(moe.cumulative(0.0) == 0.0);

  const CSBHazard csb({1.0}, {1.0}, {0.0}, 0.0);
  CHECK(csb.cumulative(0.0) == 0.0);
  CHECK(csb.intensity(0.0) == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(moe.cumulative(-1e-9), ValidationError);
  CHECK_THROWS_AS(csb.intensity(-1.0), ValidationError);
}

TEST_CASE("GLQ with a constant integrand") {
  for (int q : {1, 2, 8, 64}) {
    const GLQHazard h({0.3, -0.2}, {0.5, 1.0}, {0.0, 0.0}, 0.0, 0.0, &cached_gl_rule(q));
    CHECK(h.cumulative(1.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(h.intensity(0.7) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  }
}

TEST_CASE("raw rows from encodings") {
  HeadConfig moe = config(HeadKind::moe);
  HeadConfig csb = config(HeadKind::csb);
  CHECK(moe.raw_width() == 8);
  CHECK(csb.raw_width() == 36);

  ParamStore params;
  Rng rng(1);
  init_head(moe, 6, params, rng);
  const ad::Matrix& b = param(params, "head.b");
  CHECK(b.data[4] == -2.0);
  CHECK(b.data[7] == 4.0);
  // Zero h and zero weights: gamma_j = softplus(bias_j) + 1e-4 > 0.
  params["head.W"] = ad::Matrix(6, 8);
  ad::Tape tape;
  ParamVars vars = surf::bind(tape, params, false);
  ad::Var H = tape.constant(ad::Matrix(2, 6));
  const ad::Matrix raw = head_raw(vars, H).value();
  const auto h = MoEHazard::from_raw(raw.row_span(0), moe.floor);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(h.gamma()[j] == doctest::Approx(ad::softplus(b.data[4 + j]) + 1e-4).epsilon(1e-15));
    CHECK(h.gamma()[j] > 0.0);
  }
  CHECK(raw.row_span(0)[3] == raw.row_span(1)[3]);
  const ad::Matrix again = head_raw(vars, H).value();
  CHECK(again == raw);

  ParamStore cp;
  init_head(csb, 6, cp, rng);
  const ad::Matrix& cb = param(cp, "head.b");
  for (std::size_t m = 0; m < 12; ++m) {
    CHECK(cb.data[24 + m] >= -3.0);
    CHECK(cb.data[24 + m] <= 3.0);
  }
}

TEST_CASE("intensity is the derivative of the cumulative (MoE, CSB)") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  double worst = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    const MoEHazard moe = MoEHazard::from_raw(random_raw(8, rng), 1e-4);
    const CSBHazard csb = CSBHazard::from_raw(random_raw(36, rng), 1e-4);
    const double dt = u(rng), h = 1e-6;
    for (const IntervalHazard* hz : {static_cast<const IntervalHazard*>(&moe), static_cast<const IntervalHazard*>(&csb)}) {
      const double fd = (hz->cumulative(dt + h) - hz->cumulative(dt - h)) / (2.0 * h);
      const double lam = hz->intensity(dt);
      worst = std::max(worst, std::abs(lam - fd) / std::max(1.0, lam));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("GLQ intensity is the derivative of the converged compensator") {
  GlqFixture fx(5);
  std::mt19937_64 rng(3);
  const GLRule& q64 = cached_gl_rule(64);
  for (int draw = 0; draw < 50; ++draw) {
    const auto hz = fx.hazard(rng);
    const auto& g = dynamic_cast<const GLQHazard&>(*hz);
    const double dt = 0.5, h = 1e-5;
    const double fd = (g.cumulative_with(q64, dt + h) - g.cumulative_with(q64, dt - h)) / (2.0 * h);
    CHECK(std::abs(fd - hz->intensity(dt)) <= 1e-6 * std::max(1.0, hz->intensity(dt)));
  }
}

TEST_CASE("GLQ cumulative_derivative is the exact slope of its quadrature") {
  GlqFixture fx(6);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int draw = 0; draw < 50; ++draw) {
    const auto hz = fx.hazard(rng);
    const double dt = u(rng), h = 1e-6;
    const double fd = (hz->cumulative(dt + h) - hz->cumulative(dt - h)) / (2.0 * h);
    CHECK(std::abs(fd - hz->cumulative_derivative(dt)) <= 1e-7 * std::max(1.0, std::abs(fd)));
  }
  const MoEHazard moe({1.0}, {2.0}, 1e-4);
  CHECK(moe.cumulative_derivative(0.3) == moe.intensity(0.3));
}

TEST_CASE("Lambda(0) = 0 and strict monotonicity with the floor bound") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  GlqFixture fx(7);
  for (int draw = 0; draw < 300; ++draw) {
    const double fl = 1e-4;
    std::vector<std::unique_ptr<IntervalHazard>> hs;
    hs.push_back(std::make_unique<MoEHazard>(MoEHazard::from_raw(random_raw(8, rng), fl)));
    hs.push_back(std::make_unique<CSBHazard>(CSBHazard::from_raw(random_raw(36, rng), fl)));
    hs.push_back(fx.hazard(rng));
    for (const auto& h : hs) {
      CHECK(h->cumulative(0.0) == 0.0);
      double a = u(rng), b = u(rng);
      if (a > b) std::swap(a, b);
      CHECK(h->cumulative(b) - h->cumulative(a) >= fl * (b - a) - 1e-12);
      CHECK(h->intensity(a) > 0.0);
    }
  }
}

TEST_CASE("MoE without a floor has non-increasing intensity") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int draw = 0; draw < 2000; ++draw) {
    const MoEHazard h = MoEHazard::from_raw(random_raw(8, rng, 3.0), 0.0);
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    CHECK(h.intensity(b) <= h.intensity(a) + 1e-12);
  }
}

TEST_CASE("CSB can realize an increasing intensity") {
  const CSBHazard h({1.0}, {2.0}, {-5.0}, 0.0);
  CHECK(h.intensity(1.0) > h.intensity(0.0));
}

TEST_CASE("floor bias over a sequence is at most T * floor") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int s = 0; s < 100; ++s) {
    const double T = 1000.0 * u(rng);
    std::vector<double> cuts = {0.0, T};
    for (int i = 0; i < 20; ++i) cuts.push_back(T * u(rng));
    std::sort(cuts.begin(), cuts.end());
    const auto raw = random_raw(8, rng);
    double diff = 0.0;
    for (std::size_t i = 1; i < cuts.size(); ++i) {
      const double dt = cuts[i] - cuts[i - 1];
      diff += MoEHazard::from_raw(raw, 1e-4).cumulative(dt) - MoEHazard::from_raw(raw, 0.0).cumulative(dt);
    }
    CHECK(diff <= T * 1e-4 + 1e-12);
  }
}

TEST_CASE("closed-form raw gradients agree with the tape") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (HeadKind kind : {HeadKind::moe, HeadKind::csb}) {
    const HeadConfig cfg = config(kind);
    const std::size_t P = static_cast<std::size_t>(cfg.raw_width());
    for (int draw = 0; draw < 100; ++draw) {
      const auto raw = random_raw(P, rng);
      const double dt = u(rng);
      std::vector<double> dcum(P), dlog(P);
      if (kind == HeadKind::moe)
        MoEHazard::from_raw(raw, cfg.floor).raw_gradients(dt, dcum, dlog);
      else
        CSBHazard::from_raw(raw, cfg.floor).raw_gradients(dt, dcum, dlog);

      for (int which = 0; which < 2; ++which) {
        ad::Tape tape;
        ParamVars vars;
        ad::Var r = tape.variable(ad::Matrix::row(raw));
        const double dts[] = {dt};
        ad::Var out = which == 0 ? cumulative(cfg, vars, r, dts) : log_intensity(cfg, vars, r, dts);
        tape.backward(ad::sum(out));
        const ad::Matrix g = tape.grad(r);
        const auto& ref = which == 0 ? dcum : dlog;
        for (std::size_t p = 0; p < P; ++p) CHECK(std::abs(g.data[p] - ref[p]) <= 1e-10 * std::max(1.0, std::abs(ref[p])));
      }
      // Values agree as well.
      ad::Tape tape;
      ParamVars vars;
      ad::Var r = tape.constant(ad::Matrix::row(raw));
      const double dts[] = {dt};
      const auto hz = make_hazard(cfg, ParamStore{}, raw);
      CHECK(cumulative(cfg, vars, r, dts).item() == doctest::Approx(hz->cumulative(dt)).epsilon(1e-13));
      CHECK(log_intensity(cfg, vars, r, dts).item() == doctest::Approx(std::log(hz->intensity(dt))).epsilon(1e-13));
    }
  }
}

TEST_CASE("GLQ tape values match the plain-double hazard") {
  GlqFixture fx(9);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  ad::Tape tape;
  ParamVars vars = surf::bind(tape, fx.params, false);
  const auto raw = random_raw(16 * 3, rng, 1.0);
  ad::Var r = tape.constant(ad::Matrix(3, 16, raw));
  const std::vector<double> dt = {u(rng), u(rng), 0.0};
  const ad::Matrix cum = cumulative(fx.cfg, vars, r, dt).value();
  const ad::Matrix logl = log_intensity(fx.cfg, vars, r, dt).value();
  for (std::size_t i = 0; i < 3; ++i) {
    const auto hz = make_hazard(fx.cfg, fx.params, r.value().row_span(i));
    CHECK(cum.data[i] == doctest::Approx(hz->cumulative(dt[i])).epsilon(1e-13));
    CHECK(logl.data[i] == doctest::Approx(std::log(hz->intensity(dt[i]))).epsilon(1e-13));
  }
  CHECK(cum.data[2] == 0.0);
}

TEST_CASE("learnable floor respects its lower bound") {
  HeadConfig cfg = config(HeadKind::moe, 1e-3);
  cfg.learn_floor = true;
  ParamStore params;
  Rng rng(2);
  init_head(cfg, 4, params, rng);
  CHECK(floor_value(cfg, params) == doctest::Approx(1e-3).epsilon(1e-12));
  params["head.floor_raw"].data[0] = -1e3;
  CHECK(floor_value(cfg, params) >= kFloorLowerBound);
  cfg.floor = 1e-7;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
