#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "surf/errors.hpp"
#include "surf/model.hpp"
#include "surf/sampler.hpp"

using namespace surf;

namespace {

std::vector<double> random_raw(std::size_t n, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

struct GlqHeads {
  HeadConfig cfg;
  ParamStore params;
  GlqHeads() {
    cfg.kind = HeadKind::glq;
    Rng rng(77);
    init_head(cfg, 16, params, rng);
  }
  std::unique_ptr<IntervalHazard> draw(std::mt19937_64& rng) const {
    return make_hazard(cfg, params, random_raw(static_cast<std::size_t>(cfg.glq_hidden), rng, 1.0));
  }
};

// Linear cumulative with a breakpoint, as a hazard without closed-form inverse.
class PiecewiseHazard final : public IntervalHazard {
 public:
  double cumulative(double dt) const override { return dt < 1.0 ? 0.1 * dt : 0.1 + 5.0 * (dt - 1.0); }
  double intensity(double dt) const override { return dt < 1.0 ? 0.1 : 5.0; }
  double floor() const override { return 0.1; }
};

}  // namespace

TEST_CASE("inversion examples") {
  const MoEHazard moe({1.0}, {1.0}, 0.0);
  const InversionResult r = invert(moe, 0.5);
  CHECK(r.converged);
  CHECK(std::abs(r.dt - std::numbers::ln2) <= 1e-4);
  CHECK(r.residual <= 1e-4);
  CHECK(r.within_budget);

  const ConstantHazard two(2.0);
  const InversionResult c = invert(two, 3.0);
  CHECK(c.dt == doctest::Approx(1.5).epsilon(1e-14));
  // For linear Lambda the initial midpoint of [0, 2z / lambda] is the root.
  CHECK(c.iterations <= 1);
  for (double zz : {0.01, 0.7, 13.0, 1e4}) CHECK(invert(two, zz).iterations <= 1);

  const PiecewiseHazard pw;
  const InversionResult p = invert(pw, 2.0);
  CHECK(p.converged);
  CHECK(p.dt == doctest::Approx(1.38).epsilon(1e-5));
  CHECK(p.lo <= p.dt);
  CHECK(p.dt <= p.hi);

  CHECK_THROWS_AS(invert(two, 0.0), ValidationError);
  CHECK_THROWS_AS(invert(two, -1.0), ValidationError);
  NewtonConfig bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = {};
  bad.max_iters = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("a broken floor is reported instead of looping") {
  // Lambda saturates at 1, so z = 2 has no root.
  const MoEHazard sat({1.0}, {1.0}, 0.0);
  CHECK_THROWS_AS(invert(sat, 2.0), NumericError);
}

TEST_CASE("GLQ convergence census") {
  const GlqHeads heads;
  std::mt19937_64 rng(91);
  std::exponential_distribution<double> ez(1.0);
  std::vector<std::unique_ptr<IntervalHazard>> owned;
  std::vector<const IntervalHazard*> hz;
  std::vector<double> z;
  for (int i = 0; i < 10000; ++i) {
    owned.push_back(heads.draw(rng));
    hz.push_back(owned.back().get());
    z.push_back(ez(rng));
  }
  const InversionCensus serial = inversion_census_serial(hz, z);
  MESSAGE("within budget ", serial.within_budget, " / ", serial.total, ", max iterations ", serial.max_iterations);
  CHECK(serial.total == 10000);
  CHECK(serial.converged == 10000);
  CHECK(static_cast<double>(serial.within_budget) >= 0.99 * 10000);
  CHECK(serial.max_residual <= 1e-4);
  CHECK(serial.bracket_violations == 0);

  const InversionCensus par = inversion_census(hz, z, {}, 3);
  CHECK(par.within_budget == serial.within_budget);
  CHECK(par.max_iterations == serial.max_iterations);
  CHECK(par.max_residual == serial.max_residual);
}

TEST_CASE("round trip and bracket invariant on random heads") {
  const GlqHeads glq;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(1e-3, 5.0);
  for (int i = 0; i < 3000; ++i) {
    std::unique_ptr<IntervalHazard> h;
    switch (i % 3) {
      case 0: h = std::make_unique<MoEHazard>(MoEHazard::from_raw(random_raw(8, rng, 1.5), 1e-4)); break;
      case 1: h = std::make_unique<CSBHazard>(CSBHazard::from_raw(random_raw(36, rng, 1.5), 1e-4)); break;
      default: h = glq.draw(rng);
    }
    const double dt = u(rng);
    // Tight tolerance so the round trip is limited by conditioning only.
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const InversionResult r = invert(*h, h->cumulative(dt), cfg);
    CHECK(r.bracket_ok);
    CHECK(r.converged);
    CHECK(std::abs(r.dt - dt) <= std::max(1e-4, 1e-6 * dt));
  }
}

TEST_CASE("sampling a unit-rate stub") {
  const ConstantRateModel unit(1.0);
  Rng rng(5);
  const SampleResult r = sample_sequence(unit, 1000.0, rng);
  const double n = static_cast<double>(r.sequence.size());
  CHECK(std::abs(n - 1000.0) <= 4.0 * std::sqrt(1000.0));
  CHECK_FALSE(r.truncated);
  CHECK(r.sequence.window == 1000.0);
  validate(r.sequence, 1, 0);
  CHECK(r.inversions == r.sequence.size() + 1);

  Rng a(9), b(9);
  CHECK(sample_sequence(unit, 50.0, a).sequence == sample_sequence(unit, 50.0, b).sequence);

  // A horizon shorter than the first draw gives no events.
  Rng c(9);
  Rng probe(9);
  const double first = std::exponential_distribution<double>(1.0)(probe);
  const SampleResult e = sample_sequence(unit, first * 0.5, c);
  CHECK(e.sequence.empty());

  Rng d(3);
  const SampleResult t = sample_sequence(ConstantRateModel(100.0), 1000.0, d, 50);
  CHECK(t.truncated);
  CHECK(t.sequence.size() == 50);
  CHECK_THROWS_AS(sample_sequence(unit, 0.0, d), ValidationError);
}

TEST_CASE("marks follow the model distribution") {
  const ConstantRateModel m(1.0, {0.2, 0.8});
  Rng rng(12);
  const SampleResult r = sample_sequence(m, 5000.0, rng);
  double ones = 0;
  for (const auto& e : r.sequence.events) ones += e.k;
  const double n = static_cast<double>(r.sequence.size());
  CHECK(std::abs(ones / n - 0.8) <= 4.0 * std::sqrt(0.16 / n));
}

TEST_CASE("point prediction and rollout") {
  const ConstantRateModel unit(1.0, {0.3, 0.7});
  const std::vector<MarkedEvent> prefix = {{0.5, 0}, {1.0, 1}};
  const Prediction p = predict_next(unit, prefix);
  CHECK(std::abs(p.tau - std::numbers::ln2) <= 1e-4);
  CHECK(p.mark == 1);
  CHECK(p.mark_probs.size() == 2);
  CHECK(std::abs(predict_next(ConstantRateModel(2.0), prefix).tau - std::numbers::ln2 / 2.0) <= 1e-4);
  const Prediction q = predict_next(unit, prefix, 1.0 - std::exp(-1.0));
  CHECK(std::abs(q.tau - 1.0) <= 1e-4);
  CHECK_THROWS_AS(predict_next(unit, prefix, 1.0), ValidationError);
  CHECK_THROWS_AS(predict_next(unit, prefix, 0.0), ValidationError);

  const auto one = rollout(unit, prefix, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].tau == p.tau);
  CHECK(one[0].mark == p.mark);
  const auto many = rollout(unit, prefix, 10);
  CHECK(many.size() == 10);
  for (const auto& r : many) CHECK(std::abs(r.tau - std::numbers::ln2) <= 1e-4);
  CHECK_THROWS_AS(rollout(unit, prefix, 0), ValidationError);
}

TEST_CASE("rollout on a model gives increasing timestamps") {
  ModelConfig cfg;
  cfg.encoder.num_types = 3;
  cfg.encoder.d_hidden = 8;
  cfg.encoder.num_heads = 2;
  cfg.encoder.num_layers = 1;
  cfg.head.kind = HeadKind::csb;
  const SurfModel model(cfg, 4);
  const std::vector<MarkedEvent> prefix = {{0.1, 2}, {0.3, 0}};
  const auto r = rollout(model, prefix, 10);
  REQUIRE(r.size() == 10);
  double t = prefix.back().t;
  for (const auto& p : r) {
    CHECK(p.tau > 0.0);
    CHECK(t + p.tau > t);
    t += p.tau;
    CHECK(p.mark >= 0);
    CHECK(p.mark < 3);
  }
  Rng a(1), b(1);
  const auto sa = rollout(model, prefix, 5, MarkDecode::sample, &a);
  const auto sb = rollout(model, prefix, 5, MarkDecode::sample, &b);
  for (int i = 0; i < 5; ++i) CHECK(sa[i].mark == sb[i].mark);
  CHECK_THROWS_AS(rollout(model, prefix, 5, MarkDecode::sample, nullptr), ValidationError);

  // Sampling from the model respects the horizon and is reproducible.
  Rng c(2), d(2);
  const auto s1 = sample_sequence(model, 3.0, c);
  CHECK(s1.sequence == sample_sequence(model, 3.0, d).sequence);
  validate(s1.sequence, 3, 0);
}

TEST_CASE("categorical helpers") {
  const double v[] = {0.1, 0.5, 0.5, 0.2};
  CHECK(argmax(v) == 1);
  const double p[] = {0.0, 1.0, 0.0};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) CHECK(draw_categorical(p, rng) == 1);
}
