#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "surf/errors.hpp"
#include "surf/gof.hpp"
#include "surf/objective.hpp"
#include "surf/quadrature.hpp"
#include "surf/sampler.hpp"
#include "surf/synthetic.hpp"

using namespace surf;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// First n inter-arrival gaps of one long sequence.
std::vector<double> first_gaps(const EventSequence& s, std::size_t n) {
  auto tau = s.inter_arrivals();
  REQUIRE(tau.size() >= n);
  tau.resize(n);
  return tau;
}

std::vector<double> first_residuals(const SyntheticSpec& spec, const EventSequence& s, std::size_t n) {
  Dataset ds;
  ds.num_types = spec.num_types;
  ds.sequences = {s};
  auto dz = rescale(spec, ds);
  REQUIRE(dz.size() >= n);
  dz.resize(n);
  return dz;
}

}  // namespace

TEST_CASE("oscillatory rate values") {
  const SyntheticSpec s = preset("spikes");
  CHECK(true_intensity(s, {}, 0.0) == doctest::Approx(20.0).epsilon(1e-15));
  CHECK(true_intensity(s, {}, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(true_intensity(s, {}, 2.0) == doctest::Approx(20.0).epsilon(1e-15));
  CHECK(mean_rate(s) == doctest::Approx(6.59375).epsilon(1e-15));
}

TEST_CASE("true cumulative values") {
  SyntheticSpec h;
  h.kind = SyntheticKind::homogeneous;
  h.rate = 2.0;
  CHECK(true_cumulative(h, {}, 3.0) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(true_cumulative(preset("spikes"), {}, 2.0) == doctest::Approx(13.1875).epsilon(1e-14));
  SyntheticSpec r;
  r.kind = SyntheticKind::ramp;
  r.ramp_a = 0.0;
  r.ramp_b = 1.0;
  CHECK(true_cumulative(r, {}, 2.0) == doctest::Approx(2.0).epsilon(1e-15));
  // After an event at 1 the ramp restarts: 0.5 + 0.5.
  const MarkedEvent ev[] = {{1.0, 0}};
  CHECK(true_cumulative(r, ev, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("analytic compensators agree with adaptive integration") {
  const std::vector<MarkedEvent> hist = {{0.3, 0}, {0.35, 0}, {1.7, 0}, {2.2, 0}};
  std::vector<SyntheticSpec> specs = {preset("spikes"), preset("hawkes"), preset("ramp"), preset("transfer-b")};
  for (const auto& s : specs) {
    for (double t : {0.1, 0.35, 1.0, 2.0, 3.7}) {
      // Integrate piecewise so kinks at event times sit on boundaries.
      double ref = 0.0, a = 0.0;
      for (const auto& e : hist) {
        if (e.t >= t) break;
        ref += adaptive_simpson([&](double x) { return true_intensity(s, hist, x); }, a, e.t, 1e-13);
        a = e.t;
      }
      ref += adaptive_simpson([&](double x) { return true_intensity(s, hist, x); }, a, t, 1e-13);
      CHECK(true_cumulative(s, hist, t) == doctest::Approx(ref).epsilon(1e-10));
    }
  }
}

TEST_CASE("homogeneous count mean") {
  SyntheticSpec s = preset("homogeneous");
  s.trials = 10000;
  s.seed = 3;
  const Dataset ds = generate(s);
  const double mean = static_cast<double>(ds.num_events()) / 10000.0;
  MESSAGE("mean count ", mean);
  CHECK(mean >= 39.0);
  CHECK(mean <= 40.2);
}

TEST_CASE("Hawkes count mean matches its finite-horizon expectation") {
  SyntheticSpec s = preset("hawkes");
  s.trials = 5000;
  s.seed = 4;
  const Dataset ds = generate(s);
  double sum = 0.0, sq = 0.0;
  for (const auto& q : ds.sequences) {
    const double n = static_cast<double>(q.size());
    sum += n;
    sq += n * n;
  }
  const double mean = sum / 5000.0;
  const double sd = std::sqrt(sq / 5000.0 - mean * mean);
  const double se = sd / std::sqrt(5000.0);
  const double expect = expected_count(s, s.T);
  MESSAGE("mean ", mean, " expected ", expect, " stationary ", s.mu * s.T / (1.0 - s.alpha / s.beta), " se ", se);
  CHECK(std::abs(mean - expect) <= 3.0 * se);
}

TEST_CASE("thinning samples rescale to Exp(1)") {
  for (const std::string name : {"spikes", "hawkes", "ramp", "transfer-b"}) {
    SyntheticSpec s = preset(name);
    const double T = 1.3 * 10000.0 / mean_rate(s);
    Rng rng = substream(11, name);
    ThinningStats st;
    const EventSequence seq = thinning_sample(s, T, rng, &st);
    const auto dz = first_residuals(s, seq, 10000);
    const double D = ks_exp1(dz).ks_D;
    MESSAGE(name, " D = ", D);
    CHECK(D <= 1.63 / std::sqrt(10000.0));
    CHECK(st.max_ratio <= 1.0);
    if (name == "spikes") CHECK(D <= 0.02);
  }
}

TEST_CASE("inversion of the true compensator matches thinning") {
  const SyntheticSpec s = preset("spikes");
  const TrueProcessModel truth(s);
  Rng a = substream(21, "inversion");
  const SampleResult inv = sample_sequence(truth, 2000.0, a);
  Rng b = substream(21, "thinning");
  const EventSequence thin = thinning_sample(s, 2000.0, b);
  const double D = ks_two_sample(first_gaps(inv.sequence, 10000), first_gaps(thin, 10000));
  MESSAGE("two-sample D = ", D);
  CHECK(D <= 0.025);
  CHECK(static_cast<double>(inv.within_budget) >= 0.99 * static_cast<double>(inv.inversions));
}

TEST_CASE("the true model as a stub head gives calibrated residuals") {
  SyntheticSpec s = preset("spikes");
  s.trials = 300;
  s.seed = 9;
  const Dataset ds = generate(s);
  REQUIRE(ds.num_events() >= 10000);
  const TrueProcessModel truth(s);
  std::vector<double> dz;
  for (const auto& q : ds.sequences) {
    const auto states = truth.all_states(q);
    const auto r = surf_loss(q, states).residuals.dz;
    dz.insert(dz.end(), r.begin(), r.end());
  }
  CHECK(dz == rescale(s, ds));
  dz.resize(10000);
  CHECK(ks_exp1(dz).ks_D <= 0.02);
  const EvalReport rep = evaluate(truth, ds);
  CHECK(rep.gof.ks_D <= 0.02);
}

TEST_CASE("Hawkes true model tracks the excitation of past events") {
  const SyntheticSpec s = preset("hawkes");
  const TrueProcessModel truth(s);
  const std::vector<MarkedEvent> hist = {{0.5, 0}, {1.0, 0}};
  const auto st = truth.next(hist);
  for (double dt : {0.0, 0.3, 2.0}) {
    CHECK(st.hazard->intensity(dt) == doctest::Approx(true_intensity(s, hist, std::nextafter(1.0 + dt, 2.0))).epsilon(1e-9));
    CHECK(st.hazard->cumulative(dt) ==
          doctest::Approx(true_cumulative(s, hist, 1.0 + dt) - true_cumulative(s, hist, 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("generation is deterministic and thread-independent") {
  SyntheticSpec s = preset("transfer-a");
  s.trials = 40;
  s.seed = 5;
  const Dataset a = generate_serial(s);
  const Dataset b = generate(s, 3);
  REQUIRE(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.sequences[i] == b.sequences[i]);
  for (const auto& q : a.sequences) validate(q, 2, 0);
  bool has1 = false;
  for (const auto& q : a.sequences)
    for (const auto& e : q.events) has1 |= e.k == 1;
  CHECK(has1);

  const auto root = std::filesystem::temp_directory_path() / "surf_synthetic_test";
  std::filesystem::remove_all(root);
  const CorpusFiles f1 = make_corpus(s, root / "one");
  const CorpusFiles f2 = make_corpus(s, root / "two", {0.8, 0.1, 0.1}, 1);
  CHECK(slurp(f1.all) == slurp(f2.all));
  CHECK(slurp(f1.train) == slurp(f2.train));
  CHECK(slurp(f1.test) == slurp(f2.test));
  CHECK(slurp(f1.manifest) == slurp(f2.manifest));
  const Dataset all = load_dataset(f1.all);
  const Dataset tr = load_dataset(f1.train), va = load_dataset(f1.val), te = load_dataset(f1.test);
  CHECK(all.size() == 40);
  CHECK(tr.size() + va.size() + te.size() == 40);
  std::filesystem::remove_all(root);
}

TEST_CASE("presets and spec validation") {
  const SyntheticSpec s = preset("spikes");
  CHECK(s.trials == 200);
  CHECK(s.T == 6.0);
  CHECK(s.num_types == 1);
  SyntheticSpec small = s;
  small.trials = 3;
  for (const auto& q : generate(small).sequences) CHECK(q.window == 6.0);
  CHECK(preset_group("transfer").size() == 3);
  CHECK(preset("transfer-c").num_types == 2);
  CHECK_THROWS_AS(preset("nope"), ValidationError);

  const SyntheticSpec back = synthetic_spec_from_json(to_json(preset("hawkes")));
  CHECK(to_json(back) == to_json(preset("hawkes")));
  CHECK(synthetic_spec_from_json({{"preset", "spikes"}, {"trials", 7}}).trials == 7);

  SyntheticSpec bad = preset("hawkes");
  bad.alpha = bad.beta;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = preset("spikes");
  bad.peak = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = preset("spikes");
  bad.mark_probs = {0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(parse_synthetic_kind("poisson"), ValidationError);
}
