#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "surf/errors.hpp"
#include "surf/event_data.hpp"

using namespace surf;

namespace {
Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}
}  // namespace

TEST_CASE("load: inter-arrivals and survival gap") {
  const Dataset ds = parse(R"({"events":[{"t":1.0,"k":0},{"t":2.5,"k":1}],"T":3.0})");
  REQUIRE(ds.size() == 1);
  CHECK(ds.num_types == 2);
  const auto tau = ds.sequences[0].inter_arrivals();
  CHECK(tau == std::vector<double>{1.0, 1.5});
  CHECK(ds.sequences[0].survival_gap() == 0.5);
}

TEST_CASE("load: empty events are legal") {
  const Dataset ds = parse(R"({"events":[],"T":1.0})");
  REQUIRE(ds.size() == 1);
  CHECK(ds.sequences[0].empty());
  CHECK(ds.sequences[0].survival_gap() == 1.0);
}

TEST_CASE("load: validation and parse errors") {
  try {
    parse("{\"events\":[],\"T\":1.0}\n{\"events\":[{\"t\":2.0,\"k\":0},{\"t\":1.0,\"k\":0}],\"T\":3.0}\n");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("sequence 1") != std::string::npos);
  }
  try {
    parse("{\"events\":[],\"T\":1.0}\n\n{not json}\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(R"({"events":[{"t":1.0,"k":0}],"T":0.5})"), ValidationError);
  CHECK_THROWS_AS(parse(R"({"events":[{"t":0.0,"k":0}],"T":1})"), ValidationError);
  CHECK_THROWS_AS(parse("{\"K\":2}\n{\"events\":[{\"t\":1.0,\"k\":2}],\"T\":3}"), ValidationError);
  CHECK_THROWS_AS(parse(R"({"T":3})"), ParseError);
}

TEST_CASE("header declares K") {
  const Dataset ds = parse("{\"K\":5}\n{\"events\":[{\"t\":1.0,\"k\":1}],\"T\":3}\n");
  CHECK(ds.num_types == 5);
}

TEST_CASE("round trip keeps times to 1e-12 relative") {
  Dataset ds;
  ds.num_types = 3;
  ds.sequences.push_back({{{0.1, 0}, {1.0 / 3.0, 2}, {std::sqrt(2.0), 1}}, 7.0});
  ds.sequences.push_back({{}, 2.5});
  std::ostringstream out;
  write_dataset(out, ds);
  const Dataset back = parse(out.str());
  REQUIRE(back.size() == 2);
  CHECK(back.num_types == 3);
  for (std::size_t i = 0; i < ds.sequences[0].size(); ++i)
    CHECK(std::abs(back.sequences[0].events[i].t - ds.sequences[0].events[i].t) <=
          1e-12 * ds.sequences[0].events[i].t);
  CHECK(back.sequences == ds.sequences);
}

TEST_CASE("normalize") {
  Dataset ds;
  ds.sequences.push_back({{{4.0, 0}}, 8.0});
  const Dataset n = normalize(ds);
  CHECK(n.t_scale == doctest::Approx(8.0 + 1e-8).epsilon(1e-15));
  CHECK(n.sequences[0].events[0].t == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(n.sequences[0].window == doctest::Approx(1.0).epsilon(1e-8));

  Dataset ten;
  ten.sequences.push_back({{{2.0, 0}, {10.0, 0}}, 10.0});
  CHECK(normalize(ten).t_scale == 10.0 + 1e-8);
  CHECK(normalize(ten).sequences[0].events[1].t <= 1.0);

  Dataset unit;
  unit.sequences.push_back({{{0.5, 0}}, 1.0});
  const Dataset u = normalize(unit);
  CHECK(u.t_scale == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(u.sequences[0].events[0].t == doctest::Approx(0.5).epsilon(1e-7));

  Dataset empty;
  empty.sequences.push_back({{}, 4.0});
  CHECK(normalize(empty).t_scale == 1.0);
  CHECK_THROWS_AS(normalize(Dataset{}), ValidationError);

  // De-normalization is the inverse.
  for (double v : {1e-6, 0.37, 12.5}) CHECK(std::abs(denormalize(n, v / n.t_scale) - v) <= 1e-10 * v);

  // Per-sequence mode records one scale per sequence.
  Dataset two;
  two.sequences.push_back({{{1.0, 0}}, 2.0});
  two.sequences.push_back({{{3.0, 0}}, 10.0});
  const Dataset ps = normalize(two, ScaleMode::per_sequence);
  REQUIRE(ps.sequence_scales.size() == 2);
  CHECK(ps.scale_of(1) == doctest::Approx(10.0));
  CHECK(denormalize(ps, ps.sequences[1].events[0].t, 1) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("apply_scale freezes a train scale") {
  Dataset ds;
  ds.sequences.push_back({{{4.0, 0}}, 8.0});
  const Dataset a = apply_scale(ds, 4.0);
  CHECK(a.t_scale == 4.0);
  CHECK(a.sequences[0].events[0].t == 1.0);
  CHECK_THROWS_AS(apply_scale(ds, 0.0), ValidationError);
}

TEST_CASE("split") {
  Dataset ds;
  for (int i = 0; i < 10; ++i) ds.sequences.push_back({{{1.0 + i, 0}}, 20.0});
  const auto parts = split(ds, {0.8, 0.1, 0.1}, 7);
  CHECK(parts[0].size() == 8);
  CHECK(parts[1].size() == 1);
  CHECK(parts[2].size() == 1);
  CHECK(parts[0].split == Split::train);
  const auto again = split(ds, {0.8, 0.1, 0.1}, 7);
  for (int p = 0; p < 3; ++p) CHECK(again[p].sequences == parts[p].sequences);

  std::multiset<double> seen;
  for (const auto& p : parts)
    for (const auto& s : p.sequences) seen.insert(s.events[0].t);
  CHECK(seen.size() == 10);
  CHECK(std::set<double>(seen.begin(), seen.end()).size() == 10);

  CHECK_THROWS_AS(split(ds, {0.5, 0.5, 0.5}, 1), ValidationError);
  Dataset two;
  two.sequences.resize(2);
  CHECK_THROWS_AS(split(two, {0.8, 0.1, 0.1}, 1), ValidationError);
}
