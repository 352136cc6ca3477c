#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <vector>

#include "ertte/datagen.hpp"

using namespace ertte;

namespace {

bool routes_identical(const std::vector<Route>& a, const std::vector<Route>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].route_id != b[i].route_id) return false;
    if (a[i].departure_ts != b[i].departure_ts) return false;
    if (a[i].n() != b[i].n()) return false;
    for (std::size_t s = 0; s < a[i].n(); ++s) {
      if (a[i].segments[s].id != b[i].segments[s].id) return false;
      if (a[i].segments[s].length_m != b[i].segments[s].length_m) return false;
      if (a[i].segments[s].road_class != b[i].segments[s].road_class) return false;
      if (a[i].segments[s].speed_limit_mps != b[i].segments[s].speed_limit_mps)
        return false;
    }
    if (a[i].has_ground_truth() != b[i].has_ground_truth()) return false;
    for (std::size_t s = 0; s < a[i].n(); ++s) {
      if ((*a[i].seg_times_s)[s] != (*b[i].seg_times_s)[s]) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  GenConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.route_count = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.segments_min = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.segments_min = 30;
  bad.segments_max = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  for (auto& c : bad.classes) c.weight = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.pace_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.classes[0].noise_sigma = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("generation is deterministic and order independent") {
  GenConfig cfg;
  cfg.route_count = 20;
  cfg.seed = 123;
  auto a = generate(cfg);
  auto b = generate(cfg);
  CHECK(routes_identical(a, b));

  // per-route seeding: any route can be regenerated in isolation
  auto r7 = generate_route(cfg, 7);
  CHECK(r7.route_id == a[7].route_id);
  CHECK(r7.departure_ts == a[7].departure_ts);
  REQUIRE(r7.n() == a[7].n());
  for (std::size_t s = 0; s < r7.n(); ++s)
    CHECK((*r7.seg_times_s)[s] == (*a[7].seg_times_s)[s]);

  GenConfig other = cfg;
  other.seed = 124;
  CHECK_FALSE(routes_identical(a, generate(other)));
}

TEST_CASE("generated routes are structurally valid") {
  GenConfig cfg;
  cfg.route_count = 50;
  cfg.seed = 9;
  auto routes = generate(cfg);
  REQUIRE(routes.size() == 50);

  std::set<std::string> ids;
  for (const auto& r : routes) {
    ids.insert(r.route_id);
    CHECK(r.n() >= cfg.segments_min);
    CHECK(r.n() <= cfg.segments_max);
    CHECK(r.departure_ts >= cfg.departure_start_ts);
    CHECK(r.departure_ts < cfg.departure_start_ts + cfg.departure_span_s);
    REQUIRE(r.has_ground_truth());
    for (std::size_t s = 0; s < r.n(); ++s) {
      const auto& seg = r.segments[s];
      const auto& cp = cfg.classes[static_cast<std::size_t>(seg.road_class)];
      CHECK(seg.length_m >= cp.length_min_m);
      CHECK(seg.length_m <= cp.length_max_m);
      CHECK(seg.speed_limit_mps == cp.base_speed_mps);
      CHECK((*r.seg_times_s)[s] > 0.0);
    }
  }
  CHECK(ids.size() == 50);
}

TEST_CASE("zero noise and unit pace give exact kinematic times") {
  GenConfig cfg;
  cfg.route_count = 10;
  cfg.pace_min = 1.0;
  cfg.pace_max = 1.0;
  for (auto& c : cfg.classes) c.noise_sigma = 0.0;
  auto routes = generate(cfg);
  for (const auto& r : routes) {
    for (std::size_t s = 0; s < r.n(); ++s) {
      double expect = r.segments[s].length_m / r.segments[s].speed_limit_mps;
      CHECK((*r.seg_times_s)[s] == expect);  // bitwise
    }
  }
}

TEST_CASE("noise level does not alter the structural draws") {
  GenConfig clean;
  clean.route_count = 10;
  clean.seed = 31;
  for (auto& c : clean.classes) c.noise_sigma = 0.0;
  GenConfig noisy = clean;
  for (auto& c : noisy.classes) c.noise_sigma = 0.3;

  auto a = generate(clean);
  auto b = generate(noisy);
  bool any_time_differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].n() == b[i].n());
    CHECK(a[i].departure_ts == b[i].departure_ts);
    for (std::size_t s = 0; s < a[i].n(); ++s) {
      CHECK(a[i].segments[s].length_m == b[i].segments[s].length_m);
      CHECK(a[i].segments[s].road_class == b[i].segments[s].road_class);
      if ((*a[i].seg_times_s)[s] != (*b[i].seg_times_s)[s]) any_time_differs = true;
    }
  }
  CHECK(any_time_differs);
}

TEST_CASE("segment noise is lognormal with the configured sigma") {
  GenConfig cfg;
  cfg.route_count = 2000;
  cfg.segments_min = 15;
  cfg.segments_max = 25;
  cfg.pace_min = 1.0;
  cfg.pace_max = 1.0;
  cfg.seed = 77;
  const double sigma = 0.2;
  for (auto& c : cfg.classes) c.noise_sigma = sigma;

  std::vector<double> log_ratio;
  for (const auto& r : generate(cfg)) {
    for (std::size_t s = 0; s < r.n(); ++s) {
      double det = r.segments[s].length_m / r.segments[s].speed_limit_mps;
      log_ratio.push_back(std::log((*r.seg_times_s)[s] / det));
    }
  }
  REQUIRE(log_ratio.size() > 20000);

  double mean = 0.0;
  for (double v : log_ratio) mean += v;
  mean /= static_cast<double>(log_ratio.size());
  double var = 0.0;
  for (double v : log_ratio) var += (v - mean) * (v - mean);
  var /= static_cast<double>(log_ratio.size());
  CHECK(mean == Catch::Approx(0.0).margin(0.005));
  CHECK(std::sqrt(var) == Catch::Approx(sigma).epsilon(0.02));

  std::sort(log_ratio.begin(), log_ratio.end());
  double q90 = log_ratio[static_cast<std::size_t>(0.9 * static_cast<double>(log_ratio.size()))];
  // standard normal 90th percentile: 1.2815515655446004
  CHECK(q90 == Catch::Approx(sigma * 1.2815515655446004).epsilon(0.02));
}

TEST_CASE("doubling every base speed exactly halves every segment time") {
  GenConfig slow;
  slow.route_count = 15;
  slow.seed = 5;
  GenConfig fast = slow;
  for (auto& c : fast.classes) c.base_speed_mps *= 2.0;

  auto a = generate(slow);
  auto b = generate(fast);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].n() == b[i].n());
    for (std::size_t s = 0; s < a[i].n(); ++s) {
      CHECK(a[i].segments[s].length_m == b[i].segments[s].length_m);
      CHECK((*b[i].seg_times_s)[s] == 0.5 * (*a[i].seg_times_s)[s]);  // bitwise
    }
  }
}

TEST_CASE("route files round trip exactly") {
  GenConfig cfg;
  cfg.route_count = 12;
  cfg.seed = 19;
  auto routes = generate(cfg);

  const std::string path = "routes_roundtrip_test.jsonl";
  save_routes(routes, path);
  auto loaded = load_routes(path);
  std::remove(path.c_str());
  CHECK(routes_identical(routes, loaded));
}

TEST_CASE("strict loading names the offending line") {
  const std::string path = "routes_strict_test.jsonl";
  {
    GenConfig cfg;
    cfg.route_count = 2;
    auto routes = generate(cfg);
    std::ofstream out(path);
    out << json(routes[0]).dump() << "\n";
    out << "{ this is not json\n";
    out << json(routes[1]).dump() << "\n";
  }
  try {
    load_routes(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(path + ":2:") != std::string::npos);
  }

  std::vector<std::string> warnings;
  auto loaded = load_routes(path, /*lenient=*/true, &warnings);
  CHECK(loaded.size() == 2);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find(":2:") != std::string::npos);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_routes("no_such_route_file.jsonl"), DataError);
}

TEST_CASE("loading skips blank lines and validates route content") {
  const std::string path = "routes_content_test.jsonl";
  {
    GenConfig cfg;
    cfg.route_count = 1;
    auto routes = generate(cfg);
    json j = routes[0];
    std::ofstream out(path);
    out << "\n";  // blank
    out << j.dump() << "\n";
    j["seg_times_s"][0] = -5.0;  // invalid ground truth
    out << j.dump() << "\n";
  }
  CHECK_THROWS_AS(load_routes(path), DataError);
  std::vector<std::string> warnings;
  auto loaded = load_routes(path, true, &warnings);
  CHECK(loaded.size() == 1);
  CHECK(warnings.size() == 1);
  std::remove(path.c_str());
}
