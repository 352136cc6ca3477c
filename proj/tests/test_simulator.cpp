#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ertte/simulator.hpp"
#include "helpers.hpp"

using namespace ertte;
using ertte::testing::test_segment;

namespace {

constexpr double kC = 0.6931471805599453 * 60.0;  // constant-model per-segment point

ModelParams constant_model() {
  BackboneConfig cfg;
  cfg.depth = 1;
  cfg.hidden = 4;
  auto p = ModelParams::init(cfg);
  for (auto& l : p.layers) l.w.setZero();
  return p;
}

ModelParams random_model(std::uint64_t seed = 5) {
  BackboneConfig cfg;
  cfg.depth = 2;
  cfg.hidden = 8;
  cfg.seed = seed;
  return ModelParams::init(cfg);
}

// n segments, constant per-segment ground-truth time.
Route uniform_route(const std::string& id, std::size_t n, double seg_time,
                    double seg_length = 500.0, std::int64_t departure = 1704067200) {
  std::vector<Segment> segs;
  std::vector<double> times;
  for (std::size_t i = 0; i < n; ++i) {
    segs.push_back(test_segment(id + "s" + std::to_string(i), seg_length,
                                RoadClass::Arterial, 13.9));
    times.push_back(seg_time);
  }
  return Route(id, departure, std::move(segs), std::move(times));
}

}  // namespace

TEST_CASE("strategy and server plumbing") {
  CHECK(strategy_from_string("random") == Strategy::Random);
  CHECK(strategy_from_string("greedy") == Strategy::Greedy);
  CHECK(strategy_from_string("gated") == Strategy::Gated);
  CHECK_THROWS_AS(strategy_from_string("eager"), ConfigError);

  ServerModel s;
  CHECK_NOTHROW(s.validate());
  s.concurrency = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ServerModel{};
  s.service_time_s = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ServerModel{};
  s.jitter_sigma = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("workload validation") {
  std::vector<Route> routes;
  routes.push_back(uniform_route("a", 10, 30.0));
  auto w = make_workload(routes, 5, 1);
  CHECK(w.routes.size() == 1);

  CHECK_THROWS_AS(make_workload({}, 5, 1), ConfigError);
  CHECK_THROWS_AS(make_workload(routes, 11, 1), ConfigError);  // k > n

  Route bare("bare", 0,
             {test_segment("b0", 100, RoadClass::Local, 10),
              test_segment("b1", 100, RoadClass::Local, 10)});
  CHECK_THROWS_AS(make_workload({bare}, 2, 1), DataError);

  Workload flagged = w;
  flagged.congested = {1, 0};
  CHECK_THROWS_AS(flagged.validate(), InvariantError);
}

TEST_CASE("accuracy metric formulas on fixed points") {
  std::vector<std::pair<double, double>> preds = {{95.0, 100.0}, {80.0, 100.0}};
  auto m = accuracy_metrics(preds);
  CHECK(m.mape == Catch::Approx(12.5).epsilon(1e-12));
  CHECK(m.mae == Catch::Approx(12.5).epsilon(1e-12));
  CHECK(m.rmse == Catch::Approx(std::sqrt(212.5)).epsilon(1e-12));
  CHECK(m.sr == Catch::Approx(50.0).epsilon(1e-12));

  // the 10% relative-error boundary counts as a success
  std::vector<std::pair<double, double>> edge = {{90.0, 100.0}};
  CHECK(accuracy_metrics(edge).sr == 100.0);
  std::vector<std::pair<double, double>> above = {{110.0, 100.0}};
  CHECK(accuracy_metrics(above).sr == 100.0);
  std::vector<std::pair<double, double>> outside = {{110.2, 100.0}};
  CHECK(accuracy_metrics(outside).sr == 0.0);

  CHECK_THROWS_AS(accuracy_metrics({}), ConfigError);
  std::vector<std::pair<double, double>> bad = {{10.0, 0.0}};
  CHECK_THROWS_AS(accuracy_metrics(bad), DataError);
}

TEST_CASE("single-route queue timeline is exact") {
  // n = k = 5, one-second segments: pre-route at t0, queries at t0+1..4.
  // With a 10 s service time every answer waits behind the previous one.
  std::vector<Route> routes = {uniform_route("a", 5, 1.0)};
  auto w = make_workload(routes, 5, 1);
  ServerModel server;
  server.service_time_s = 10.0;

  auto rep = run_strategy(w, server, Strategy::Random, constant_model(),
                          RemainingMode::PredictedElapsed, true);
  CHECK(rep.preroute_calls == 1);
  CHECK(rep.enroute_queries == 4);
  CHECK(rep.model_calls == 5);
  CHECK(rep.retained == 0);
  CHECK(rep.reestimated == 4);

  REQUIRE(rep.trace.size() == 4);
  CHECK(rep.trace[0].latency_s == Catch::Approx(19.0));
  CHECK(rep.trace[1].latency_s == Catch::Approx(28.0));
  CHECK(rep.trace[2].latency_s == Catch::Approx(37.0));
  CHECK(rep.trace[3].latency_s == Catch::Approx(46.0));
  CHECK(rep.latency_mean_s == Catch::Approx(32.5));
  CHECK(rep.latency_median_s == Catch::Approx(32.5));
  CHECK(rep.latency_p95_s == Catch::Approx(46.0));
  CHECK(rep.makespan_s == Catch::Approx(50.0));
  CHECK(rep.busy_time_s == Catch::Approx(50.0));
  CHECK(rep.throughput_qps == Catch::Approx(4.0 / 50.0));

  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rep.trace[i].part == i + 1);
    CHECK(rep.trace[i].completion_frac ==
          Catch::Approx(static_cast<double>(i + 1) / 5.0));
    CHECK(rep.trace[i].true_remaining_s ==
          Catch::Approx(4.0 - static_cast<double>(i)));
    CHECK(rep.trace[i].model_invoked);
  }
}

TEST_CASE("gated strategy answers in-bound queries from the profile") {
  // constant model: cumulative upper bound is 2c per segment, so routes
  // whose true pace stays below that are never re-estimated.
  std::vector<Route> routes;
  for (int i = 0; i < 5; ++i)
    routes.push_back(uniform_route("r" + std::to_string(i), 10, kC));
  auto w = make_workload(routes, 5, 1);
  ServerModel server;  // 0.01 s service

  auto before = backbone_invocations();
  auto gated = run_strategy(w, server, Strategy::Gated, constant_model(),
                            RemainingMode::PredictedElapsed, true);
  auto gated_cost = backbone_invocations() - before;

  CHECK(gated.preroute_calls == 5);
  CHECK(gated.enroute_queries == 20);  // 4 per route
  CHECK(gated.retained == 20);
  CHECK(gated.reestimated == 0);
  CHECK(gated.model_calls == 5);
  CHECK(gated_cost == 5);  // only the pre-route forwards touched the model

  // retained answers are free: latency 0, served outside the queue
  for (const auto& row : gated.trace) {
    CHECK_FALSE(row.model_invoked);
    CHECK(row.latency_s == 0.0);
  }

  auto random = run_strategy(w, server, Strategy::Random, constant_model());
  CHECK(random.model_calls == 25);

  // busy time is exactly calls x service / concurrency with zero jitter
  CHECK(gated.busy_time_s == 5.0 * 0.01);
  CHECK(random.busy_time_s == 25.0 * 0.01);
  double ratio = gated.throughput_qps / random.throughput_qps;
  CHECK(std::abs(ratio - 5.0) < 1e-9);  // = call ratio 25/5

  // retained-query accuracy comes from profile subtraction exactly:
  // remaining point = (10 - split) * c for the constant model.
  for (const auto& row : gated.trace) {
    double split = static_cast<double>(row.part) * 2.0;
    CHECK(row.predicted_remaining.point ==
          Catch::Approx((10.0 - split) * kC).epsilon(1e-12));
  }
}

TEST_CASE("greedy reorders the backlog by remaining distance") {
  // Route a: five 2000 m segments; route b: five 100 m segments departing
  // one second later. One server, 100 s per call: everything queues behind
  // a's pre-route, so the discipline fully determines completion order.
  std::vector<Route> routes = {uniform_route("a", 5, 1.0, 2000.0),
                               uniform_route("b", 5, 1.0, 100.0, 1704067200)};
  routes[1].departure_ts += 1;  // b arrives just after a
  routes[1].finalize();
  auto w = make_workload(routes, 5, 1);
  ServerModel server;
  server.service_time_s = 100.0;

  auto fifo = run_strategy(w, server, Strategy::Random, constant_model(),
                           RemainingMode::PredictedElapsed, true);
  auto greedy = run_strategy(w, server, Strategy::Greedy, constant_model(),
                             RemainingMode::PredictedElapsed, true);

  // same work and same queries either way
  CHECK(fifo.model_calls == greedy.model_calls);
  CHECK(fifo.busy_time_s == greedy.busy_time_s);
  CHECK(fifo.makespan_s == greedy.makespan_s);
  CHECK(fifo.accuracy.mape == greedy.accuracy.mape);
  CHECK(fifo.accuracy.rmse == greedy.accuracy.rmse);

  auto mean_latency = [](const StrategyReport& rep, const std::string& id) {
    double sum = 0.0;
    int count = 0;
    for (const auto& row : rep.trace) {
      if (row.route_id == id) {
        sum += row.latency_s;
        ++count;
      }
    }
    return sum / count;
  };
  // long-remaining queries jump the line under greedy
  CHECK(mean_latency(greedy, "a") < mean_latency(fifo, "a"));
  CHECK(mean_latency(greedy, "b") > mean_latency(fifo, "b"));
}

TEST_CASE("simulation runs are deterministic") {
  GenConfig gcfg;
  gcfg.route_count = 12;
  gcfg.segments_min = 10;
  gcfg.segments_max = 20;
  gcfg.seed = 3;
  auto w = make_workload(generate(gcfg), 5, 7);
  ServerModel server;
  auto model = random_model();

  auto a = simulate(w, server, {Strategy::Random, Strategy::Gated}, model);
  auto b = simulate(w, server, {Strategy::Random, Strategy::Gated}, model);
  CHECK(json(a).dump() == json(b).dump());

  REQUIRE(a.strategies.size() == 2);
  CHECK(a.routes == 12);
  CHECK(a.k == 5);
  CHECK(a.congested_routes == 0);

  // jittered service times are seeded too
  ServerModel jittered = server;
  jittered.jitter_sigma = 0.5;
  auto c = simulate(w, jittered, {Strategy::Random}, model);
  auto d = simulate(w, jittered, {Strategy::Random}, model);
  CHECK(json(c).dump() == json(d).dump());
  CHECK(c.strategies[0].busy_time_s != a.strategies[0].busy_time_s);
}

TEST_CASE("congestion scenario rewrites a seeded subset of routes") {
  GenConfig gcfg;
  gcfg.route_count = 10;
  gcfg.segments_min = 10;
  gcfg.segments_max = 16;
  gcfg.seed = 21;
  auto base = make_workload(generate(gcfg), 5, 11);

  auto none = congestion_scenario(base, 0.0, 3.0);
  CHECK(std::count(none.congested.begin(), none.congested.end(), 1) == 0);
  for (std::size_t i = 0; i < base.routes.size(); ++i) {
    for (std::size_t s = 0; s < base.routes[i].n(); ++s)
      CHECK((*none.routes[i].seg_times_s)[s] == (*base.routes[i].seg_times_s)[s]);
  }

  auto some = congestion_scenario(base, 0.3, 3.0);
  CHECK(std::count(some.congested.begin(), some.congested.end(), 1) == 3);
  auto all = congestion_scenario(base, 1.0, 3.0);
  CHECK(std::count(all.congested.begin(), all.congested.end(), 1) == 10);

  // flagged routes carry one contiguous slowdown window
  for (std::size_t i = 0; i < all.routes.size(); ++i) {
    std::vector<std::size_t> touched;
    for (std::size_t s = 0; s < base.routes[i].n(); ++s) {
      double ratio = (*all.routes[i].seg_times_s)[s] / (*base.routes[i].seg_times_s)[s];
      if (ratio != 1.0) {
        CHECK(ratio == Catch::Approx(3.0).epsilon(1e-12));
        touched.push_back(s);
      }
    }
    REQUIRE(!touched.empty());
    CHECK(touched.back() - touched.front() + 1 == touched.size());  // contiguous
    CHECK(touched.front() >= 1);  // never the first segment
  }

  // deterministic selection
  auto again = congestion_scenario(base, 0.3, 3.0);
  CHECK(again.congested == some.congested);

  CHECK_THROWS_AS(congestion_scenario(base, 1.1, 3.0), ConfigError);
  CHECK_THROWS_AS(congestion_scenario(base, 0.5, 1.0), ConfigError);

  auto rep = simulate(some, ServerModel{}, {Strategy::Gated}, random_model());
  CHECK(rep.congested_routes == 3);
}

TEST_CASE("congestion drives re-estimations under the gated strategy") {
  // clean constant-pace routes are always retained by the constant model,
  // whose intervals tolerate up to a doubled cumulative pace; a 5x window
  // pushes the elapsed time out of bounds mid-route.
  std::vector<Route> routes;
  for (int i = 0; i < 10; ++i)
    routes.push_back(uniform_route("r" + std::to_string(i), 12, kC));
  auto base = make_workload(routes, 6, 5);
  auto hit = congestion_scenario(base, 0.5, 5.0);

  auto rep = run_strategy(hit, ServerModel{}, Strategy::Gated, constant_model(),
                          RemainingMode::PredictedElapsed, true);
  CHECK(rep.retained > 0);
  CHECK(rep.reestimated > 0);
  CHECK(rep.retained + rep.reestimated == rep.enroute_queries);
  CHECK(rep.model_calls == rep.preroute_calls + rep.reestimated);

  // every re-estimation happened on a congested route
  for (const auto& row : rep.trace) {
    if (row.model_invoked) {
      auto idx = static_cast<std::size_t>(row.route_id[1] - '0');
      CHECK(hit.congested[idx] == 1);
    }
  }
}

TEST_CASE("report table is schema stable") {
  std::vector<Route> routes = {uniform_route("a", 10, 30.0)};
  auto w = make_workload(routes, 5, 1);
  auto rep = simulate(w, ServerModel{}, {Strategy::Random, Strategy::Gated},
                      constant_model());
  auto table = sim_report_table(rep);

  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < table.size()) {
    auto nl = table.find('\n', pos);
    lines.push_back(table.substr(pos, nl - pos));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 1 + 2 * 15);  // header + 15 metrics per strategy
  CHECK(lines[0] == "strategy,metric,value");
  CHECK(lines[1].rfind("random,model_calls,", 0) == 0);
  CHECK(lines[16].rfind("gated,model_calls,", 0) == 0);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 2);
  }
}

TEST_CASE("simulation surfaces bad inputs") {
  std::vector<Route> routes = {uniform_route("a", 10, 30.0)};
  auto w = make_workload(routes, 5, 1);
  auto nan_model = constant_model();
  nan_model.layers[0].w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(run_strategy(w, ServerModel{}, Strategy::Random, nan_model),
                  NumericError);
  CHECK_THROWS_AS(simulate(w, ServerModel{}, {}, constant_model()), ConfigError);
}

TEST_CASE("wall-clock benchmark completes race free") {
  GenConfig gcfg;
  gcfg.route_count = 10;
  gcfg.segments_min = 8;
  gcfg.segments_max = 12;
  auto w = make_workload(generate(gcfg), 4, 1);
  auto res = benchmark_wall_clock(w, random_model(), 2);
  CHECK(res.queries == 10 * 3);
  CHECK(res.seconds > 0.0);
  CHECK(res.queries_per_s > 0.0);
  CHECK_THROWS_AS(benchmark_wall_clock(w, random_model(), 0), ConfigError);
}
