#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ertte/backbone.hpp"
#include "ertte/core.hpp"
#include "ertte/datagen.hpp"
#include "ertte/engine.hpp"
#include "ertte/errors.hpp"

namespace ertte {

// Which queries reach the model server:
//  - Random: every en-route query, first come first served.
//  - Greedy: every en-route query, longest remaining distance first.
//  - Gated: only queries whose observed elapsed time falls outside the
//    stored checkpoint interval; in-bounds queries are answered from the
//    profile at zero cost.
enum class Strategy { Random, Greedy, Gated };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::Random: return "random";
        case Strategy::Greedy: return "greedy";
        case Strategy::Gated: return "gated";
    }
    throw ConfigError("unknown strategy");
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "random") return Strategy::Random;
    if (s == "greedy") return Strategy::Greedy;
    if (s == "gated") return Strategy::Gated;
    throw ConfigError("unknown strategy: " + s);
}

struct ServerModel {
    int concurrency = 1;
    double service_time_s = 0.01;
    // Lognormal sigma on per-call service time; 0 = fixed service time.
    double jitter_sigma = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (concurrency < 1) throw ConfigError("server concurrency must be >= 1");
        if (!(service_time_s > 0.0)) throw ConfigError("service time must be > 0");
        if (jitter_sigma < 0.0) throw ConfigError("jitter sigma must be >= 0");
    }
};

struct Workload {
    std::vector<Route> routes;
    std::size_t k = 10;
    std::uint64_t seed = 1;
    std::vector<std::uint8_t> congested;  // per-route flag; empty = all clean

    void validate() const {
        if (routes.empty()) throw ConfigError("workload has no routes");
        for (const auto& r : routes) {
            if (!r.has_ground_truth())
                throw DataError("workload route " + r.route_id + " has no ground truth");
            if (k < 1 || k > r.n())
                throw ConfigError("workload k=" + std::to_string(k) +
                                  " impossible for route " + r.route_id);
        }
        if (!congested.empty() && congested.size() != routes.size())
            throw InvariantError("congestion flag count mismatch");
    }
};

inline Workload make_workload(std::vector<Route> routes, std::size_t k, std::uint64_t seed) {
    Workload w;
    w.routes = std::move(routes);
    w.k = k;
    w.seed = seed;
    w.validate();
    return w;
}

// Multiplies the ground-truth times of a seeded fraction of routes by
// `slowdown` over a contiguous mid-route window, so the observed elapsed
// time exits the stored bounds mid-trip.
inline Workload congestion_scenario(const Workload& base, double fraction, double slowdown) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw ConfigError("congestion fraction must be in [0,1]");
    if (fraction > 0.0 && !(slowdown > 1.0))
        throw ConfigError("congestion slowdown must be > 1");
    Workload out = base;
    out.congested.assign(out.routes.size(), 0);
    std::size_t m = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(out.routes.size())));
    if (m == 0) return out;

    std::vector<std::size_t> idx(out.routes.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 pick(splitmix64(base.seed ^ 0xc0113c7edull));
    std::shuffle(idx.begin(), idx.end(), pick);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());

    for (std::size_t i : idx) {
        Route& r = out.routes[i];
        std::mt19937_64 rng(splitmix64(base.seed ^ (static_cast<std::uint64_t>(i) + 1) ^
                                       0x5eedc0de5eedc0deull));
        std::uniform_real_distribution<double> start_dist(0.25, 0.45);
        std::uniform_real_distribution<double> len_dist(0.25, 0.35);
        double n = static_cast<double>(r.n());
        auto begin = static_cast<std::size_t>(start_dist(rng) * n);
        begin = std::min(begin, r.n() - 2);
        auto len = std::max<std::size_t>(1, static_cast<std::size_t>(len_dist(rng) * n));
        std::size_t end = std::min(begin + len, r.n());
        for (std::size_t s = begin; s < end; ++s) (*r.seg_times_s)[s] *= slowdown;
        out.congested[i] = 1;
    }
    return out;
}

struct AccuracyMetrics {
    double mape = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    double sr = 0.0;  // percent of predictions with relative error <= 10%
};

inline AccuracyMetrics accuracy_metrics(std::span<const std::pair<double, double>> preds) {
    if (preds.empty()) throw ConfigError("accuracy metrics over empty prediction set");
    AccuracyMetrics m;
    double se = 0.0;
    for (const auto& [pred, truth] : preds) {
        if (!(truth > 0.0)) throw DataError("accuracy metrics: label must be > 0");
        double err = std::abs(pred - truth);
        double rel = err / truth;
        m.mape += rel;
        m.mae += err;
        se += err * err;
        if (rel <= 0.10) m.sr += 1.0;
    }
    double inv = 1.0 / static_cast<double>(preds.size());
    m.mape *= 100.0 * inv;
    m.mae *= inv;
    m.rmse = std::sqrt(se * inv);
    m.sr *= 100.0 * inv;
    return m;
}

struct QueryTraceRow {
    std::string route_id;
    std::size_t part = 0;
    double completion_frac = 0.0;
    double arrival_s = 0.0;
    double latency_s = 0.0;
    bool model_invoked = false;
    IntervalTriple predicted_remaining;
    double true_remaining_s = 0.0;
};

struct StrategyReport {
    Strategy strategy = Strategy::Random;
    std::uint64_t model_calls = 0;  // pre-route + model-invoking en-route
    std::uint64_t preroute_calls = 0;
    std::uint64_t enroute_queries = 0;
    std::uint64_t retained = 0;
    std::uint64_t reestimated = 0;
    double busy_time_s = 0.0;
    double makespan_s = 0.0;
    double latency_mean_s = 0.0;
    double latency_median_s = 0.0;
    double latency_p95_s = 0.0;
    double throughput_qps = 0.0;  // answered en-route queries per busy second
    AccuracyMetrics accuracy;
    std::vector<QueryTraceRow> trace;
};

namespace detail {

struct SimJob {
    double arrival = 0.0;
    double service = 0.0;
    double priority = 0.0;  // greedy: remaining distance, larger first
    std::uint64_t seq = 0;
    std::size_t record = SIZE_MAX;  // en-route record index; SIZE_MAX = pre-route
};

struct JobOrder {
    bool by_priority;
    // priority_queue pops the maximum; "less than" here means served later.
    bool operator()(const SimJob& a, const SimJob& b) const {
        if (by_priority && a.priority != b.priority) return a.priority < b.priority;
        if (a.arrival != b.arrival) return a.arrival > b.arrival;
        return a.seq > b.seq;
    }
};

struct QueueOutcome {
    std::vector<double> completion;  // indexed by job seq
    double total_service_s = 0.0;
    double makespan_s = 0.0;
};

// Deterministic capacity-C queue: jobs (already sorted by arrival) wait in
// discipline order; at equal timestamps completions free servers before
// new arrivals join.
inline QueueOutcome run_queue(const std::vector<SimJob>& jobs, int concurrency,
                              bool by_priority) {
    QueueOutcome out;
    out.completion.assign(jobs.size(), 0.0);
    if (jobs.empty()) return out;

    std::priority_queue<SimJob, std::vector<SimJob>, JobOrder> waiting{JobOrder{by_priority}};
    std::priority_queue<double, std::vector<double>, std::greater<>> busy;
    const double inf = std::numeric_limits<double>::infinity();
    std::size_t i = 0;
    double clock = jobs.front().arrival;
    double last_completion = clock;

    while (i < jobs.size() || !waiting.empty() || !busy.empty()) {
        if (!waiting.empty() && static_cast<int>(busy.size()) < concurrency) {
            SimJob j = waiting.top();
            waiting.pop();
            double comp = clock + j.service;
            out.completion[j.seq] = comp;
            out.total_service_s += j.service;
            last_completion = std::max(last_completion, comp);
            busy.push(comp);
            continue;
        }
        double ta = i < jobs.size() ? jobs[i].arrival : inf;
        double tc = !busy.empty() ? busy.top() : inf;
        if (tc <= ta) {
            clock = tc;
            busy.pop();
        } else {
            clock = ta;
            waiting.push(jobs[i]);
            ++i;
        }
    }
    out.makespan_s = last_completion - jobs.front().arrival;
    return out;
}

struct Arrival {
    double time = 0.0;
    std::size_t route = 0;
    std::size_t part = 0;  // 0 = pre-route request, 1..k-1 = en-route query
};

inline std::vector<Arrival> build_arrivals(const Workload& w) {
    std::vector<Arrival> arrivals;
    arrivals.reserve(w.routes.size() * w.k);
    for (std::size_t r = 0; r < w.routes.size(); ++r) {
        const Route& route = w.routes[r];
        auto bounds = checkpoint_boundaries(route.n(), w.k);
        arrivals.push_back({static_cast<double>(route.departure_ts), r, 0});
        for (std::size_t part = 1; part + 1 <= w.k; ++part) {
            double y_tr = route.elapsed_through(bounds[part - 1].second);
            arrivals.push_back({static_cast<double>(route.departure_ts) + y_tr, r, part});
        }
    }
    std::stable_sort(arrivals.begin(), arrivals.end(), [](const Arrival& a, const Arrival& b) {
        if (a.time != b.time) return a.time < b.time;
        if (a.route != b.route) return a.route < b.route;
        return a.part < b.part;
    });
    return arrivals;
}

}  // namespace detail

// Replays the workload under one strategy. Decisions and profile updates
// commit at query arrival time; the capacity-limited server models answer
// latency only. En-route queries arrive at the ground-truth completion
// time of checkpoints 1..k-1; the pre-route request arrives at departure.
inline StrategyReport run_strategy(const Workload& workload, const ServerModel& server,
                                   Strategy strategy, const ModelParams& params,
                                   RemainingMode mode = RemainingMode::PredictedElapsed,
                                   bool collect_trace = false) {
    workload.validate();
    server.validate();
    if (!params.all_finite()) throw NumericError("model parameters are not finite");

    struct Record {
        std::size_t route = 0;
        std::size_t part = 0;
        double arrival = 0.0;
        double latency = 0.0;
        bool model_invoked = false;
        IntervalTriple predicted;
        double true_remaining = 0.0;
    };

    std::vector<detail::Arrival> arrivals = detail::build_arrivals(workload);
    std::vector<Record> records;
    records.reserve(arrivals.size());
    std::vector<detail::SimJob> jobs;
    jobs.reserve(arrivals.size());

    std::mt19937_64 jitter_rng(splitmix64(server.seed ^ 0x5e2c1ce0ull));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto next_service = [&]() {
        return server.jitter_sigma == 0.0
                   ? server.service_time_s
                   : server.service_time_s * std::exp(server.jitter_sigma * normal(jitter_rng));
    };

    Engine engine(params, mode);  // used by Gated only
    std::uint64_t preroute_calls = 0, reestimated = 0, retained = 0;

    for (const auto& ev : arrivals) {
        const Route& route = workload.routes[ev.route];
        auto bounds = checkpoint_boundaries(route.n(), workload.k);
        if (ev.part == 0) {
            if (strategy == Strategy::Gated) {
                engine.preroute_route(route, workload.k);
            } else {
                forward_route(params, route);
            }
            ++preroute_calls;
            double remaining_dist = 0.0;
            for (const auto& s : route.segments) remaining_dist += s.length_m;
            jobs.push_back({ev.time, next_service(), remaining_dist,
                            static_cast<std::uint64_t>(jobs.size()), SIZE_MAX});
            continue;
        }

        std::size_t split = bounds[ev.part - 1].second;
        double y_tr = route.elapsed_through(split);
        double y_re = route.total_time_s() - y_tr;
        auto ts = route.departure_ts + static_cast<std::int64_t>(std::llround(y_tr));
        std::span<const Segment> traveled(route.segments.data(), split);
        std::span<const Segment> remaining(route.segments.data() + split, route.n() - split);

        Record rec;
        rec.route = ev.route;
        rec.part = ev.part;
        rec.arrival = ev.time;
        rec.true_remaining = y_re;

        if (strategy == Strategy::Gated) {
            EnRouteAnswer ans =
                engine.enroute_query({route.route_id, ev.part, y_tr, ts});
            rec.predicted = ans.remaining;
            rec.model_invoked = ans.model_invoked;
            if (ans.decision == Decision::Retained) {
                ++retained;
            } else {
                ++reestimated;
            }
        } else {
            ContextForward fwd = forward_with_context(params, traveled, remaining, y_tr, ts);
            rec.predicted = fwd.cumulative.back();
            rec.model_invoked = true;
            ++reestimated;
        }
        if (rec.model_invoked) {
            double remaining_dist = 0.0;
            for (const auto& s : remaining) remaining_dist += s.length_m;
            jobs.push_back({ev.time, next_service(), remaining_dist,
                            static_cast<std::uint64_t>(jobs.size()), records.size()});
        }
        records.push_back(std::move(rec));
    }

    detail::QueueOutcome q =
        detail::run_queue(jobs, server.concurrency, strategy == Strategy::Greedy);
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (jobs[j].record != SIZE_MAX)
            records[jobs[j].record].latency = q.completion[j] - jobs[j].arrival;
    }

    StrategyReport report;
    report.strategy = strategy;
    report.preroute_calls = preroute_calls;
    report.enroute_queries = records.size();
    report.retained = retained;
    report.reestimated = reestimated;
    report.model_calls = preroute_calls + reestimated;
    report.busy_time_s =
        (server.jitter_sigma == 0.0
             ? static_cast<double>(jobs.size()) * server.service_time_s
             : q.total_service_s) /
        static_cast<double>(server.concurrency);
    report.makespan_s = q.makespan_s;
    report.throughput_qps = report.busy_time_s > 0.0
                                ? static_cast<double>(records.size()) / report.busy_time_s
                                : 0.0;

    if (!records.empty()) {
        std::vector<double> lat;
        lat.reserve(records.size());
        for (const auto& r : records) lat.push_back(r.latency);
        std::sort(lat.begin(), lat.end());
        double sum = 0.0;
        for (double v : lat) sum += v;
        report.latency_mean_s = sum / static_cast<double>(lat.size());
        std::size_t n = lat.size();
        report.latency_median_s = n % 2 == 1 ? lat[n / 2] : 0.5 * (lat[n / 2 - 1] + lat[n / 2]);
        std::size_t rank = static_cast<std::size_t>(
            std::ceil(0.95 * static_cast<double>(n)));
        report.latency_p95_s = lat[std::max<std::size_t>(rank, 1) - 1];

        std::vector<std::pair<double, double>> preds;
        preds.reserve(records.size());
        for (const auto& r : records) preds.emplace_back(r.predicted.point, r.true_remaining);
        report.accuracy = accuracy_metrics(preds);
    }

    if (collect_trace) {
        report.trace.reserve(records.size());
        for (const auto& r : records) {
            report.trace.push_back({workload.routes[r.route].route_id, r.part,
                                    static_cast<double>(r.part) / static_cast<double>(workload.k),
                                    r.arrival, r.latency, r.model_invoked, r.predicted,
                                    r.true_remaining});
        }
    }
    return report;
}

struct SimReport {
    std::size_t routes = 0;
    std::size_t k = 0;
    std::size_t congested_routes = 0;
    std::uint64_t seed = 0;
    ServerModel server;
    RemainingMode mode = RemainingMode::PredictedElapsed;
    std::vector<StrategyReport> strategies;
};

inline SimReport simulate(const Workload& workload, const ServerModel& server,
                          const std::vector<Strategy>& strategies, const ModelParams& params,
                          RemainingMode mode = RemainingMode::PredictedElapsed,
                          bool collect_trace = false) {
    if (strategies.empty()) throw ConfigError("no strategies requested");
    SimReport report;
    report.routes = workload.routes.size();
    report.k = workload.k;
    for (auto c : workload.congested) report.congested_routes += c;
    report.seed = workload.seed;
    report.server = server;
    report.mode = mode;
    for (Strategy s : strategies)
        report.strategies.push_back(
            run_strategy(workload, server, s, params, mode, collect_trace));
    return report;
}

// --- report formats ---

inline void to_json(json& j, const AccuracyMetrics& m) {
    j = json{{"mape", m.mape}, {"mae", m.mae}, {"rmse", m.rmse}, {"sr", m.sr}};
}

inline void to_json(json& j, const ServerModel& s) {
    j = json{{"concurrency", s.concurrency},
             {"service_time_s", s.service_time_s},
             {"jitter_sigma", s.jitter_sigma},
             {"seed", s.seed}};
}

inline void to_json(json& j, const QueryTraceRow& r) {
    j = json{{"route_id", r.route_id},
             {"part", r.part},
             {"completion_frac", r.completion_frac},
             {"arrival_s", r.arrival_s},
             {"latency_s", r.latency_s},
             {"model_invoked", r.model_invoked},
             {"predicted_remaining", r.predicted_remaining},
             {"true_remaining_s", r.true_remaining_s}};
}

inline void to_json(json& j, const StrategyReport& r) {
    j = json{{"strategy", to_string(r.strategy)},
             {"model_calls", r.model_calls},
             {"preroute_calls", r.preroute_calls},
             {"enroute_queries", r.enroute_queries},
             {"retained", r.retained},
             {"reestimated", r.reestimated},
             {"busy_time_s", r.busy_time_s},
             {"makespan_s", r.makespan_s},
             {"latency_mean_s", r.latency_mean_s},
             {"latency_median_s", r.latency_median_s},
             {"latency_p95_s", r.latency_p95_s},
             {"throughput_qps", r.throughput_qps},
             {"accuracy", r.accuracy}};
    if (!r.trace.empty()) j["trace"] = r.trace;
}

inline void to_json(json& j, const SimReport& r) {
    j = json{{"routes", r.routes},
             {"k", r.k},
             {"congested_routes", r.congested_routes},
             {"seed", r.seed},
             {"server", r.server},
             {"remaining_mode", to_string(r.mode)},
             {"strategies", r.strategies}};
}

// Flat companion table: one row per strategy x metric, ready for any
// plotting tool.
inline std::string sim_report_table(const SimReport& report) {
    std::string out = "strategy,metric,value\n";
    auto row = [&](const char* strategy, const char* metric, double value) {
        json v = value;  // shortest round-trip formatting
        out += strategy;
        out += ',';
        out += metric;
        out += ',';
        out += v.dump();
        out += '\n';
    };
    for (const auto& s : report.strategies) {
        const char* name = to_string(s.strategy);
        row(name, "model_calls", static_cast<double>(s.model_calls));
        row(name, "preroute_calls", static_cast<double>(s.preroute_calls));
        row(name, "enroute_queries", static_cast<double>(s.enroute_queries));
        row(name, "retained", static_cast<double>(s.retained));
        row(name, "reestimated", static_cast<double>(s.reestimated));
        row(name, "busy_time_s", s.busy_time_s);
        row(name, "makespan_s", s.makespan_s);
        row(name, "latency_mean_s", s.latency_mean_s);
        row(name, "latency_median_s", s.latency_median_s);
        row(name, "latency_p95_s", s.latency_p95_s);
        row(name, "throughput_qps", s.throughput_qps);
        row(name, "mape", s.accuracy.mape);
        row(name, "mae", s.accuracy.mae);
        row(name, "rmse", s.accuracy.rmse);
        row(name, "sr", s.accuracy.sr);
    }
    return out;
}

struct WallClockResult {
    double seconds = 0.0;
    std::uint64_t queries = 0;
    double queries_per_s = 0.0;
};

// Optional wall-clock mode: drives a real concurrent store from several
// threads. Reported numbers are hardware-dependent and carry no
// correctness contract beyond finishing race-free.
inline WallClockResult benchmark_wall_clock(const Workload& workload,
                                            const ModelParams& params, int threads,
                                            RemainingMode mode = RemainingMode::PredictedElapsed) {
    workload.validate();
    if (threads < 1) throw ConfigError("benchmark needs >= 1 thread");
    Engine engine(params, mode);
    std::atomic<std::uint64_t> answered{0};
    auto start = std::chrono::steady_clock::now();
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t r = static_cast<std::size_t>(t); r < workload.routes.size();
                 r += static_cast<std::size_t>(threads)) {
                const Route& route = workload.routes[r];
                engine.preroute_route(route, workload.k);
                auto bounds = checkpoint_boundaries(route.n(), workload.k);
                for (std::size_t part = 1; part + 1 <= workload.k; ++part) {
                    double y_tr = route.elapsed_through(bounds[part - 1].second);
                    auto ts = route.departure_ts + static_cast<std::int64_t>(std::llround(y_tr));
                    engine.enroute_query({route.route_id, part, y_tr, ts});
                    answered.fetch_add(1, std::memory_order_relaxed);
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    auto stop = std::chrono::steady_clock::now();
    WallClockResult res;
    res.seconds = std::chrono::duration<double>(stop - start).count();
    res.queries = answered.load();
    res.queries_per_s = res.seconds > 0.0 ? static_cast<double>(res.queries) / res.seconds : 0.0;
    return res;
}

}  // namespace ertte
