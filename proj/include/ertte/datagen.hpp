#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ertte/core.hpp"
#include "ertte/errors.hpp"

namespace ertte {

struct ClassParams {
    double base_speed_mps = 10.0;
    double noise_sigma = 0.2;  // lognormal sigma on segment travel time
    double length_min_m = 100.0;
    double length_max_m = 1000.0;
    double weight = 1.0;  // relative draw frequency

    void validate() const {
        if (!(base_speed_mps > 0.0)) throw ConfigError("base speed must be > 0");
        if (noise_sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
        if (!(0.0 < length_min_m && length_min_m <= length_max_m))
            throw ConfigError("invalid segment length range");
        if (!(weight >= 0.0)) throw ConfigError("class weight must be >= 0");
    }
};

struct GenConfig {
    std::size_t route_count = 100;
    std::size_t segments_min = 10;
    std::size_t segments_max = 40;
    // Indexed by RoadClass: motorway, arterial, local.
    std::array<ClassParams, 3> classes{{{27.8, 0.2, 800.0, 3000.0, 0.20},
                                        {13.9, 0.2, 300.0, 1200.0, 0.45},
                                        {8.3, 0.2, 80.0, 500.0, 0.35}}};
    std::int64_t departure_start_ts = 1704067200;  // a Monday 00:00 UTC
    std::int64_t departure_span_s = 7 * 86400;
    // Route-level driver pace multiplier, log-uniform; > 1 is faster than
    // the posted speed, < 1 slower. This is the dominant source of
    // route-to-route variance and the signal the traveled context carries.
    double pace_min = 0.65;
    double pace_max = 1.55;
    std::uint64_t seed = 1;

    void validate() const {
        if (route_count == 0) throw ConfigError("route_count must be >= 1");
        if (segments_min < 2 || segments_min > segments_max)
            throw ConfigError("segment count range must satisfy 2 <= min <= max");
        double wsum = 0.0;
        for (const auto& c : classes) {
            c.validate();
            wsum += c.weight;
        }
        if (!(wsum > 0.0)) throw ConfigError("class weights sum to zero");
        if (departure_span_s < 1) throw ConfigError("departure span must be >= 1s");
        if (!(0.0 < pace_min && pace_min <= pace_max))
            throw ConfigError("invalid pace multiplier range");
    }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// One route from its own derived seed, so generation order (or
// parallelism) cannot change the output. Draw order is fixed: segment
// count, departure, pace, then per segment (class, length, noise draw).
// The noise draw happens even at sigma 0, so configs differing only in
// sigma or base speeds share all structural draws.
inline Route generate_route(const GenConfig& cfg, std::size_t index) {
    std::mt19937_64 rng(splitmix64(cfg.seed ^ static_cast<std::uint64_t>(index)));

    std::uniform_int_distribution<std::size_t> n_dist(cfg.segments_min, cfg.segments_max);
    std::size_t n = n_dist(rng);
    std::uniform_int_distribution<std::int64_t> dep_dist(
        cfg.departure_start_ts, cfg.departure_start_ts + cfg.departure_span_s - 1);
    std::int64_t departure = dep_dist(rng);
    std::uniform_real_distribution<double> pace_dist(std::log(cfg.pace_min),
                                                     std::log(cfg.pace_max));
    double pace = std::exp(pace_dist(rng));

    double wsum = 0.0;
    for (const auto& c : cfg.classes) wsum += c.weight;

    std::vector<Segment> segments;
    segments.reserve(n);
    std::vector<double> times;
    times.reserve(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t s = 0; s < n; ++s) {
        double u = unit(rng) * wsum;
        int cls = 0;
        for (; cls < 2; ++cls) {
            if (u < cfg.classes[static_cast<std::size_t>(cls)].weight) break;
            u -= cfg.classes[static_cast<std::size_t>(cls)].weight;
        }
        const ClassParams& cp = cfg.classes[static_cast<std::size_t>(cls)];
        std::uniform_real_distribution<double> len_dist(cp.length_min_m, cp.length_max_m);
        double length = len_dist(rng);
        double z = normal(rng);

        Segment seg;
        seg.id = "r" + std::to_string(index) + "s" + std::to_string(s);
        seg.length_m = length;
        seg.road_class = static_cast<RoadClass>(cls);
        seg.speed_limit_mps = cp.base_speed_mps;
        segments.push_back(std::move(seg));

        double det = length / (cp.base_speed_mps * pace);
        times.push_back(det * std::exp(cp.noise_sigma * z));
    }
    return Route("r" + std::to_string(index), departure, std::move(segments),
                 std::move(times));
}

inline std::vector<Route> generate(const GenConfig& cfg) {
    cfg.validate();
    std::vector<Route> routes;
    routes.reserve(cfg.route_count);
    for (std::size_t i = 0; i < cfg.route_count; ++i) routes.push_back(generate_route(cfg, i));
    return routes;
}

// --- line-delimited route files ---

inline void save_routes(const std::vector<Route>& routes, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write route file: " + path);
    for (const auto& r : routes) {
        json j = r;
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("failed writing route file: " + path);
}

// Strict mode (default) rejects the whole file on the first malformed
// line, naming it; lenient mode skips bad lines and reports them through
// `warnings`.
inline std::vector<Route> load_routes(const std::string& path, bool lenient = false,
                                      std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read route file: " + path);
    std::vector<Route> routes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            routes.push_back(json::parse(line).get<Route>());
        } catch (const std::exception& e) {
            std::string msg = path + ":" + std::to_string(line_no) + ": " + e.what();
            if (!lenient) throw DataError(msg);
            if (warnings) warnings->push_back(msg);
        }
    }
    return routes;
}

}  // namespace ertte
