#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ertte/errors.hpp"

namespace ertte {

using json = nlohmann::json;

enum class RoadClass { Motorway, Arterial, Local };

inline const char* to_string(RoadClass c) {
    switch (c) {
        case RoadClass::Motorway: return "motorway";
        case RoadClass::Arterial: return "arterial";
        case RoadClass::Local: return "local";
    }
    throw ConfigError("unknown road class");
}

inline RoadClass road_class_from_string(const std::string& s) {
    if (s == "motorway") return RoadClass::Motorway;
    if (s == "arterial") return RoadClass::Arterial;
    if (s == "local") return RoadClass::Local;
    throw DataError("unknown road class: " + s);
}

// Segment feature layout: [length/1km, onehot(class) x3, speed/30mps,
// sin/cos hour-of-day, sin/cos day-of-week].
inline constexpr int kSegmentFeatureDim = 9;
inline constexpr double kLengthScaleM = 1000.0;
inline constexpr double kSpeedScaleMps = 30.0;

struct Segment {
    std::string id;
    double length_m = 0.0;
    RoadClass road_class = RoadClass::Local;
    double speed_limit_mps = 0.0;
    // Features at the route's departure time; filled in by Route.
    Eigen::VectorXd feature_vec;

    void validate() const {
        if (!(length_m > 0.0) || !std::isfinite(length_m))
            throw DataError("segment " + id + ": length_m must be > 0");
        if (!(speed_limit_mps > 0.0) || !std::isfinite(speed_limit_mps))
            throw DataError("segment " + id + ": speed_limit_mps must be > 0");
    }
};

inline Eigen::Vector4d time_features(std::int64_t ts) {
    const double two_pi = 2.0 * std::numbers::pi;
    std::int64_t sec = ((ts % 86400) + 86400) % 86400;
    double hour_frac = static_cast<double>(sec) / 86400.0;
    std::int64_t day = ts / 86400 - (ts % 86400 < 0 ? 1 : 0);
    double dow_frac = static_cast<double>(((day % 7) + 7) % 7) / 7.0;
    Eigen::Vector4d t;
    t << std::sin(two_pi * hour_frac), std::cos(two_pi * hour_frac),
        std::sin(two_pi * dow_frac), std::cos(two_pi * dow_frac);
    return t;
}

inline Eigen::VectorXd segment_features(const Segment& s, std::int64_t ts) {
    Eigen::VectorXd f(kSegmentFeatureDim);
    f.setZero();
    f(0) = s.length_m / kLengthScaleM;
    f(1 + static_cast<int>(s.road_class)) = 1.0;
    f(4) = s.speed_limit_mps / kSpeedScaleMps;
    f.segment(5, 4) = time_features(ts);
    if (!f.allFinite()) throw NumericError("non-finite segment features: " + s.id);
    return f;
}

// (lower, point, upper) travel-time estimate in seconds.
struct IntervalTriple {
    double lower = 0.0;
    double point = 0.0;
    double upper = 0.0;

    IntervalTriple() = default;
    IntervalTriple(double lo, double pt, double up) : lower(lo), point(pt), upper(up) {
        validate();
    }

    void validate() const {
        if (!std::isfinite(lower) || !std::isfinite(point) || !std::isfinite(upper))
            throw InvariantError("interval triple has non-finite component");
        if (lower < 0.0)
            throw InvariantError("interval triple has negative component");
        if (!(lower <= point && point <= upper))
            throw InvariantError("interval triple violates lower <= point <= upper");
    }

    IntervalTriple operator+(const IntervalTriple& o) const {
        return IntervalTriple(lower + o.lower, point + o.point, upper + o.upper);
    }
    IntervalTriple& operator+=(const IntervalTriple& o) {
        lower += o.lower;
        point += o.point;
        upper += o.upper;
        return *this;
    }
    bool operator==(const IntervalTriple& o) const = default;

    bool contains(double y) const { return lower <= y && y <= upper; }
    double width() const { return upper - lower; }
};

struct Route {
    std::string route_id;
    std::int64_t departure_ts = 0;
    std::vector<Segment> segments;
    std::optional<std::vector<double>> seg_times_s;

    Route() = default;
    Route(std::string id, std::int64_t departure, std::vector<Segment> segs,
          std::optional<std::vector<double>> times = std::nullopt)
        : route_id(std::move(id)),
          departure_ts(departure),
          segments(std::move(segs)),
          seg_times_s(std::move(times)) {
        finalize();
    }

    std::size_t n() const { return segments.size(); }

    bool has_ground_truth() const { return seg_times_s.has_value(); }

    double total_time_s() const {
        if (!seg_times_s) throw DataError("route " + route_id + " has no ground truth");
        double t = 0.0;
        for (double v : *seg_times_s) t += v;
        return t;
    }

    // Ground-truth elapsed time through segments [0, count).
    double elapsed_through(std::size_t count) const {
        if (!seg_times_s) throw DataError("route " + route_id + " has no ground truth");
        if (count > segments.size())
            throw RangeError("route " + route_id + ": segment count out of range");
        double t = 0.0;
        for (std::size_t i = 0; i < count; ++i) t += (*seg_times_s)[i];
        return t;
    }

    // Validates invariants and computes departure-time segment features.
    void finalize() {
        if (segments.size() < 2)
            throw DataError("route " + route_id + ": needs at least 2 segments");
        for (const auto& s : segments) s.validate();
        if (seg_times_s) {
            if (seg_times_s->size() != segments.size())
                throw DataError("route " + route_id + ": seg_times_s length mismatch");
            for (double t : *seg_times_s)
                if (!(t > 0.0) || !std::isfinite(t))
                    throw DataError("route " + route_id + ": segment times must be > 0");
        }
        for (auto& s : segments) s.feature_vec = segment_features(s, departure_ts);
    }
};

// Traveled/remaining partition of a route at segment index m.
// Holds a pointer into caller-owned route storage.
struct RouteSplit {
    const Route* route = nullptr;
    std::size_t m = 0;
    double y_tr = 0.0;

    std::span<const Segment> traveled() const {
        return std::span<const Segment>(route->segments.data(), m);
    }
    std::span<const Segment> remaining() const {
        return std::span<const Segment>(route->segments.data() + m, route->n() - m);
    }
    // Ground-truth remaining time.
    double y_re() const { return route->total_time_s() - y_tr; }
    // Wall time at the split point.
    std::int64_t split_ts() const {
        return route->departure_ts + static_cast<std::int64_t>(std::llround(y_tr));
    }
};

inline RouteSplit split_route(const Route& route, double fraction) {
    if (route.n() < 2) throw DataError("route " + route.route_id + ": not splittable");
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split fraction must be in (0,1)");
    double n = static_cast<double>(route.n());
    auto m = static_cast<std::size_t>(std::floor(fraction * n + 0.5));
    m = std::clamp<std::size_t>(m, 1, route.n() - 1);
    RouteSplit s;
    s.route = &route;
    s.m = m;
    s.y_tr = route.has_ground_truth() ? route.elapsed_through(m) : 0.0;
    return s;
}

// k contiguous non-empty [begin, end) ranges covering [0, n);
// the first n % k parts take the extra segment.
inline std::vector<std::pair<std::size_t, std::size_t>> checkpoint_boundaries(
    std::size_t n, std::size_t k) {
    if (k < 1 || k > n)
        throw ConfigError("invalid partition: k=" + std::to_string(k) +
                          " for n=" + std::to_string(n));
    std::vector<std::pair<std::size_t, std::size_t>> parts;
    parts.reserve(k);
    std::size_t base = n / k, rem = n % k, begin = 0;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t size = base + (i < rem ? 1 : 0);
        parts.emplace_back(begin, begin + size);
        begin += size;
    }
    return parts;
}

// Per-route record of k cumulative interval estimates.
struct CheckpointProfile {
    std::string route_id;
    std::size_t k = 0;
    std::vector<IntervalTriple> cum;
    IntervalTriple total;
    std::int64_t created_at = 0;
    std::uint64_t generation = 0;

    void validate() const {
        if (cum.size() != k || k == 0) throw InvariantError("profile has wrong part count");
        for (std::size_t i = 1; i < k; ++i) {
            if (cum[i].lower < cum[i - 1].lower || cum[i].point < cum[i - 1].point ||
                cum[i].upper < cum[i - 1].upper)
                throw InvariantError("profile cumulative triples not non-decreasing");
        }
        if (!(cum.back() == total)) throw InvariantError("profile total != last checkpoint");
    }
};

struct QuantileConfig {
    double alpha_lower = 0.1;
    double alpha_point = 0.5;
    double alpha_upper = 0.9;
    double mpiw_weight = 1.0;

    void validate() const {
        if (!(0.0 < alpha_lower && alpha_lower < alpha_point && alpha_point < alpha_upper &&
              alpha_upper < 1.0))
            throw ConfigError("quantiles must satisfy 0 < lower < point < upper < 1");
        if (alpha_point != 0.5) throw ConfigError("alpha_point must be 0.5");
        if (!(mpiw_weight >= 0.0)) throw ConfigError("mpiw_weight must be >= 0");
    }
};

// --- line-delimited route record format ---

inline void to_json(json& j, const IntervalTriple& t) {
    j = json{{"lower", t.lower}, {"point", t.point}, {"upper", t.upper}};
}

inline void from_json(const json& j, IntervalTriple& t) {
    t = IntervalTriple(j.at("lower").get<double>(), j.at("point").get<double>(),
                       j.at("upper").get<double>());
}

inline void to_json(json& j, const Segment& s) {
    j = json{{"id", s.id},
             {"length_m", s.length_m},
             {"road_class", to_string(s.road_class)},
             {"speed_limit_mps", s.speed_limit_mps}};
}

inline void from_json(const json& j, Segment& s) {
    s.id = j.at("id").get<std::string>();
    s.length_m = j.at("length_m").get<double>();
    s.road_class = road_class_from_string(j.at("road_class").get<std::string>());
    s.speed_limit_mps = j.at("speed_limit_mps").get<double>();
}

inline void to_json(json& j, const Route& r) {
    j = json{{"route_id", r.route_id},
             {"departure_ts", r.departure_ts},
             {"segments", r.segments}};
    if (r.seg_times_s) j["seg_times_s"] = *r.seg_times_s;
}

inline void from_json(const json& j, Route& r) {
    r.route_id = j.at("route_id").get<std::string>();
    r.departure_ts = j.at("departure_ts").get<std::int64_t>();
    r.segments = j.at("segments").get<std::vector<Segment>>();
    if (j.contains("seg_times_s"))
        r.seg_times_s = j.at("seg_times_s").get<std::vector<double>>();
    else
        r.seg_times_s.reset();
    r.finalize();
}

}  // namespace ertte
