#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "ertte/core.hpp"

namespace ertte::testing {

// Bitwise equality for Eigen matrices/vectors of double.
template <typename A, typename B>
bool same_bits(const A& a, const B& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(),
                       sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

inline Segment test_segment(const std::string& id, double length_m, RoadClass cls,
                            double speed_mps) {
    Segment s;
    s.id = id;
    s.length_m = length_m;
    s.road_class = cls;
    s.speed_limit_mps = speed_mps;
    return s;
}

// Deterministic small route with mildly varied segments and ground truth.
inline Route test_route(const std::string& id, std::size_t n_segments,
                        std::uint64_t seed = 1, std::int64_t departure = 1704067200) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> len(120.0, 2200.0);
    std::uniform_real_distribution<double> pace(0.8, 1.3);
    std::uniform_int_distribution<int> cls(0, 2);
    std::vector<Segment> segs;
    std::vector<double> times;
    for (std::size_t i = 0; i < n_segments; ++i) {
        RoadClass c = static_cast<RoadClass>(cls(rng));
        double speed = c == RoadClass::Motorway ? 27.8 : (c == RoadClass::Arterial ? 13.9 : 8.3);
        double length = len(rng);
        segs.push_back(test_segment(id + "s" + std::to_string(i), length, c, speed));
        times.push_back(length / speed * pace(rng));
    }
    return Route(id, departure, std::move(segs), std::move(times));
}

}  // namespace ertte::testing
