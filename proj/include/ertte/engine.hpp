#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ertte/backbone.hpp"
#include "ertte/core.hpp"
#include "ertte/errors.hpp"

namespace ertte {

enum class Decision { Retained, Reestimated };

inline const char* to_string(Decision d) {
    return d == Decision::Retained ? "retained" : "reestimated";
}

// How the remaining triple is derived from a stored profile on the retain
// path: subtract the predicted traveled components (componentwise), or
// subtract the observed elapsed seconds for the point estimate.
enum class RemainingMode { PredictedElapsed, ObservedElapsed };

inline const char* to_string(RemainingMode m) {
    return m == RemainingMode::PredictedElapsed ? "predicted_elapsed" : "observed_elapsed";
}

inline RemainingMode remaining_mode_from_string(const std::string& s) {
    if (s == "predicted_elapsed") return RemainingMode::PredictedElapsed;
    if (s == "observed_elapsed") return RemainingMode::ObservedElapsed;
    throw ConfigError("unknown remaining mode: " + s);
}

struct EnRouteQuery {
    std::string route_id;
    std::size_t part = 0;  // 1-based checkpoint index, 1 <= part <= k
    double y_tr_s = 0.0;   // observed elapsed seconds through this part
    std::int64_t ts = 0;   // query wall time
};

struct EnRouteAnswer {
    IntervalTriple remaining;
    Decision decision = Decision::Retained;
    // Generation of the profile the retain check was evaluated against.
    std::uint64_t generation = 0;
    bool model_invoked = false;
};

struct CallStats {
    std::uint64_t preroute_calls = 0;
    std::uint64_t enroute_queries = 0;
    std::uint64_t retained = 0;
    std::uint64_t reestimated = 0;

    double retain_fraction() const {
        return enroute_queries == 0
                   ? 0.0
                   : static_cast<double>(retained) / static_cast<double>(enroute_queries);
    }
};

// Derives the remaining-route triple from the stored total and the
// cumulative estimate through the traveled part. Componentwise subtraction
// can produce a disordered triple when the traveled interval is wider than
// the total's headroom; the three values are re-sorted and floored at 0.
inline IntervalTriple remaining_from_profile(const IntervalTriple& total,
                                             const IntervalTriple& traveled_cum, double y_tr,
                                             RemainingMode mode) {
    if (traveled_cum.lower > total.lower || traveled_cum.point > total.point ||
        traveled_cum.upper > total.upper)
        throw InvariantError("traveled cumulative exceeds profile total");
    std::array<double, 3> v{total.lower - traveled_cum.lower,
                            mode == RemainingMode::ObservedElapsed
                                ? total.point - y_tr
                                : total.point - traveled_cum.point,
                            total.upper - traveled_cum.upper};
    std::sort(v.begin(), v.end());
    for (double& x : v) x = std::max(x, 0.0);
    return IntervalTriple(v[0], v[1], v[2]);
}

// Concurrent route_id -> profile map. Lookups share the map lock; each
// profile carries its own mutex so queries on distinct routes never block
// each other and a re-estimation appears atomic to queries on its route.
class TTEStore {
  public:
    struct Entry {
        mutable std::mutex m;
        bool live = true;
        CheckpointProfile profile;
    };

    std::shared_ptr<Entry> insert(CheckpointProfile profile) {
        auto entry = std::make_shared<Entry>();
        entry->profile = std::move(profile);
        std::unique_lock lock(map_mutex_);
        auto [it, inserted] = profiles_.try_emplace(entry->profile.route_id, entry);
        if (!inserted)
            throw ConflictError("live profile already exists for route " +
                                entry->profile.route_id);
        preroute_calls_.fetch_add(1, std::memory_order_relaxed);
        return entry;
    }

    std::shared_ptr<Entry> find(const std::string& route_id) const {
        std::shared_lock lock(map_mutex_);
        auto it = profiles_.find(route_id);
        if (it == profiles_.end())
            throw NotFoundError("no live profile for route " + route_id);
        return it->second;
    }

    // Removes the mapping if it still points at the given entry.
    void erase(const std::string& route_id, const std::shared_ptr<Entry>& entry) {
        std::unique_lock lock(map_mutex_);
        auto it = profiles_.find(route_id);
        if (it != profiles_.end() && it->second == entry) profiles_.erase(it);
    }

    bool evict(const std::string& route_id) {
        std::shared_ptr<Entry> entry;
        {
            std::unique_lock lock(map_mutex_);
            auto it = profiles_.find(route_id);
            if (it == profiles_.end()) return false;
            entry = it->second;
            profiles_.erase(it);
        }
        std::lock_guard entry_lock(entry->m);
        entry->live = false;
        return true;
    }

    std::optional<CheckpointProfile> snapshot(const std::string& route_id) const {
        std::shared_ptr<Entry> entry;
        {
            std::shared_lock lock(map_mutex_);
            auto it = profiles_.find(route_id);
            if (it == profiles_.end()) return std::nullopt;
            entry = it->second;
        }
        std::lock_guard entry_lock(entry->m);
        if (!entry->live) return std::nullopt;
        return entry->profile;
    }

    std::size_t size() const {
        std::shared_lock lock(map_mutex_);
        return profiles_.size();
    }

    void count_retained() { retained_.fetch_add(1, std::memory_order_relaxed); }
    void count_reestimated() { reestimated_.fetch_add(1, std::memory_order_relaxed); }

    // enroute_queries is derived (retained + reestimated), so counter
    // conservation holds at every instant by construction.
    CallStats stats() const {
        CallStats s;
        s.preroute_calls = preroute_calls_.load(std::memory_order_relaxed);
        s.retained = retained_.load(std::memory_order_relaxed);
        s.reestimated = reestimated_.load(std::memory_order_relaxed);
        s.enroute_queries = s.retained + s.reestimated;
        return s;
    }

  private:
    mutable std::shared_mutex map_mutex_;
    std::unordered_map<std::string, std::shared_ptr<Entry>> profiles_;
    std::atomic<std::uint64_t> preroute_calls_{0};
    std::atomic<std::uint64_t> retained_{0};
    std::atomic<std::uint64_t> reestimated_{0};
};

inline CallStats call_stats(const TTEStore& store) { return store.stats(); }

// One full-route forward; cumulative triples are sampled at the k
// checkpoint boundaries and stored under generation 0.
inline CheckpointProfile preroute(TTEStore& store, const ModelParams& params,
                                  const Route& route, std::size_t k) {
    auto bounds = checkpoint_boundaries(route.n(), k);
    RouteForward fwd = forward_route(params, route);
    CheckpointProfile profile;
    profile.route_id = route.route_id;
    profile.k = k;
    profile.cum.reserve(k);
    for (const auto& [begin, end] : bounds) profile.cum.push_back(fwd.cumulative[end - 1]);
    profile.total = profile.cum.back();
    profile.created_at = route.departure_ts;
    profile.generation = 0;
    profile.validate();
    store.insert(profile);
    return profile;
}

// Retain/re-estimate decision for one en-route query.
//
// Retain path: the observed elapsed time lies inside the stored closed
// interval for this checkpoint; the answer is derived from the profile by
// subtraction — no model invocation, O(1).
//
// Re-estimate path: fresh forward over the remaining segments with traveled
// context; checkpoints from this part onward are rebuilt as
// (observed elapsed) + (fresh remaining cumulative), earlier checkpoints
// collapse to the observed anchor (they are never queried again and the
// collapse keeps cumulative monotonicity intact), generation += 1.
//
// Answering the final checkpoint evicts the profile either way.
inline EnRouteAnswer enroute(TTEStore& store, const ModelParams& params,
                             const EnRouteQuery& query, std::span<const Segment> traveled,
                             std::span<const Segment> remaining,
                             RemainingMode mode = RemainingMode::PredictedElapsed) {
    if (!(query.y_tr_s >= 0.0) || !std::isfinite(query.y_tr_s))
        throw DataError("en-route query: y_tr must be finite and >= 0");
    auto entry = store.find(query.route_id);
    std::unique_lock entry_lock(entry->m);
    if (!entry->live) throw NotFoundError("no live profile for route " + query.route_id);
    CheckpointProfile& profile = entry->profile;

    if (query.part < 1 || query.part > profile.k)
        throw RangeError("part index " + std::to_string(query.part) +
                         " outside profile with k=" + std::to_string(profile.k));

    const std::size_t n = traveled.size() + remaining.size();
    auto bounds = checkpoint_boundaries(n, profile.k);
    if (traveled.size() != bounds[query.part - 1].second)
        throw DataError("traveled segment count does not match checkpoint boundary for part " +
                        std::to_string(query.part));

    const IntervalTriple& cum_i = profile.cum[query.part - 1];
    EnRouteAnswer answer;
    answer.generation = profile.generation;

    if (cum_i.contains(query.y_tr_s)) {
        answer.decision = Decision::Retained;
        answer.model_invoked = false;
        answer.remaining = remaining_from_profile(profile.total, cum_i, query.y_tr_s, mode);
        store.count_retained();
    } else {
        answer.decision = Decision::Reestimated;
        if (!remaining.empty()) {
            ContextForward fwd =
                forward_with_context(params, traveled, remaining, query.y_tr_s, query.ts);
            answer.model_invoked = true;
            answer.remaining = fwd.cumulative.back();

            IntervalTriple anchor(query.y_tr_s, query.y_tr_s, query.y_tr_s);
            const std::size_t offset = traveled.size();
            for (std::size_t j = 0; j < profile.k; ++j) {
                if (j < query.part) {
                    profile.cum[j] = anchor;
                } else {
                    std::size_t rel_end = bounds[j].second - offset;
                    profile.cum[j] = anchor + fwd.cumulative[rel_end - 1];
                }
            }
            profile.total = profile.cum.back();
        } else {
            // Arrival notification outside bounds: nothing remains to
            // predict, so no forward runs and the answer is zero.
            answer.model_invoked = false;
            answer.remaining = IntervalTriple(0.0, 0.0, 0.0);
            for (auto& c : profile.cum) c = IntervalTriple(query.y_tr_s, query.y_tr_s, query.y_tr_s);
            profile.total = profile.cum.back();
        }
        profile.generation += 1;
        profile.validate();
        store.count_reestimated();
    }

    bool final_part = query.part == profile.k;
    if (final_part) {
        entry->live = false;
        entry_lock.unlock();
        store.erase(query.route_id, entry);
    }
    return answer;
}

// --- profile / stats record formats ---

inline void to_json(json& j, const CheckpointProfile& p) {
    j = json{{"route_id", p.route_id}, {"k", p.k},         {"cum", p.cum},
             {"total", p.total},       {"created_at", p.created_at},
             {"generation", p.generation}};
}

inline void from_json(const json& j, CheckpointProfile& p) {
    p.route_id = j.at("route_id").get<std::string>();
    p.k = j.at("k").get<std::size_t>();
    p.cum = j.at("cum").get<std::vector<IntervalTriple>>();
    p.total = j.at("total").get<IntervalTriple>();
    p.created_at = j.at("created_at").get<std::int64_t>();
    p.generation = j.at("generation").get<std::uint64_t>();
    p.validate();
}

inline void to_json(json& j, const CallStats& s) {
    j = json{{"preroute_calls", s.preroute_calls},
             {"enroute_queries", s.enroute_queries},
             {"retained", s.retained},
             {"reestimated", s.reestimated},
             {"retain_fraction", s.retain_fraction()}};
}

inline void to_json(json& j, const EnRouteQuery& q) {
    j = json{{"route_id", q.route_id}, {"part", q.part}, {"y_tr_s", q.y_tr_s}, {"ts", q.ts}};
}

inline void from_json(const json& j, EnRouteQuery& q) {
    q.route_id = j.at("route_id").get<std::string>();
    q.part = j.at("part").get<std::size_t>();
    q.y_tr_s = j.at("y_tr_s").get<double>();
    q.ts = j.value("ts", std::int64_t{0});
}

inline void to_json(json& j, const EnRouteAnswer& a) {
    j = json{{"remaining", a.remaining},
             {"decision", to_string(a.decision)},
             {"generation", a.generation},
             {"model_invoked", a.model_invoked}};
}

// Owns the store, the model and a route registry so queries can be served
// from route_id alone (the segment spans are looked up, not resupplied).
class Engine {
  public:
    Engine(ModelParams params, RemainingMode mode = RemainingMode::PredictedElapsed)
        : params_(std::move(params)), mode_(mode) {}

    CheckpointProfile preroute_route(const Route& route, std::size_t k) {
        {
            std::unique_lock lock(routes_mutex_);
            auto [it, inserted] = routes_.try_emplace(route.route_id, route);
            if (!inserted) it->second = route;
        }
        return preroute(store_, params_, route, k);
    }

    EnRouteAnswer enroute_query(const EnRouteQuery& query) {
        Route route;
        {
            std::shared_lock lock(routes_mutex_);
            auto it = routes_.find(query.route_id);
            if (it == routes_.end())
                throw NotFoundError("unknown route " + query.route_id);
            route = it->second;
        }
        auto profile = store_.snapshot(query.route_id);
        if (!profile) throw NotFoundError("no live profile for route " + query.route_id);
        auto bounds = checkpoint_boundaries(route.n(), profile->k);
        if (query.part < 1 || query.part > profile->k)
            throw RangeError("part index " + std::to_string(query.part) +
                             " outside profile with k=" + std::to_string(profile->k));
        std::size_t split = bounds[query.part - 1].second;
        std::span<const Segment> traveled(route.segments.data(), split);
        std::span<const Segment> remaining(route.segments.data() + split, route.n() - split);
        return enroute(store_, params_, query, traveled, remaining, mode_);
    }

    CallStats stats() const { return store_.stats(); }
    std::optional<CheckpointProfile> profile_snapshot(const std::string& route_id) const {
        return store_.snapshot(route_id);
    }
    bool evict(const std::string& route_id) { return store_.evict(route_id); }
    const ModelParams& params() const { return params_; }
    RemainingMode mode() const { return mode_; }
    TTEStore& store() { return store_; }

  private:
    ModelParams params_;
    RemainingMode mode_;
    TTEStore store_;
    mutable std::shared_mutex routes_mutex_;
    std::unordered_map<std::string, Route> routes_;
};

}  // namespace ertte
