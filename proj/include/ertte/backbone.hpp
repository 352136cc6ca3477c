#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ertte/core.hpp"
#include "ertte/errors.hpp"
#include "ertte/losses.hpp"

namespace ertte {

// Context appended to every remaining-segment input: elapsed time, mean
// traveled features, observed-vs-predicted pace. Neutral context encodes
// to all zeros, so a plain forward is the zero-padded special case.
inline constexpr int kContextFeatureDim = kSegmentFeatureDim + 2;
inline constexpr int kModelInputDim = kSegmentFeatureDim + kContextFeatureDim;
inline constexpr double kElapsedScaleS = 1800.0;
inline constexpr double kPaceRatioMin = 0.25;
inline constexpr double kPaceRatioMax = 4.0;

struct BackboneConfig {
    int input_dim = kModelInputDim;
    int depth = 4;   // hidden ReLU layers before the 3-unit head
    int hidden = 64;
    double output_scale_s = 60.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (input_dim < 1 || depth < 0 || hidden < 1)
            throw ConfigError("backbone config: input_dim/hidden must be >= 1, depth >= 0");
        if (!(output_scale_s > 0.0)) throw ConfigError("backbone output_scale_s must be > 0");
    }
};

struct Layer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;  // out
};

struct Gradients {
    std::vector<Layer> layers;

    void add(const Gradients& o) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].w += o.layers[i].w;
            layers[i].b += o.layers[i].b;
        }
    }
    void scale(double c) {
        for (auto& l : layers) {
            l.w *= c;
            l.b *= c;
        }
    }
    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.w.allFinite() || !l.b.allFinite()) return false;
        return true;
    }
};

struct ModelParams {
    BackboneConfig config;
    std::vector<Layer> layers;
    std::vector<Layer> adam_m;
    std::vector<Layer> adam_v;
    std::int64_t adam_step_count = 0;

    static ModelParams init(const BackboneConfig& cfg) {
        cfg.validate();
        ModelParams p;
        p.config = cfg;
        std::mt19937_64 rng(cfg.seed);
        int in = cfg.input_dim;
        for (int l = 0; l <= cfg.depth; ++l) {
            int out = (l == cfg.depth) ? 3 : cfg.hidden;
            Layer layer;
            layer.w.resize(out, in);
            double limit = std::sqrt(6.0 / static_cast<double>(in));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
                for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = dist(rng);
            layer.b = Eigen::VectorXd::Zero(out);
            p.layers.push_back(std::move(layer));
            in = out;
        }
        p.reset_adam();
        return p;
    }

    ModelParams clone() const { return *this; }

    void reset_adam() {
        adam_m.clear();
        adam_v.clear();
        for (const auto& l : layers) {
            adam_m.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                              Eigen::VectorXd::Zero(l.b.size())});
            adam_v.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                              Eigen::VectorXd::Zero(l.b.size())});
        }
        adam_step_count = 0;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
        return n;
    }

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.w.allFinite() || !l.b.allFinite()) return false;
        return true;
    }

    Gradients zeros_like() const {
        Gradients g;
        for (const auto& l : layers)
            g.layers.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                                Eigen::VectorXd::Zero(l.b.size())});
        return g;
    }
};

struct SegmentPrediction {
    double point_s = 0.0;
    double delta_lower_s = 0.0;
    double delta_upper_s = 0.0;

    IntervalTriple derived() const {
        return IntervalTriple(std::max(point_s - delta_lower_s, 0.0), point_s,
                              point_s + delta_upper_s);
    }
};

inline double softplus(double x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Activations cached by a forward pass; consumed by backward().
struct ForwardCache {
    bool valid = false;
    Eigen::MatrixXd input;                    // n x input_dim
    std::vector<Eigen::MatrixXd> hidden;      // post-ReLU, n x hidden
    Eigen::MatrixXd head_z;                   // n x 3 preactivations
    std::vector<SegmentPrediction> predictions;
};

// Model-invocation counter; incremented once per public forward entry
// point. The decision engine's retained path must leave it untouched.
inline std::atomic<std::uint64_t>& backbone_invocation_counter() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

inline std::uint64_t backbone_invocations() {
    return backbone_invocation_counter().load(std::memory_order_relaxed);
}

namespace detail {

inline ForwardCache forward_batch(const ModelParams& p, Eigen::MatrixXd input) {
    if (input.cols() != p.config.input_dim)
        throw ConfigError("feature dimension mismatch: got " + std::to_string(input.cols()) +
                          ", model expects " + std::to_string(p.config.input_dim));
    if (input.rows() == 0) throw ConfigError("forward pass needs at least one segment");
    if (!input.allFinite()) throw NumericError("non-finite model input");

    ForwardCache cache;
    cache.input = std::move(input);
    Eigen::MatrixXd a = cache.input;
    for (int l = 0; l < p.config.depth; ++l) {
        a = (a * p.layers[static_cast<std::size_t>(l)].w.transpose()).rowwise() +
            p.layers[static_cast<std::size_t>(l)].b.transpose();
        a = a.cwiseMax(0.0);
        cache.hidden.push_back(a);
    }
    cache.head_z = (a * p.layers.back().w.transpose()).rowwise() + p.layers.back().b.transpose();
    if (!cache.head_z.allFinite())
        throw NumericError("non-finite activation in backbone forward pass");

    double s = p.config.output_scale_s;
    cache.predictions.resize(static_cast<std::size_t>(cache.head_z.rows()));
    for (Eigen::Index i = 0; i < cache.head_z.rows(); ++i) {
        cache.predictions[static_cast<std::size_t>(i)] = {softplus(cache.head_z(i, 0)) * s,
                                                          softplus(cache.head_z(i, 1)) * s,
                                                          softplus(cache.head_z(i, 2)) * s};
    }
    cache.valid = true;
    return cache;
}

inline std::vector<IntervalTriple> cumulative_triples(
    const std::vector<SegmentPrediction>& preds) {
    std::vector<IntervalTriple> cum;
    cum.reserve(preds.size());
    IntervalTriple running;
    for (const auto& sp : preds) {
        running += sp.derived();
        cum.push_back(running);
    }
    return cum;
}

inline Eigen::MatrixXd assemble_features(std::span<const Segment> segments, std::int64_t ts,
                                         const Eigen::VectorXd& context) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(segments.size()), kModelInputDim);
    for (std::size_t i = 0; i < segments.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)).head(kSegmentFeatureDim) =
            segment_features(segments[i], ts).transpose();
        x.row(static_cast<Eigen::Index>(i)).tail(kContextFeatureDim) = context.transpose();
    }
    return x;
}

}  // namespace detail

struct TravelContext {
    double y_tr_s = 0.0;
    Eigen::VectorXd mean_traveled = Eigen::VectorXd::Zero(kSegmentFeatureDim);
    double pace_ratio = 1.0;

    static TravelContext neutral() { return TravelContext{}; }

    Eigen::VectorXd encode() const {
        Eigen::VectorXd c(kContextFeatureDim);
        c(0) = y_tr_s / kElapsedScaleS;
        c.segment(1, kSegmentFeatureDim) = mean_traveled;
        c(kContextFeatureDim - 1) =
            std::clamp(pace_ratio, kPaceRatioMin, kPaceRatioMax) - 1.0;
        return c;
    }
};

struct RouteForward {
    std::vector<SegmentPrediction> per_segment;
    std::vector<IntervalTriple> cumulative;
    ForwardCache cache;

    const IntervalTriple& total() const { return cumulative.back(); }
};

// Predicts every segment with neutral context and accumulates the derived
// triples. One model invocation.
inline RouteForward forward_route(const ModelParams& params, std::span<const Segment> segments,
                                  std::int64_t departure_ts) {
    backbone_invocation_counter().fetch_add(1, std::memory_order_relaxed);
    RouteForward out;
    out.cache = detail::forward_batch(
        params,
        detail::assemble_features(segments, departure_ts, TravelContext::neutral().encode()));
    out.per_segment = out.cache.predictions;
    out.cumulative = detail::cumulative_triples(out.per_segment);
    return out;
}

inline RouteForward forward_route(const ModelParams& params, const Route& route) {
    return forward_route(params, std::span<const Segment>(route.segments), route.departure_ts);
}

struct ContextForward {
    std::vector<SegmentPrediction> per_segment;
    std::vector<IntervalTriple> cumulative;
    ForwardCache cache;
    TravelContext context;

    const IntervalTriple& total() const { return cumulative.back(); }
};

// Remaining-route forward with en-route adaptation: elapsed time, the mean
// traveled feature vector and the observed/predicted pace ratio are
// appended to every remaining segment's input. Context is treated as a
// constant input during backprop. One model invocation.
inline ContextForward forward_with_context(const ModelParams& params,
                                           std::span<const Segment> traveled,
                                           std::span<const Segment> remaining, double y_tr,
                                           std::int64_t t) {
    if (remaining.empty()) throw ConfigError("forward_with_context: remaining route is empty");
    backbone_invocation_counter().fetch_add(1, std::memory_order_relaxed);

    TravelContext ctx = TravelContext::neutral();
    if (!traveled.empty() && y_tr > 0.0) {
        std::int64_t departure_ts = t - static_cast<std::int64_t>(std::llround(y_tr));
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(kSegmentFeatureDim);
        for (const auto& s : traveled) mean += segment_features(s, departure_ts);
        mean /= static_cast<double>(traveled.size());

        ForwardCache trav = detail::forward_batch(
            params, detail::assemble_features(traveled, departure_ts,
                                              TravelContext::neutral().encode()));
        double predicted = 0.0;
        for (const auto& sp : trav.predictions) predicted += sp.point_s;

        ctx.y_tr_s = y_tr;
        ctx.mean_traveled = mean;
        ctx.pace_ratio = predicted > 1e-9 ? y_tr / predicted : 1.0;
    }

    ContextForward out;
    out.context = ctx;
    out.cache = detail::forward_batch(params,
                                      detail::assemble_features(remaining, t, ctx.encode()));
    out.per_segment = out.cache.predictions;
    out.cumulative = detail::cumulative_triples(out.per_segment);
    return out;
}

// Backpropagates per-segment (lower, point, upper) gradients through the
// derived-triple map, the softplus head and the ReLU trunk.
inline Gradients backward(const ModelParams& params, const ForwardCache& cache,
                          const std::vector<TripleGrad>& triple_grads) {
    if (!cache.valid) throw StateError("backward called without a forward pass");
    if (triple_grads.size() != cache.predictions.size())
        throw ConfigError("backward: gradient count mismatch");

    const Eigen::Index n = cache.head_z.rows();
    double s = params.config.output_scale_s;
    Eigen::MatrixXd dz(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& sp = cache.predictions[static_cast<std::size_t>(i)];
        const auto& g = triple_grads[static_cast<std::size_t>(i)];
        bool lower_active = sp.point_s - sp.delta_lower_s > 0.0;
        double d_point = g.point + g.upper + (lower_active ? g.lower : 0.0);
        double d_dlo = lower_active ? -g.lower : 0.0;
        double d_dup = g.upper;
        dz(i, 0) = d_point * s * sigmoid(cache.head_z(i, 0));
        dz(i, 1) = d_dlo * s * sigmoid(cache.head_z(i, 1));
        dz(i, 2) = d_dup * s * sigmoid(cache.head_z(i, 2));
    }

    Gradients grads = params.zeros_like();
    const std::size_t head = params.layers.size() - 1;
    const Eigen::MatrixXd& last_act =
        params.config.depth > 0 ? cache.hidden.back() : cache.input;
    grads.layers[head].w = dz.transpose() * last_act;
    grads.layers[head].b = dz.colwise().sum().transpose();

    Eigen::MatrixXd da = dz * params.layers[head].w;
    for (int l = params.config.depth - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        // ReLU mask: post-activation > 0 iff preactivation > 0
        da = da.cwiseProduct(
            (cache.hidden[li].array() > 0.0).cast<double>().matrix());
        const Eigen::MatrixXd& prev = l > 0 ? cache.hidden[li - 1] : cache.input;
        grads.layers[li].w = da.transpose() * prev;
        grads.layers[li].b = da.colwise().sum().transpose();
        if (l > 0) da = da * params.layers[li].w;
    }
    return grads;
}

// Adam with decoupled weight decay; increments the step counter.
inline void adam_step(ModelParams& params, const Gradients& grads, double lr,
                      double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
    if (!grads.all_finite()) throw NumericError("non-finite gradient in adam_step");
    params.adam_step_count += 1;
    double t = static_cast<double>(params.adam_step_count);
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& m = params.adam_m[l];
        auto& v = params.adam_v[l];
        const auto& g = grads.layers[l];
        m.w = beta1 * m.w + (1.0 - beta1) * g.w;
        m.b = beta1 * m.b + (1.0 - beta1) * g.b;
        v.w = beta2 * v.w + (1.0 - beta2) * g.w.cwiseProduct(g.w);
        v.b = beta2 * v.b + (1.0 - beta2) * g.b.cwiseProduct(g.b);
        auto& p = params.layers[l];
        p.w = p.w * (1.0 - lr * weight_decay) -
              lr * (m.w / bc1).cwiseQuotient(((v.w / bc2).cwiseSqrt().array() + eps).matrix());
        p.b = p.b * (1.0 - lr * weight_decay) -
              lr * (m.b / bc1).cwiseQuotient(((v.b / bc2).cwiseSqrt().array() + eps).matrix());
    }
}

// Plain gradient step on a copy; optimizer state is carried over untouched.
inline ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr) {
    if (!grads.all_finite()) throw NumericError("non-finite gradient in sgd_step");
    ModelParams out = params.clone();
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        out.layers[l].w -= lr * grads.layers[l].w;
        out.layers[l].b -= lr * grads.layers[l].b;
    }
    return out;
}

// --- checkpoint container ---

inline json model_to_json(const ModelParams& p) {
    json layers = json::array();
    for (const auto& l : p.layers) {
        std::vector<double> w(l.w.data(), l.w.data() + l.w.size());
        std::vector<double> b(l.b.data(), l.b.data() + l.b.size());
        layers.push_back(json{{"rows", l.w.rows()}, {"cols", l.w.cols()}, {"w", w}, {"b", b}});
    }
    auto stack_to_json = [](const std::vector<Layer>& stack) {
        json out = json::array();
        for (const auto& l : stack) {
            std::vector<double> w(l.w.data(), l.w.data() + l.w.size());
            std::vector<double> b(l.b.data(), l.b.data() + l.b.size());
            out.push_back(json{{"w", w}, {"b", b}});
        }
        return out;
    };
    return json{{"format", "ertte-model"},
                {"version", 1},
                {"config",
                 {{"input_dim", p.config.input_dim},
                  {"depth", p.config.depth},
                  {"hidden", p.config.hidden},
                  {"output_scale_s", p.config.output_scale_s},
                  {"seed", p.config.seed}}},
                {"layers", layers},
                {"adam_step", p.adam_step_count},
                {"adam_m", stack_to_json(p.adam_m)},
                {"adam_v", stack_to_json(p.adam_v)}};
}

inline ModelParams model_from_json(const json& j) {
    if (j.value("format", "") != "ertte-model") throw DataError("not a model checkpoint");
    ModelParams p;
    const auto& c = j.at("config");
    p.config.input_dim = c.at("input_dim").get<int>();
    p.config.depth = c.at("depth").get<int>();
    p.config.hidden = c.at("hidden").get<int>();
    p.config.output_scale_s = c.at("output_scale_s").get<double>();
    p.config.seed = c.at("seed").get<std::uint64_t>();
    p.config.validate();

    auto read_layer = [](const json& lj, Eigen::Index rows, Eigen::Index cols) {
        auto w = lj.at("w").get<std::vector<double>>();
        auto b = lj.at("b").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols ||
            static_cast<Eigen::Index>(b.size()) != rows)
            throw DataError("model checkpoint: layer shape mismatch");
        Layer l;
        l.w = Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols);
        l.b = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
        return l;
    };

    const auto& layers = j.at("layers");
    if (static_cast<int>(layers.size()) != p.config.depth + 1)
        throw DataError("model checkpoint: layer count mismatch");
    Eigen::Index in = p.config.input_dim;
    for (int l = 0; l <= p.config.depth; ++l) {
        const auto& lj = layers.at(static_cast<std::size_t>(l));
        Eigen::Index rows = lj.at("rows").get<Eigen::Index>();
        Eigen::Index cols = lj.at("cols").get<Eigen::Index>();
        if (cols != in || rows != (l == p.config.depth ? 3 : p.config.hidden))
            throw DataError("model checkpoint: unexpected layer dimensions");
        p.layers.push_back(read_layer(lj, rows, cols));
        in = rows;
    }
    p.adam_step_count = j.at("adam_step").get<std::int64_t>();
    const auto& jm = j.at("adam_m");
    const auto& jv = j.at("adam_v");
    if (jm.size() != p.layers.size() || jv.size() != p.layers.size())
        throw DataError("model checkpoint: adam state mismatch");
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        Eigen::Index rows = p.layers[l].w.rows(), cols = p.layers[l].w.cols();
        p.adam_m.push_back(read_layer(jm.at(l), rows, cols));
        p.adam_v.push_back(read_layer(jv.at(l), rows, cols));
    }
    if (!p.all_finite()) throw DataError("model checkpoint contains non-finite values");
    return p;
}

inline void save_model(const ModelParams& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model checkpoint: " + path);
    out << model_to_json(p).dump() << "\n";
    if (!out) throw DataError("failed writing model checkpoint: " + path);
}

inline ModelParams load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read model checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed model checkpoint " + path + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace ertte
