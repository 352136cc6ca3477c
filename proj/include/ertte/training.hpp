#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ertte/backbone.hpp"
#include "ertte/core.hpp"
#include "ertte/errors.hpp"
#include "ertte/losses.hpp"

namespace ertte {

// How the remaining-route term enters the outer update:
//  - FirstOrder: evaluate it at the inner-updated parameters and apply its
//    gradient to the base parameters (no second-order terms).
//  - Joint: evaluate it at the base parameters directly.
enum class MetaMode { FirstOrder, Joint };

inline const char* to_string(MetaMode m) {
    return m == MetaMode::FirstOrder ? "first_order" : "joint";
}

inline MetaMode meta_mode_from_string(const std::string& s) {
    if (s == "first_order") return MetaMode::FirstOrder;
    if (s == "joint") return MetaMode::Joint;
    throw ConfigError("unknown meta_mode: " + s);
}

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-3;
    int epochs = 1;
    int iters_per_epoch = 1;
    int batch_size = 8;
    double split_fraction = 0.3;
    QuantileConfig quantile;
    std::uint64_t seed = 1;
    MetaMode meta_mode = MetaMode::FirstOrder;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (epochs < 1 || iters_per_epoch < 1 || batch_size < 1)
            throw ConfigError("epochs, iters_per_epoch and batch_size must be >= 1");
        if (!(split_fraction > 0.0 && split_fraction < 1.0))
            throw ConfigError("split_fraction must be in (0,1)");
        quantile.validate();
    }
};

// A batch of traveled/remaining tasks; every element needs ground truth.
struct TaskBatch {
    std::vector<RouteSplit> tasks;
};

struct BatchEval {
    double loss = 0.0;  // mean over the batch
    Gradients grads;    // mean over the batch
};

// Mean pre-train loss and gradient over the batch at the given parameters.
// One forward per task covers both the entire-route and traveled-route
// terms: with neutral context the traveled cumulative is a prefix of the
// entire-route cumulative, so their gradients share one backward pass.
inline BatchEval eval_pretrain(const ModelParams& params, const TaskBatch& batch,
                               const QuantileConfig& qcfg) {
    if (batch.tasks.empty()) throw ConfigError("empty task batch");
    BatchEval out;
    out.grads = params.zeros_like();
    for (const auto& task : batch.tasks) {
        const Route& r = *task.route;
        RouteForward fwd = forward_route(params, r);
        const IntervalTriple& entire = fwd.cumulative.back();
        const IntervalTriple& traveled = fwd.cumulative[task.m - 1];
        PretrainLoss pl = pretrain_loss(entire, r.total_time_s(), traveled, task.y_tr, qcfg);
        if (!std::isfinite(pl.value))
            throw NumericError("non-finite pre-train loss on route " + r.route_id);
        out.loss += pl.value;
        std::vector<TripleGrad> tg(r.n(), pl.entire_grad);
        for (std::size_t i = 0; i < task.m; ++i) tg[i] += pl.traveled_grad;
        out.grads.add(backward(params, fwd.cache, tg));
    }
    double inv = 1.0 / static_cast<double>(batch.tasks.size());
    out.loss *= inv;
    out.grads.scale(inv);
    return out;
}

// Mean remaining-route loss and gradient over the batch; forwards carry the
// traveled context. Context inputs are constants, so the backward pass only
// runs through the remaining-segment forward.
inline BatchEval eval_finetune(const ModelParams& params, const TaskBatch& batch,
                               const QuantileConfig& qcfg) {
    if (batch.tasks.empty()) throw ConfigError("empty task batch");
    BatchEval out;
    out.grads = params.zeros_like();
    for (const auto& task : batch.tasks) {
        ContextForward fwd = forward_with_context(params, task.traveled(), task.remaining(),
                                                  task.y_tr, task.split_ts());
        LossValue fl = finetune_loss(fwd.total(), task.y_re(), qcfg);
        if (!std::isfinite(fl.value))
            throw NumericError("non-finite fine-tune loss on route " + task.route->route_id);
        out.loss += fl.value;
        std::vector<TripleGrad> tg(task.remaining().size(), fl.grad);
        out.grads.add(backward(params, fwd.cache, tg));
    }
    double inv = 1.0 / static_cast<double>(batch.tasks.size());
    out.loss *= inv;
    out.grads.scale(inv);
    return out;
}

struct IterationLosses {
    double pretrain = 0.0;
    double finetune = 0.0;
};

// One two-stage update: pre-train forward/backward at the base parameters,
// plain inner gradient step, remaining-route forward/backward (at the inner
// parameters in FirstOrder mode, at the base in Joint), then one Adam step
// on the combined gradient.
inline IterationLosses meta_iteration(ModelParams& params, const TaskBatch& batch,
                                      const TrainConfig& cfg) {
    cfg.validate();
    BatchEval pre = eval_pretrain(params, batch, cfg.quantile);
    ModelParams inner = sgd_step(params, pre.grads, cfg.lr);
    const ModelParams& ft_at = cfg.meta_mode == MetaMode::FirstOrder ? inner : params;
    BatchEval ft = eval_finetune(ft_at, batch, cfg.quantile);
    Gradients combined = pre.grads;
    combined.add(ft.grads);
    adam_step(params, combined, cfg.lr, cfg.weight_decay);
    return {pre.loss, ft.loss};
}

// Single-stage ablation update: both losses evaluated at the base
// parameters, no inner step, one Adam step. Same per-iteration budget of
// forwards and exactly one optimizer step.
inline IterationLosses plain_iteration(ModelParams& params, const TaskBatch& batch,
                                       const TrainConfig& cfg) {
    cfg.validate();
    BatchEval pre = eval_pretrain(params, batch, cfg.quantile);
    BatchEval ft = eval_finetune(params, batch, cfg.quantile);
    Gradients combined = pre.grads;
    combined.add(ft.grads);
    adam_step(params, combined, cfg.lr, cfg.weight_decay);
    return {pre.loss, ft.loss};
}

// Seeded 80/10/10 index partition.
struct DataPartition {
    std::vector<std::size_t> train, val, test;
};

inline DataPartition partition_routes(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw ConfigError("dataset too small to partition: n=" + std::to_string(n));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_train = (n * 8) / 10;
    std::size_t n_val = std::max<std::size_t>(1, n / 10);
    if (n_train == 0) n_train = 1;
    if (n_train + n_val > n) n_train = n - n_val;
    if (n_train == 0) throw ConfigError("dataset too small to partition: n=" + std::to_string(n));
    DataPartition p;
    p.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    p.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    p.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    return p;
}

inline std::vector<RouteSplit> make_tasks(const std::vector<Route>& routes,
                                          std::span<const std::size_t> indices,
                                          double fraction) {
    std::vector<RouteSplit> tasks;
    tasks.reserve(indices.size());
    for (std::size_t i : indices) {
        const Route& r = routes[i];
        if (!r.has_ground_truth())
            throw DataError("route " + r.route_id + " has no ground truth; cannot train on it");
        tasks.push_back(split_route(r, fraction));
    }
    return tasks;
}

// Remaining-route MAPE (percent) with traveled context at fixed parameters;
// the validation metric and the deployment-time re-estimation path.
inline double remaining_mape(const ModelParams& params, std::span<const RouteSplit> tasks) {
    if (tasks.empty()) throw ConfigError("MAPE over empty task set");
    double acc = 0.0;
    for (const auto& task : tasks) {
        ContextForward fwd = forward_with_context(params, task.traveled(), task.remaining(),
                                                  task.y_tr, task.split_ts());
        double y_re = task.y_re();
        if (!(y_re > 0.0)) throw DataError("route " + task.route->route_id + ": y_re <= 0");
        acc += std::abs(fwd.total().point - y_re) / y_re;
    }
    return 100.0 * acc / static_cast<double>(tasks.size());
}

struct TrainResult {
    ModelParams params;  // best-validation checkpoint
    double best_val_mape = 0.0;
    double final_val_mape = 0.0;
    std::int64_t outer_updates = 0;
    std::int64_t inner_updates = 0;
    std::vector<json> log;  // one record per iteration; epoch-end rows carry val_mape
};

namespace detail {

template <typename Step>
TrainResult train_loop(ModelParams params, const std::vector<Route>& routes,
                       const TrainConfig& cfg, bool counts_inner, Step step) {
    cfg.validate();
    if (routes.empty()) throw ConfigError("empty training dataset");
    DataPartition part = partition_routes(routes.size(), cfg.seed);
    std::vector<RouteSplit> train_tasks = make_tasks(routes, part.train, cfg.split_fraction);
    std::vector<RouteSplit> val_tasks = make_tasks(routes, part.val, cfg.split_fraction);

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(train_tasks.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();  // forces a shuffle before the first batch

    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                   train_tasks.size());
    TrainResult result;
    result.params = params;
    result.best_val_mape = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (int it = 1; it <= cfg.iters_per_epoch; ++it) {
            if (cursor + take > order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            TaskBatch batch;
            batch.tasks.reserve(take);
            for (std::size_t b = 0; b < take; ++b) batch.tasks.push_back(train_tasks[order[cursor + b]]);
            cursor += take;

            IterationLosses losses = step(params, batch, cfg);
            result.outer_updates += 1;
            if (counts_inner) result.inner_updates += 1;

            json row{{"epoch", epoch},
                     {"iteration", it},
                     {"loss_pretrain", losses.pretrain},
                     {"loss_finetune", losses.finetune}};
            if (it == cfg.iters_per_epoch) {
                double val = remaining_mape(params, val_tasks);
                row["val_mape"] = val;
                result.final_val_mape = val;
                if (val < result.best_val_mape) {
                    result.best_val_mape = val;
                    result.params = params;
                }
            }
            result.log.push_back(std::move(row));
        }
    }
    return result;
}

}  // namespace detail

// Two-stage training; returns the epoch checkpoint with the best
// validation MAPE on the remaining-route task.
inline TrainResult train_meta(ModelParams params, const std::vector<Route>& routes,
                              const TrainConfig& cfg) {
    return detail::train_loop(std::move(params), routes, cfg, /*counts_inner=*/true,
                              [](ModelParams& p, const TaskBatch& b, const TrainConfig& c) {
                                  return meta_iteration(p, b, c);
                              });
}

// Single-stage ablation baseline under the identical budget and data order.
inline TrainResult train_plain(ModelParams params, const std::vector<Route>& routes,
                               const TrainConfig& cfg) {
    return detail::train_loop(std::move(params), routes, cfg, /*counts_inner=*/false,
                              [](ModelParams& p, const TaskBatch& b, const TrainConfig& c) {
                                  return plain_iteration(p, b, c);
                              });
}

// Same loop shape minimizing the interval-score objective instead of the
// quantile objective; the loss-ablation arm. The width/miss penalties apply
// to both the entire-route and remaining-route terms.
inline TrainResult train_interval_score(ModelParams params, const std::vector<Route>& routes,
                                        const TrainConfig& cfg, double rho = 0.8) {
    auto eval_mis = [rho](const ModelParams& p, const TaskBatch& batch) {
        BatchEval out;
        out.grads = p.zeros_like();
        for (const auto& task : batch.tasks) {
            const Route& r = *task.route;
            RouteForward fwd = forward_route(p, r);
            LossValue en = mis_loss(fwd.cumulative.back(), r.total_time_s(), rho);
            LossValue tr = mis_loss(fwd.cumulative[task.m - 1], task.y_tr, rho);
            if (!std::isfinite(en.value + tr.value))
                throw NumericError("non-finite interval-score loss on route " + r.route_id);
            out.loss += en.value + tr.value;
            std::vector<TripleGrad> tg(r.n(), en.grad);
            for (std::size_t i = 0; i < task.m; ++i) tg[i] += tr.grad;
            out.grads.add(backward(p, fwd.cache, tg));
        }
        double inv = 1.0 / static_cast<double>(batch.tasks.size());
        out.loss *= inv;
        out.grads.scale(inv);
        return out;
    };
    auto eval_mis_ft = [rho](const ModelParams& p, const TaskBatch& batch) {
        BatchEval out;
        out.grads = p.zeros_like();
        for (const auto& task : batch.tasks) {
            ContextForward fwd = forward_with_context(p, task.traveled(), task.remaining(),
                                                      task.y_tr, task.split_ts());
            LossValue fl = mis_loss(fwd.total(), task.y_re(), rho);
            if (!std::isfinite(fl.value))
                throw NumericError("non-finite interval-score loss on route " +
                                   task.route->route_id);
            out.loss += fl.value;
            std::vector<TripleGrad> tg(task.remaining().size(), fl.grad);
            out.grads.add(backward(p, fwd.cache, tg));
        }
        double inv = 1.0 / static_cast<double>(batch.tasks.size());
        out.loss *= inv;
        out.grads.scale(inv);
        return out;
    };
    return detail::train_loop(
        std::move(params), routes, cfg, /*counts_inner=*/true,
        [&](ModelParams& p, const TaskBatch& b, const TrainConfig& c) {
            BatchEval pre = eval_mis(p, b);
            ModelParams inner = sgd_step(p, pre.grads, c.lr);
            const ModelParams& ft_at = c.meta_mode == MetaMode::FirstOrder ? inner : p;
            BatchEval ft = eval_mis_ft(ft_at, b);
            Gradients combined = pre.grads;
            combined.add(ft.grads);
            adam_step(p, combined, c.lr, c.weight_decay);
            return IterationLosses{pre.loss, ft.loss};
        });
}

}  // namespace ertte
