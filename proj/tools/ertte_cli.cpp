// Operator entry point: data generation, training, evaluation, workload
// simulation, the serving loop, and a stats client for a running service.

#include <csignal>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ertte/backbone.hpp"
#include "ertte/core.hpp"
#include "ertte/datagen.hpp"
#include "ertte/engine.hpp"
#include "ertte/errors.hpp"
#include "ertte/serve.hpp"
#include "ertte/simulator.hpp"
#include "ertte/training.hpp"

namespace {

ertte::Service* g_service = nullptr;

void stop_service(int) {
    if (g_service) g_service->stop();
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ertte::DataError("cannot write " + path);
    out << content;
    if (!out) throw ertte::DataError("failed writing " + path);
}

// Keeps every subcommand deterministic: the same partition the trainer used
// is recovered from (dataset size, seed).
std::vector<ertte::Route> select_partition(const std::vector<ertte::Route>& routes,
                                           const std::string& which, std::uint64_t seed) {
    if (which == "all") return routes;
    ertte::DataPartition part = ertte::partition_routes(routes.size(), seed);
    const std::vector<std::size_t>* idx = nullptr;
    if (which == "train")
        idx = &part.train;
    else if (which == "val")
        idx = &part.val;
    else if (which == "test")
        idx = &part.test;
    else
        throw ertte::ConfigError("unknown partition: " + which);
    std::vector<ertte::Route> out;
    out.reserve(idx->size());
    for (std::size_t i : *idx) out.push_back(routes[i]);
    return out;
}

struct GenArgs {
    std::string out;
    ertte::GenConfig cfg;
    double sigma = -1.0;  // <0 keeps per-class defaults
};

struct TrainArgs {
    std::string data, out = "model.json", metrics;
    ertte::TrainConfig cfg;
    int depth = 4, hidden = 64;
    double out_scale = 60.0;
    std::string trainer = "meta";
    std::string meta_mode = "first_order";
    std::string loss = "quantile";
    double mis_rho = 0.8;
};

struct EvalArgs {
    std::string data, model, out, partition = "test";
    double split_fraction = 0.3;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

struct SimArgs {
    std::string data, model, out, table, partition = "test";
    std::size_t routes = 0;  // 0 = whole partition
    std::size_t k = 10;
    std::string strategies = "gated,random,greedy";
    std::string mode = "predicted_elapsed";
    ertte::ServerModel server;
    double congestion_fraction = 0.0;
    double slowdown = 3.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool trace = false;
    int bench_threads = 0;  // >0 adds a wall-clock benchmark block
};

struct ServeArgs {
    std::string model, host = "127.0.0.1", mode = "predicted_elapsed";
    int port = 8080;
    int threads = 8;
};

struct StatsArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
};

void run_gen(const GenArgs& a) {
    ertte::GenConfig cfg = a.cfg;
    if (a.sigma >= 0.0)
        for (auto& c : cfg.classes) c.noise_sigma = a.sigma;
    std::vector<ertte::Route> routes = ertte::generate(cfg);
    ertte::save_routes(routes, a.out);
    std::cout << ertte::json{{"routes", routes.size()}, {"path", a.out}}.dump(2) << "\n";
}

void run_train(const TrainArgs& a) {
    std::vector<ertte::Route> routes = ertte::load_routes(a.data);
    if (routes.empty()) throw ertte::DataError("dataset " + a.data + " is empty");

    ertte::BackboneConfig bcfg;
    bcfg.depth = a.depth;
    bcfg.hidden = a.hidden;
    bcfg.output_scale_s = a.out_scale;
    bcfg.seed = a.cfg.seed;
    ertte::ModelParams params = ertte::ModelParams::init(bcfg);

    ertte::TrainConfig cfg = a.cfg;
    cfg.meta_mode = ertte::meta_mode_from_string(a.meta_mode);

    ertte::TrainResult result;
    if (a.loss == "interval_score") {
        result = ertte::train_interval_score(std::move(params), routes, cfg, a.mis_rho);
    } else if (a.loss != "quantile") {
        throw ertte::ConfigError("unknown loss: " + a.loss);
    } else if (a.trainer == "meta") {
        result = ertte::train_meta(std::move(params), routes, cfg);
    } else if (a.trainer == "plain") {
        result = ertte::train_plain(std::move(params), routes, cfg);
    } else {
        throw ertte::ConfigError("unknown trainer: " + a.trainer);
    }

    ertte::save_model(result.params, a.out);
    if (!a.metrics.empty()) {
        std::string lines;
        for (const auto& row : result.log) {
            lines += row.dump();
            lines += '\n';
        }
        write_text(a.metrics, lines);
    }
    std::cout << ertte::json{{"model", a.out},
                             {"trainer", a.loss == "interval_score" ? "interval_score"
                                                                    : a.trainer},
                             {"best_val_mape", result.best_val_mape},
                             {"final_val_mape", result.final_val_mape},
                             {"outer_updates", result.outer_updates},
                             {"inner_updates", result.inner_updates}}
                     .dump(2)
              << "\n";
}

void run_eval(const EvalArgs& a) {
    ertte::ModelParams params = ertte::load_model(a.model);
    std::vector<ertte::Route> all = ertte::load_routes(a.data);
    if (all.empty()) throw ertte::DataError("dataset " + a.data + " is empty");
    std::uint64_t seed = a.seed_set ? a.seed : params.config.seed;
    std::vector<ertte::Route> routes = select_partition(all, a.partition, seed);
    if (routes.empty()) throw ertte::ConfigError("selected partition is empty");

    std::vector<std::pair<double, double>> remaining_preds;
    std::size_t covered = 0;
    double width_sum = 0.0;
    for (const auto& r : routes) {
        ertte::RouteForward full = ertte::forward_route(params, r);
        if (full.total().contains(r.total_time_s())) ++covered;
        width_sum += full.total().width();
        ertte::RouteSplit split = ertte::split_route(r, a.split_fraction);
        ertte::ContextForward fwd = ertte::forward_with_context(
            params, split.traveled(), split.remaining(), split.y_tr, split.split_ts());
        remaining_preds.emplace_back(fwd.total().point, split.y_re());
    }
    ertte::AccuracyMetrics m = ertte::accuracy_metrics(remaining_preds);
    ertte::json out{{"routes", routes.size()},
                    {"partition", a.partition},
                    {"mape", m.mape},
                    {"mae", m.mae},
                    {"rmse", m.rmse},
                    {"sr", m.sr},
                    {"coverage", static_cast<double>(covered) /
                                     static_cast<double>(routes.size())},
                    {"mean_width_s", width_sum / static_cast<double>(routes.size())}};
    if (a.out.empty())
        std::cout << out.dump(2) << "\n";
    else
        write_text(a.out, out.dump(2) + "\n");
}

void run_simulate(const SimArgs& a) {
    ertte::ModelParams params = ertte::load_model(a.model);
    std::vector<ertte::Route> all = ertte::load_routes(a.data);
    if (all.empty()) throw ertte::DataError("dataset " + a.data + " is empty");
    std::uint64_t seed = a.seed_set ? a.seed : params.config.seed;
    std::vector<ertte::Route> routes = select_partition(all, a.partition, seed);
    if (a.routes > 0) {
        if (a.routes > routes.size())
            throw ertte::ConfigError("requested " + std::to_string(a.routes) +
                                     " routes, partition has " +
                                     std::to_string(routes.size()));
        routes.resize(a.routes);
    }

    ertte::Workload workload = ertte::make_workload(std::move(routes), a.k, seed);
    if (a.congestion_fraction > 0.0)
        workload = ertte::congestion_scenario(workload, a.congestion_fraction, a.slowdown);

    std::vector<ertte::Strategy> strategies;
    std::string item;
    std::stringstream ss(a.strategies);
    while (std::getline(ss, item, ','))
        if (!item.empty()) strategies.push_back(ertte::strategy_from_string(item));

    ertte::SimReport report =
        ertte::simulate(workload, a.server, strategies, params,
                        ertte::remaining_mode_from_string(a.mode), a.trace);
    ertte::json j = report;
    if (a.bench_threads > 0) {
        ertte::WallClockResult bench = ertte::benchmark_wall_clock(
            workload, params, a.bench_threads, ertte::remaining_mode_from_string(a.mode));
        j["wall_clock"] = ertte::json{{"threads", a.bench_threads},
                                      {"seconds", bench.seconds},
                                      {"queries", bench.queries},
                                      {"queries_per_s", bench.queries_per_s}};
    }
    if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");
    if (!a.table.empty()) write_text(a.table, ertte::sim_report_table(report));
    std::cout << j.dump(2) << "\n";
}

void run_serve(const ServeArgs& a) {
    ertte::ModelParams params = ertte::load_model(a.model);
    ertte::Engine engine(std::move(params), ertte::remaining_mode_from_string(a.mode));
    ertte::Service service(engine, a.threads);
    g_service = &service;
    std::signal(SIGINT, stop_service);
    std::signal(SIGTERM, stop_service);
    std::cerr << "listening on " << a.host << ":" << a.port << "\n";
    if (!service.listen(a.host, a.port))
        throw ertte::ConfigError("cannot bind " + a.host + ":" + std::to_string(a.port));
    g_service = nullptr;
    std::cout << ertte::json(engine.stats()).dump(2) << "\n";
}

void run_stats(const StatsArgs& a) {
    httplib::Client client(a.host, a.port);
    auto res = client.Get("/stats");
    if (!res)
        throw ertte::DataError("cannot reach " + a.host + ":" + std::to_string(a.port));
    if (res->status != 200)
        throw ertte::DataError("stats request failed with status " +
                               std::to_string(res->status));
    std::cout << res->body << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interval travel-time estimation toolkit"};
    app.require_subcommand(1);
    app.set_config("--config");

    GenArgs gen;
    auto* cmd_gen = app.add_subcommand("gen", "generate a synthetic route dataset");
    cmd_gen->add_option("--out", gen.out, "output route file (line-delimited records)")
        ->required()
        ->envname("ERTTE_OUT");
    cmd_gen->add_option("--routes", gen.cfg.route_count, "number of routes");
    cmd_gen->add_option("--seg-min", gen.cfg.segments_min, "minimum segments per route");
    cmd_gen->add_option("--seg-max", gen.cfg.segments_max, "maximum segments per route");
    cmd_gen->add_option("--sigma", gen.sigma, "lognormal noise sigma for all road classes");
    cmd_gen->add_option("--pace-min", gen.cfg.pace_min, "slowest route pace multiplier");
    cmd_gen->add_option("--pace-max", gen.cfg.pace_max, "fastest route pace multiplier");
    cmd_gen->add_option("--departure-start", gen.cfg.departure_start_ts,
                        "departure window start (unix seconds)");
    cmd_gen->add_option("--departure-span", gen.cfg.departure_span_s,
                        "departure window length (seconds)");
    cmd_gen->add_option("--seed", gen.cfg.seed, "generation seed")->envname("ERTTE_SEED");
    cmd_gen->callback([&] { run_gen(gen); });

    TrainArgs train;
    auto* cmd_train = app.add_subcommand("train", "train a model on a route dataset");
    cmd_train->add_option("--data", train.data, "route dataset")
        ->required()
        ->envname("ERTTE_DATA")
        ->check(CLI::ExistingFile);
    cmd_train->add_option("--out", train.out, "model checkpoint path")->envname("ERTTE_MODEL");
    cmd_train->add_option("--metrics", train.metrics, "training metrics log (line-delimited)");
    cmd_train->add_option("--epochs", train.cfg.epochs, "training epochs");
    cmd_train->add_option("--iters", train.cfg.iters_per_epoch, "iterations per epoch");
    cmd_train->add_option("--batch", train.cfg.batch_size, "task batch size");
    cmd_train->add_option("--lr", train.cfg.lr, "learning rate");
    cmd_train->add_option("--weight-decay", train.cfg.weight_decay, "decoupled weight decay");
    cmd_train->add_option("--split-fraction", train.cfg.split_fraction,
                          "traveled fraction of each training route");
    cmd_train->add_option("--mpiw-weight", train.cfg.quantile.mpiw_weight,
                          "width-penalty weight on the traveled interval");
    cmd_train->add_option("--alpha-lower", train.cfg.quantile.alpha_lower, "lower quantile");
    cmd_train->add_option("--alpha-upper", train.cfg.quantile.alpha_upper, "upper quantile");
    cmd_train->add_option("--depth", train.depth, "hidden layers");
    cmd_train->add_option("--hidden", train.hidden, "hidden width");
    cmd_train->add_option("--out-scale", train.out_scale, "output scale (seconds)");
    cmd_train->add_option("--seed", train.cfg.seed, "training + init seed")
        ->envname("ERTTE_SEED");
    cmd_train->add_option("--trainer", train.trainer, "meta | plain");
    cmd_train->add_option("--meta-mode", train.meta_mode, "first_order | joint");
    cmd_train->add_option("--loss", train.loss, "quantile | interval_score");
    cmd_train->add_option("--mis-rho", train.mis_rho, "interval-score confidence level");
    cmd_train->callback([&] { run_train(train); });

    EvalArgs eval;
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a model on a dataset partition");
    cmd_eval->add_option("--data", eval.data, "route dataset")
        ->required()
        ->envname("ERTTE_DATA")
        ->check(CLI::ExistingFile);
    cmd_eval->add_option("--model", eval.model, "model checkpoint")
        ->required()
        ->envname("ERTTE_MODEL")
        ->check(CLI::ExistingFile);
    cmd_eval->add_option("--partition", eval.partition, "all | train | val | test");
    cmd_eval->add_option("--split-fraction", eval.split_fraction, "traveled fraction");
    cmd_eval->add_option("--seed", eval.seed, "partition seed (default: model seed)")
        ->envname("ERTTE_SEED");
    cmd_eval->add_option("--out", eval.out, "write the report here instead of stdout");
    cmd_eval->parse_complete_callback(
        [&] { eval.seed_set = cmd_eval->count("--seed") > 0; });
    cmd_eval->callback([&] { run_eval(eval); });

    SimArgs sim;
    auto* cmd_sim = app.add_subcommand("simulate", "replay a query workload under strategies");
    cmd_sim->add_option("--data", sim.data, "route dataset")
        ->required()
        ->envname("ERTTE_DATA")
        ->check(CLI::ExistingFile);
    cmd_sim->add_option("--model", sim.model, "model checkpoint")
        ->required()
        ->envname("ERTTE_MODEL")
        ->check(CLI::ExistingFile);
    cmd_sim->add_option("--partition", sim.partition, "all | train | val | test");
    cmd_sim->add_option("--routes", sim.routes, "route count (0 = whole partition)");
    cmd_sim->add_option("--k", sim.k, "checkpoints per route");
    cmd_sim->add_option("--strategy", sim.strategies, "comma list: gated,random,greedy");
    cmd_sim->add_option("--mode", sim.mode, "predicted_elapsed | observed_elapsed");
    cmd_sim->add_option("--service-time", sim.server.service_time_s,
                        "per-call service time (seconds)");
    cmd_sim->add_option("--concurrency", sim.server.concurrency, "parallel server slots");
    cmd_sim->add_option("--jitter", sim.server.jitter_sigma, "lognormal service-time sigma");
    cmd_sim->add_option("--congestion-fraction", sim.congestion_fraction,
                        "fraction of routes slowed mid-trip");
    cmd_sim->add_option("--slowdown", sim.slowdown, "congestion slowdown factor");
    cmd_sim->add_option("--seed", sim.seed, "workload seed (default: model seed)")
        ->envname("ERTTE_SEED");
    cmd_sim->add_option("--out", sim.out, "report file (record format)");
    cmd_sim->add_option("--table", sim.table, "flat strategy x metric table (csv)");
    cmd_sim->add_flag("--trace", sim.trace, "include per-query trace rows");
    cmd_sim->add_option("--bench-threads", sim.bench_threads,
                        "also run the wall-clock benchmark with this many threads");
    cmd_sim->parse_complete_callback([&] { sim.seed_set = cmd_sim->count("--seed") > 0; });
    cmd_sim->callback([&] { run_simulate(sim); });

    ServeArgs serve;
    auto* cmd_serve = app.add_subcommand("serve", "serve pre-route/en-route/stats endpoints");
    cmd_serve->add_option("--model", serve.model, "model checkpoint")
        ->required()
        ->envname("ERTTE_MODEL")
        ->check(CLI::ExistingFile);
    cmd_serve->add_option("--host", serve.host, "bind host");
    cmd_serve->add_option("--port", serve.port, "bind port");
    cmd_serve->add_option("--threads", serve.threads, "worker threads");
    cmd_serve->add_option("--mode", serve.mode, "predicted_elapsed | observed_elapsed");
    cmd_serve->callback([&] { run_serve(serve); });

    StatsArgs stats;
    auto* cmd_stats = app.add_subcommand("stats", "fetch counters from a running service");
    cmd_stats->add_option("--host", stats.host, "service host");
    cmd_stats->add_option("--port", stats.port, "service port");
    cmd_stats->callback([&] { run_stats(stats); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : ertte::kExitConfig;
    } catch (const ertte::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return ertte::kExitConfig;
    } catch (const ertte::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return ertte::kExitNumeric;
    } catch (const ertte::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return ertte::kExitData;
    } catch (const ertte::NotFoundError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return ertte::kExitData;
    } catch (const ertte::ConflictError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return ertte::kExitData;
    } catch (const ertte::RangeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return ertte::kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
