#pragma once

#include <memory>
#include <string>
#include <utility>

// The engine (and the linear-algebra headers underneath it) must precede
// httplib: the system resolver headers it drags in define macros that would
// otherwise rewrite identifiers inside the math kernels.
#include "ertte/core.hpp"
#include "ertte/engine.hpp"
#include "ertte/errors.hpp"

#include <httplib.h>

namespace ertte {

// HTTP facade over the decision engine:
//   POST /preroute  {"route": <route record>, "k": int} -> profile summary
//   POST /enroute   <en-route query record>             -> en-route answer
//   GET  /stats                                         -> call counters
// Bodies are the same self-describing records used by the file formats.
// Safety under concurrent requests is delegated to the engine's store;
// stop() finishes in-flight requests before returning.
class Service {
  public:
    explicit Service(Engine& engine, int worker_threads = 8) : engine_(engine) {
        server_.new_task_queue = [worker_threads] {
            return new httplib::ThreadPool(static_cast<std::size_t>(worker_threads));
        };

        server_.Post("/preroute", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                json body = json::parse(req.body);
                Route route = body.at("route").get<Route>();
                auto k = body.at("k").get<std::size_t>();
                CheckpointProfile profile = engine_.preroute_route(route, k);
                return json{{"route_id", profile.route_id},
                            {"k", profile.k},
                            {"total", profile.total},
                            {"generation", profile.generation}};
            });
        });

        server_.Post("/enroute", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                auto query = json::parse(req.body).get<EnRouteQuery>();
                json out = engine_.enroute_query(query);
                return out;
            });
        });

        server_.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
            handle(res, [&] {
                json out = engine_.stats();
                return out;
            });
        });
    }

    // Binds to an OS-assigned port; returns it (-1 on failure).
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }

    // Binds and serves; blocks until stop().
    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    void stop() { server_.stop(); }
    bool is_running() const { return server_.is_running(); }

  private:
    template <typename Fn>
    void handle(httplib::Response& res, Fn fn) {
        try {
            res.set_content(fn().dump(), "application/json");
        } catch (const NotFoundError& e) {
            fail(res, 404, "not_found", e.what());
        } catch (const ConflictError& e) {
            fail(res, 409, "conflict", e.what());
        } catch (const RangeError& e) {
            fail(res, 400, "range", e.what());
        } catch (const ConfigError& e) {
            fail(res, 400, "config", e.what());
        } catch (const DataError& e) {
            fail(res, 400, "data", e.what());
        } catch (const json::exception& e) {
            fail(res, 400, "data", e.what());
        } catch (const std::exception& e) {
            fail(res, 500, "internal", e.what());
        }
    }

    static void fail(httplib::Response& res, int status, const char* kind,
                     const std::string& message) {
        res.status = status;
        res.set_content(json{{"error", message}, {"kind", kind}}.dump(), "application/json");
    }

    Engine& engine_;
    httplib::Server server_;
};

}  // namespace ertte
