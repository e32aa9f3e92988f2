#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "qcpipe/service/store.hpp"

namespace qc {

/// Header carrying the rater identity on annotation submissions.
inline constexpr const char* rater_header = "X-Rater-Id";

inline int http_status(errc e) {
    switch (e) {
    case errc::validation_failed: return 422;
    case errc::unknown_image:
    case errc::unknown_rater: return 404;
    case errc::not_ready:
    case errc::missing_adjudication: return 409;
    case errc::io_failure: return 500;
    default: return 400;
    }
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct ServerOptions {
    std::filesystem::path slice_dir;           // <id>_<view>.png files
    std::optional<std::filesystem::path> static_dir;  // optional front-end bundle mounted at /
    // Fallback when a slice file is missing: returns PNG bytes or nothing.
    std::function<std::optional<std::string>(const std::string& image_id, const std::string& view)> slice_source;
};

/// HTTP/JSON surface over an AnnotationStore.
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, ServerOptions opt) : store_(store), opt_(std::move(opt)) { routes(); }
    ~AnnotationServer() { stop(); }
    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds (port 0 picks a free port), serves on a background thread and returns the port.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) fail(errc::io_failure, "cannot bind " + host + ":" + std::to_string(port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return bound;
    }

    /// Blocks until stopped.
    void run(const std::string& host, int port) {
        if (!server_.listen(host, port)) fail(errc::io_failure, "cannot listen on " + host + ":" + std::to_string(port));
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

private:
    static void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    template <class F>
    auto guarded(F f) {
        return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const error& e) {
                send_json(res, {{"error", std::string(errc_name(e.code()))}, {"message", e.what()}}, http_status(e.code()));
            } catch (const nlohmann::json::exception& e) {
                send_json(res, {{"error", "InvalidArgument"}, {"message", e.what()}}, 400);
            }
        };
    }

    nlohmann::json slice_urls(const std::string& id) const {
        nlohmann::json j;
        for (const char* v : {"axial", "coronal", "sagittal"}) j[v] = "/api/images/" + id + "/slices/" + v + ".png";
        return j;
    }

    nlohmann::json image_annotations(const std::string& id) const {
        nlohmann::json history = nlohmann::json::array();
        for (const auto& v : store_.history(id)) history.push_back({{"version", v.version}, {"annotation", v.annotation}});
        nlohmann::json current = nlohmann::json::object();
        for (const auto& r : store_.raters())
            if (auto v = store_.current(id, r)) current[r] = {{"version", v->version}, {"annotation", v->annotation}};
        nlohmann::json out{{"image_id", id}, {"current", current}, {"history", history}};
        out["consensus"] = nullptr;
        out["pending_adjudication"] = false;
        if (current.size() == 2) {
            if (auto c = store_.consensus(id)) out["consensus"] = *c;
            else out["pending_adjudication"] = true;
        }
        return out;
    }

    void routes() {
        server_.Get(R"(/api/raters/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string rater = req.matches[1];
            auto id = store_.next_image(rater);
            if (!id) return send_json(res, {{"exhausted", true}, {"image_id", nullptr}});
            send_json(res, {{"exhausted", false}, {"image_id", *id}, {"slices", slice_urls(*id)}});
        }));

        server_.Get(R"(/api/images/([^/]+)/slices/(axial|coronal|sagittal)\.png)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const std::string id = req.matches[1], view = req.matches[2];
                        if (!store_.has_image(id)) fail(errc::unknown_image, "unknown image '" + id + "'");
                        const auto path = opt_.slice_dir / (id + "_" + view + ".png");
                        std::optional<std::string> body;
                        if (!opt_.slice_dir.empty() && std::filesystem::exists(path)) {
                            std::ifstream in(path, std::ios::binary);
                            std::ostringstream ss;
                            ss << in.rdbuf();
                            body = ss.str();
                        } else if (opt_.slice_source) {
                            body = opt_.slice_source(id, view);
                        }
                        if (!body) fail(errc::unknown_image, "no " + view + " slice for '" + id + "'");
                        res.set_content(*body, "image/png");
                    }));

        server_.Post(R"(/api/images/([^/]+)/annotations)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            auto body = nlohmann::json::parse(req.body);
            if (!body.is_object()) fail(errc::invalid_argument, "annotation body must be a JSON object");
            if (body.contains("image_id") && body.at("image_id") != id)
                fail(errc::invalid_argument, "body image_id does not match the URL");
            body["image_id"] = id;
            const std::string header = req.get_header_value(rater_header);
            if (!header.empty()) {
                if (body.contains("rater_id") && body.at("rater_id") != header)
                    fail(errc::invalid_argument, std::string("body rater_id does not match ") + rater_header);
                body["rater_id"] = header;
            }
            if (!body.contains("rater_id")) fail(errc::unknown_rater, std::string("missing ") + rater_header + " header");
            if (!body.contains("straight_reject")) fail(errc::validation_failed, "straight_reject is required");
            auto a = body.get<Annotation>();
            if (a.timestamp.empty()) a.timestamp = utc_timestamp();
            const int version = store_.submit_annotation(a);
            send_json(res, {{"image_id", id}, {"rater_id", a.rater_id}, {"version", version}}, 201);
        }));

        server_.Get(R"(/api/images/([^/]+)/annotations)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, image_annotations(req.matches[1]));
        }));

        server_.Post(R"(/api/images/([^/]+)/consensus-resolution)",
                     guarded([this](const httplib::Request& req, httplib::Response& res) {
                         const std::string id = req.matches[1];
                         const auto body = nlohmann::json::parse(req.body);
                         if (!body.contains("straight_reject") || !body.at("straight_reject").is_boolean())
                             fail(errc::invalid_argument, "straight_reject must be a boolean");
                         send_json(res, store_.resolve_sr(id, body.at("straight_reject").get<bool>()));
                     }));

        server_.Get("/api/progress", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, progress_json(store_.progress()));
        }));

        server_.Get("/api/export", guarded([this](const httplib::Request&, httplib::Response& res) {
            res.set_content(store_.export_labels(), "application/x-ndjson");
        }));

        if (opt_.static_dir) server_.set_mount_point("/", opt_.static_dir->string());
    }

    AnnotationStore& store_;
    ServerOptions opt_;
    httplib::Server server_;
    std::thread thread_;
};

}  // namespace qc
