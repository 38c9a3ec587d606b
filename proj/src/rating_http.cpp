#include "biqa/rating_http.hpp"

#include <fstream>
#include <regex>

#include "httplib.h"

namespace biqa {

namespace {

HttpResponse json_response(int status, nlohmann::json body) {
  body["schema_version"] = kSchemaVersion;
  return {status, "application/json", body.dump()};
}

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"error", {{"code", code}, {"message", message}}}});
}

int status_for(ServiceErrorKind kind) {
  switch (kind) {
    case ServiceErrorKind::unknown_set:
    case ServiceErrorKind::unknown_session: return 404;
    case ServiceErrorKind::invalid_score:
    case ServiceErrorKind::bad_request: return 400;
    default: return 409;
  }
}

nlohmann::json session_body(const Session& s) {
  return {{"session_id", s.id},
          {"observer_id", s.observer_id},
          {"image_set", s.image_set},
          {"status", to_string(s.status)},
          {"cursor", s.cursor},
          {"total", s.queue.size()},
          {"created", s.created},
          {"closed", s.closed}};
}

nlohmann::json parse_body(const std::string& body) {
  if (body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(body);
  if (!j.is_object()) throw ServiceError(ServiceErrorKind::bad_request, "request body must be a JSON object");
  return j;
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".pgm" || ext == ".ppm") return "image/x-portable-anymap";
  return "application/octet-stream";
}

}  // namespace

HttpResponse handle_request(RatingService& service, const std::string& method, const std::string& path,
                            const std::string& body) {
  static const std::regex kNext(R"(/sessions/([^/]+)/next)");
  static const std::regex kRatings(R"(/sessions/([^/]+)/ratings)");
  static const std::regex kWithdraw(R"(/sessions/([^/]+)/withdraw)");
  static const std::regex kExport(R"(/export/([^/]+)\.csv)");
  static const std::regex kImage(R"(/images/([^/]+))");
  std::smatch m;
  try {
    if (method == "POST" && path == "/sessions") {
      const auto j = parse_body(body);
      if (!j.contains("observer_id") || !j.contains("image_set"))
        throw ServiceError(ServiceErrorKind::bad_request, "observer_id and image_set are required");
      const auto s = service.create_session(j.at("observer_id").get<std::string>(),
                                            j.at("image_set").get<std::string>(),
                                            j.value("shuffle_seed", std::uint64_t{0}), j.value("metadata", std::string()));
      return json_response(201, {{"session", session_body(s)}});
    }
    if (method == "GET" && std::regex_match(path, m, kNext)) {
      const auto item = service.next_item(m[1]);
      return json_response(200, {{"image_id", item.image_id},
                                 {"image_url", "/images/" + item.image_id},
                                 {"position", item.position},
                                 {"total", item.total},
                                 {"progress", static_cast<double>(item.position) / static_cast<double>(item.total)},
                                 {"history", item.history}});
    }
    if (method == "POST" && std::regex_match(path, m, kRatings)) {
      const auto j = parse_body(body);
      RatingSubmission sub;
      sub.session_id = m[1];
      if (!j.contains("image_id")) throw ServiceError(ServiceErrorKind::bad_request, "image_id is required");
      sub.image_id = j.at("image_id").get<std::string>();
      if (j.contains("score") && !j.at("score").is_null()) sub.score = j.at("score").get<double>();
      if (j.contains("discrete_label") && !j.at("discrete_label").is_null())
        sub.discrete_label = j.at("discrete_label").get<int>();
      sub.client_timestamp = j.value("client_timestamp", std::string());
      const auto ack = service.submit_rating(sub);
      return json_response(200, {{"session_id", ack.session_id},
                                 {"image_id", ack.image_id},
                                 {"score", ack.score},
                                 {"cursor", ack.cursor},
                                 {"status", to_string(ack.status)}});
    }
    if (method == "POST" && std::regex_match(path, m, kWithdraw))
      return json_response(200, {{"session", session_body(service.withdraw(m[1]))}});
    if (method == "GET" && std::regex_match(path, m, kExport)) {
      if (!service.has_image_set(m[1])) throw ServiceError(ServiceErrorKind::unknown_set, "unknown image set");
      return {200, "text/csv", service.export_csv(m[1])};
    }
    if (method == "GET" && std::regex_match(path, m, kImage)) {
      const auto file = service.image_file(m[1]);
      if (!file) return error_response(404, "unknown_image", "no image '" + m[1].str() + "'");
      std::ifstream in(*file, std::ios::binary);
      if (!in) return error_response(404, "unknown_image", "image file is missing");
      return {200, content_type_for(*file), std::string(std::istreambuf_iterator<char>(in), {})};
    }
    return error_response(404, "not_found", method + " " + path);
  } catch (const ServiceError& e) {
    return error_response(status_for(e.kind()), to_string(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const Error& e) {
    return error_response(500, to_string(e.code()), e.what());
  }
}

struct RatingServer::Impl {
  RatingService& service;
  httplib::Server server;

  explicit Impl(RatingService& s) : service(s) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      const auto out = handle_request(service, req.method, req.path, req.body);
      res.status = out.status;
      res.set_header("X-Schema-Version", std::to_string(kSchemaVersion));
      res.set_content(out.body, out.content_type);
    };
    server.Get(".*", handler);
    server.Post(".*", handler);
  }
};

RatingServer::RatingServer(RatingService& service) : impl_(std::make_unique<Impl>(service)) {}
RatingServer::~RatingServer() { stop(); }

int RatingServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool RatingServer::serve() { return impl_->server.listen_after_bind(); }
void RatingServer::stop() { impl_->server.stop(); }
void RatingServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace biqa
