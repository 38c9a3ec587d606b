#pragma once

#include <memory>
#include <string>

#include "biqa/rating_service.hpp"

namespace biqa {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Routes one request to the service. JSON bodies carry "schema_version";
/// the CSV export and image bytes carry it in the X-Schema-Version header.
///
///   POST /sessions                 {"observer_id", "image_set", "shuffle_seed", "metadata"?}
///   GET  /sessions/{id}/next
///   POST /sessions/{id}/ratings    {"image_id", "score"? , "discrete_label"?, "client_timestamp"?}
///   POST /sessions/{id}/withdraw
///   GET  /export/{set}.csv
///   GET  /images/{id}
HttpResponse handle_request(RatingService& service, const std::string& method, const std::string& path,
                            const std::string& body);

/// HTTP front end over handle_request.
class RatingServer {
 public:
  explicit RatingServer(RatingService& service);
  ~RatingServer();

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind.
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace biqa
