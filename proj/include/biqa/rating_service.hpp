#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "biqa/error.hpp"
#include "biqa/mos.hpp"

namespace biqa {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::size_t kHistoryWindow = 20;

/// ACR label 1..5 mapped onto the 0-1 scale: 0, 0.25, 0.5, 0.75, 1.
double discrete_label_score(int label);

struct ImageSet {
  std::string id;
  std::vector<std::string> image_ids;
  std::map<std::string, std::filesystem::path> files;  // image id -> file (optional)
};

/// Every .png/.ppm/.pgm in dir; image ids are the file names.
ImageSet image_set_from_directory(const std::string& id, const std::filesystem::path& dir);

enum class SessionStatus { active, completed, withdrawn };
const char* to_string(SessionStatus status) noexcept;

struct Session {
  std::string id;
  std::string observer_id;
  std::string image_set;
  std::uint64_t shuffle_seed = 0;
  std::vector<std::string> queue;
  std::size_t cursor = 0;
  std::string created;
  std::string closed;
  SessionStatus status = SessionStatus::active;
  std::string metadata;  // free text, e.g. viewing conditions
};

struct RatingSubmission {
  std::string session_id;
  std::string image_id;
  std::optional<double> score;
  std::optional<int> discrete_label;
  std::string client_timestamp;
};

struct NextItem {
  std::string image_id;
  std::size_t position = 0;  // zero-based index of this item
  std::size_t total = 0;
  std::vector<double> history;  // observer's last scores, oldest first
};

struct Acknowledgment {
  std::string session_id;
  std::string image_id;
  double score = 0.0;
  std::size_t cursor = 0;
  SessionStatus status = SessionStatus::active;
};

enum class ServiceErrorKind { unknown_set, unknown_session, inactive, completed, out_of_order, duplicate, invalid_score, bad_request };
const char* to_string(ServiceErrorKind kind) noexcept;

class ServiceError : public Error {
 public:
  ServiceError(ServiceErrorKind kind, const std::string& what);
  ServiceErrorKind kind() const noexcept { return kind_; }

 private:
  ServiceErrorKind kind_;
};

/// Session bookkeeping over an append-only JSON-lines log plus periodic
/// snapshots in state_dir. Every mutation reaches the log (flushed and
/// synced) before the call returns; a new instance replays snapshot + log.
class RatingService {
 public:
  using Clock = std::function<std::string()>;

  explicit RatingService(std::filesystem::path state_dir, Clock clock = {}, std::size_t snapshot_every = 256);
  ~RatingService();
  RatingService(const RatingService&) = delete;
  RatingService& operator=(const RatingService&) = delete;

  void register_image_set(ImageSet set);
  bool has_image_set(const std::string& id) const;

  Session create_session(const std::string& observer_id, const std::string& image_set, std::uint64_t shuffle_seed,
                         const std::string& metadata = {});
  NextItem next_item(const std::string& session_id);
  Acknowledgment submit_rating(const RatingSubmission& submission);
  Session withdraw(const std::string& session_id);

  Session session(const std::string& session_id) const;
  std::vector<double> history(const std::string& observer_id) const;
  /// Ratings of one set in acknowledgment order.
  RatingTable ratings(const std::string& image_set) const;
  std::string export_csv(const std::string& image_set) const;
  std::optional<std::filesystem::path> image_file(const std::string& image_id) const;

  /// Writes snapshot.json and truncates the log.
  void snapshot();

  /// Queue order for (observer, set, seed) before already-rated images are removed.
  static std::vector<std::string> shuffled_queue(const std::vector<std::string>& images, const std::string& observer_id,
                                                 const std::string& image_set, std::uint64_t seed);

 private:
  struct StoredRating {
    std::string session_id;
    Rating rating;
    std::optional<int> discrete_label;
    std::string client_timestamp;
  };

  void replay();
  void apply_event(const nlohmann::json& event);
  void append(nlohmann::json event);
  void write_snapshot_locked();
  Session& find_locked(const std::string& session_id);
  nlohmann::json state_json() const;

  std::filesystem::path dir_;
  Clock clock_;
  std::size_t snapshot_every_;
  std::size_t since_snapshot_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t next_session_ = 1;
  std::FILE* log_ = nullptr;

  mutable std::shared_mutex mutex_;
  std::map<std::string, ImageSet> sets_;
  std::map<std::string, std::pair<std::string, std::filesystem::path>> image_index_;  // image -> (set, file)
  std::map<std::string, Session> sessions_;
  std::vector<StoredRating> ratings_;
  std::set<std::pair<std::string, std::string>> rated_;  // (observer, image)
  std::map<std::string, std::vector<double>> history_;
};

}  // namespace biqa
