#include "biqa/rating_service.hpp"

#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>

#include "biqa/distort.hpp"
#include "biqa/rng.hpp"

namespace biqa {

double discrete_label_score(int label) {
  if (label < 1 || label > 5)
    throw ServiceError(ServiceErrorKind::invalid_score, "discrete label must be 1..5, got " + std::to_string(label));
  return (label - 1) * 0.25;
}

ImageSet image_set_from_directory(const std::string& id, const std::filesystem::path& dir) {
  ImageSet set;
  set.id = id;
  for (const auto& p : list_images(dir)) {
    const auto name = p.filename().string();
    set.image_ids.push_back(name);
    set.files[name] = p;
  }
  return set;
}

const char* to_string(SessionStatus status) noexcept {
  switch (status) {
    case SessionStatus::active: return "active";
    case SessionStatus::completed: return "completed";
    case SessionStatus::withdrawn: return "withdrawn";
  }
  return "unknown";
}

const char* to_string(ServiceErrorKind kind) noexcept {
  switch (kind) {
    case ServiceErrorKind::unknown_set: return "unknown_set";
    case ServiceErrorKind::unknown_session: return "unknown_session";
    case ServiceErrorKind::inactive: return "inactive";
    case ServiceErrorKind::completed: return "completed";
    case ServiceErrorKind::out_of_order: return "out_of_order";
    case ServiceErrorKind::duplicate: return "duplicate";
    case ServiceErrorKind::invalid_score: return "invalid_score";
    case ServiceErrorKind::bad_request: return "bad_request";
  }
  return "unknown";
}

namespace {

ErrorCode code_for(ServiceErrorKind kind) {
  switch (kind) {
    case ServiceErrorKind::invalid_score:
    case ServiceErrorKind::bad_request: return ErrorCode::invalid_argument;
    case ServiceErrorKind::unknown_set:
    case ServiceErrorKind::unknown_session: return ErrorCode::missing_file;
    default: return ErrorCode::state;
  }
}

SessionStatus status_from_string(const std::string& s) {
  if (s == "completed") return SessionStatus::completed;
  if (s == "withdrawn") return SessionStatus::withdrawn;
  if (s == "active") return SessionStatus::active;
  fail(ErrorCode::corrupt_data, "unknown session status '" + s + "'");
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

std::string rated_key(const std::string& set, const std::string& image) { return set + '\x1f' + image; }

nlohmann::json session_json(const Session& s) {
  return {{"id", s.id},
          {"observer_id", s.observer_id},
          {"image_set", s.image_set},
          {"shuffle_seed", s.shuffle_seed},
          {"queue", s.queue},
          {"cursor", s.cursor},
          {"created", s.created},
          {"closed", s.closed},
          {"status", to_string(s.status)},
          {"metadata", s.metadata}};
}

Session session_from_json(const nlohmann::json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.observer_id = j.at("observer_id").get<std::string>();
  s.image_set = j.at("image_set").get<std::string>();
  s.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  s.queue = j.at("queue").get<std::vector<std::string>>();
  s.cursor = j.value("cursor", std::size_t{0});
  s.created = j.value("created", std::string());
  s.closed = j.value("closed", std::string());
  s.status = status_from_string(j.value("status", std::string("active")));
  s.metadata = j.value("metadata", std::string());
  return s;
}

}  // namespace

ServiceError::ServiceError(ServiceErrorKind kind, const std::string& what) : Error(code_for(kind), what), kind_(kind) {}

RatingService::RatingService(std::filesystem::path state_dir, Clock clock, std::size_t snapshot_every)
    : dir_(std::move(state_dir)), clock_(clock ? std::move(clock) : Clock(utc_now)), snapshot_every_(snapshot_every) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(ErrorCode::io, "cannot create state directory " + dir_.string());
  replay();
  log_ = std::fopen((dir_ / "log.jsonl").c_str(), "ab");
  if (!log_) fail(ErrorCode::io, "cannot open " + (dir_ / "log.jsonl").string());
}

RatingService::~RatingService() {
  if (log_) std::fclose(log_);
}

void RatingService::replay() {
  std::uint64_t snapshot_seq = 0;
  const auto snap_path = dir_ / "snapshot.json";
  if (std::filesystem::exists(snap_path)) {
    std::ifstream in(snap_path, std::ios::binary);
    nlohmann::json snap;
    try {
      snap = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::corrupt_data, std::string("unreadable snapshot: ") + e.what());
    }
    if (snap.value("schema_version", 0) != kSchemaVersion)
      fail(ErrorCode::version, "snapshot has an unsupported schema version");
    snapshot_seq = snap.at("seq").get<std::uint64_t>();
    seq_ = snapshot_seq;
    next_session_ = snap.at("next_session").get<std::uint64_t>();
    for (const auto& s : snap.at("sessions")) {
      auto session = session_from_json(s);
      sessions_[session.id] = std::move(session);
    }
    for (const auto& r : snap.at("ratings")) {
      nlohmann::json event = r;
      event["type"] = "rating";
      apply_event(event);
    }
  }
  const auto log_path = dir_ / "log.jsonl";
  if (!std::filesystem::exists(log_path)) return;
  std::ifstream in(log_path, std::ios::binary);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    nlohmann::json event;
    try {
      event = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception&) {
      if (i + 1 == lines.size()) break;  // torn final write: never acknowledged
      fail(ErrorCode::corrupt_data, "corrupt log line " + std::to_string(i + 1));
    }
    const auto seq = event.at("seq").get<std::uint64_t>();
    if (seq <= snapshot_seq) continue;
    seq_ = seq;
    apply_event(event);
  }
}

void RatingService::apply_event(const nlohmann::json& event) {
  const auto type = event.at("type").get<std::string>();
  if (type == "session") {
    auto s = session_from_json(event.at("session"));
    next_session_ = std::max(next_session_, event.value("next_session", next_session_));
    sessions_[s.id] = std::move(s);
  } else if (type == "rating") {
    StoredRating r;
    r.session_id = event.at("session_id").get<std::string>();
    const auto it = sessions_.find(r.session_id);
    if (it == sessions_.end()) fail(ErrorCode::corrupt_data, "rating for unknown session " + r.session_id);
    Session& s = it->second;
    r.rating = {event.at("image_id").get<std::string>(), s.observer_id, event.at("score").get<double>(),
                event.value("timestamp", std::string())};
    if (event.contains("discrete_label")) r.discrete_label = event.at("discrete_label").get<int>();
    r.client_timestamp = event.value("client_timestamp", std::string());
    if (event.value("advance", true)) s.cursor += 1;
    rated_.emplace(s.observer_id, rated_key(s.image_set, r.rating.image_id));
    history_[s.observer_id].push_back(r.rating.score);
    ratings_.push_back(std::move(r));
  } else if (type == "status") {
    Session& s = sessions_.at(event.at("session_id").get<std::string>());
    s.status = status_from_string(event.at("status").get<std::string>());
    s.closed = event.value("timestamp", std::string());
  } else {
    fail(ErrorCode::corrupt_data, "unknown log event '" + type + "'");
  }
}

void RatingService::append(nlohmann::json event) {
  event["seq"] = ++seq_;
  const std::string line = event.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0 ||
      ::fsync(::fileno(log_)) != 0)
    fail(ErrorCode::io, "cannot append to the rating log");
  apply_event(event);
  if (snapshot_every_ > 0 && ++since_snapshot_ >= snapshot_every_) write_snapshot_locked();
}

nlohmann::json RatingService::state_json() const {
  nlohmann::json sessions = nlohmann::json::array(), ratings = nlohmann::json::array();
  for (const auto& [id, s] : sessions_) sessions.push_back(session_json(s));
  for (const auto& r : ratings_) {
    nlohmann::json j{{"session_id", r.session_id},
                     {"image_id", r.rating.image_id},
                     {"score", r.rating.score},
                     {"timestamp", r.rating.timestamp},
                     {"client_timestamp", r.client_timestamp},
                     {"advance", false}};
    if (r.discrete_label) j["discrete_label"] = *r.discrete_label;
    ratings.push_back(j);
  }
  return {{"schema_version", kSchemaVersion},
          {"seq", seq_},
          {"next_session", next_session_},
          {"sessions", sessions},
          {"ratings", ratings}};
}

void RatingService::write_snapshot_locked() {
  const auto tmp = dir_ / "snapshot.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write snapshot");
    out << state_json().dump();
    out.flush();
    if (!out) fail(ErrorCode::io, "cannot write snapshot");
  }
  std::filesystem::rename(tmp, dir_ / "snapshot.json");
  // events up to seq_ are now covered; replay skips them even if truncation is lost
  std::fclose(log_);
  log_ = std::fopen((dir_ / "log.jsonl").c_str(), "wb");
  if (!log_) fail(ErrorCode::io, "cannot reopen the rating log");
  since_snapshot_ = 0;
}

void RatingService::snapshot() {
  std::unique_lock lock(mutex_);
  write_snapshot_locked();
}

void RatingService::register_image_set(ImageSet set) {
  std::unique_lock lock(mutex_);
  if (set.id.empty()) throw ServiceError(ServiceErrorKind::bad_request, "image set needs an id");
  for (const auto& image : set.image_ids) {
    const auto file = set.files.find(image);
    image_index_[image] = {set.id, file == set.files.end() ? std::filesystem::path() : file->second};
  }
  sets_[set.id] = std::move(set);
}

bool RatingService::has_image_set(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return sets_.contains(id);
}

std::vector<std::string> RatingService::shuffled_queue(const std::vector<std::string>& images,
                                                       const std::string& observer_id, const std::string& image_set,
                                                       std::uint64_t seed) {
  std::vector<std::string> queue = images;
  RngStream rng(mix_seed(seed, hash_string(observer_id)), hash_string(image_set));
  rng.shuffle(queue.begin(), queue.end());
  return queue;
}

Session RatingService::create_session(const std::string& observer_id, const std::string& image_set,
                                      std::uint64_t shuffle_seed, const std::string& metadata) {
  std::unique_lock lock(mutex_);
  if (observer_id.empty()) throw ServiceError(ServiceErrorKind::bad_request, "observer_id is required");
  const auto set = sets_.find(image_set);
  if (set == sets_.end()) throw ServiceError(ServiceErrorKind::unknown_set, "unknown image set '" + image_set + "'");
  Session s;
  char id[32];
  std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(next_session_));
  s.id = id;
  s.observer_id = observer_id;
  s.image_set = image_set;
  s.shuffle_seed = shuffle_seed;
  for (auto& image : shuffled_queue(set->second.image_ids, observer_id, image_set, shuffle_seed))
    if (!rated_.contains({observer_id, rated_key(image_set, image)})) s.queue.push_back(std::move(image));
  s.created = clock_();
  s.metadata = metadata;
  append({{"type", "session"}, {"session", session_json(s)}, {"next_session", next_session_ + 1}});
  return sessions_.at(s.id);
}

Session& RatingService::find_locked(const std::string& session_id) {
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(ServiceErrorKind::unknown_session, "unknown session '" + session_id + "'");
  return it->second;
}

NextItem RatingService::next_item(const std::string& session_id) {
  std::unique_lock lock(mutex_);
  Session& s = find_locked(session_id);
  if (s.status == SessionStatus::withdrawn)
    throw ServiceError(ServiceErrorKind::inactive, "session " + session_id + " was withdrawn");
  if (s.status == SessionStatus::completed)
    throw ServiceError(ServiceErrorKind::completed, "session " + session_id + " is completed");
  if (s.cursor >= s.queue.size()) {
    append({{"type", "status"}, {"session_id", s.id}, {"status", "completed"}, {"timestamp", clock_()}});
    throw ServiceError(ServiceErrorKind::completed, "session " + session_id + " is completed");
  }
  NextItem item;
  item.image_id = s.queue[s.cursor];
  item.position = s.cursor;
  item.total = s.queue.size();
  const auto& h = history_[s.observer_id];
  const std::size_t from = h.size() > kHistoryWindow ? h.size() - kHistoryWindow : 0;
  item.history.assign(h.begin() + static_cast<std::ptrdiff_t>(from), h.end());
  return item;
}

Acknowledgment RatingService::submit_rating(const RatingSubmission& sub) {
  std::unique_lock lock(mutex_);
  Session& s = find_locked(sub.session_id);
  if (s.status == SessionStatus::withdrawn)
    throw ServiceError(ServiceErrorKind::inactive, "session " + s.id + " was withdrawn");
  if (s.status == SessionStatus::completed)
    throw ServiceError(ServiceErrorKind::completed, "session " + s.id + " is completed");
  double score = 0.0;
  if (sub.discrete_label) {
    score = discrete_label_score(*sub.discrete_label);
    if (sub.score && *sub.score != score)
      throw ServiceError(ServiceErrorKind::invalid_score, "score does not match discrete label " +
                                                              std::to_string(*sub.discrete_label));
  } else if (sub.score) {
    score = *sub.score;
    if (!(score >= 0.0 && score <= 1.0))
      throw ServiceError(ServiceErrorKind::invalid_score, "score must lie in [0, 1]");
  } else {
    throw ServiceError(ServiceErrorKind::invalid_score, "a score or discrete label is required");
  }
  if (rated_.contains({s.observer_id, rated_key(s.image_set, sub.image_id)}))
    throw ServiceError(ServiceErrorKind::duplicate,
                       "observer '" + s.observer_id + "' already rated '" + sub.image_id + "'");
  if (s.cursor >= s.queue.size() || s.queue[s.cursor] != sub.image_id)
    throw ServiceError(ServiceErrorKind::out_of_order, "'" + sub.image_id + "' is not the current item");
  nlohmann::json event{{"type", "rating"},       {"session_id", s.id},
                       {"image_id", sub.image_id}, {"score", score},
                       {"timestamp", clock_()},   {"client_timestamp", sub.client_timestamp}};
  if (sub.discrete_label) event["discrete_label"] = *sub.discrete_label;
  append(event);
  if (s.cursor >= s.queue.size())
    append({{"type", "status"}, {"session_id", s.id}, {"status", "completed"}, {"timestamp", clock_()}});
  return {s.id, sub.image_id, score, s.cursor, s.status};
}

Session RatingService::withdraw(const std::string& session_id) {
  std::unique_lock lock(mutex_);
  Session& s = find_locked(session_id);
  if (s.status != SessionStatus::active)
    throw ServiceError(ServiceErrorKind::inactive, "session " + session_id + " is " + to_string(s.status));
  append({{"type", "status"}, {"session_id", s.id}, {"status", "withdrawn"}, {"timestamp", clock_()}});
  return s;
}

Session RatingService::session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(ServiceErrorKind::unknown_session, "unknown session '" + session_id + "'");
  return it->second;
}

std::vector<double> RatingService::history(const std::string& observer_id) const {
  std::shared_lock lock(mutex_);
  const auto it = history_.find(observer_id);
  if (it == history_.end()) return {};
  const auto& h = it->second;
  const std::size_t from = h.size() > kHistoryWindow ? h.size() - kHistoryWindow : 0;
  return {h.begin() + static_cast<std::ptrdiff_t>(from), h.end()};
}

RatingTable RatingService::ratings(const std::string& image_set) const {
  std::shared_lock lock(mutex_);
  RatingTable table;
  for (const auto& r : ratings_)
    if (sessions_.at(r.session_id).image_set == image_set) table.add(r.rating);
  return table;
}

std::string RatingService::export_csv(const std::string& image_set) const { return format_ratings(ratings(image_set)); }

std::optional<std::filesystem::path> RatingService::image_file(const std::string& image_id) const {
  std::shared_lock lock(mutex_);
  const auto it = image_index_.find(image_id);
  if (it == image_index_.end() || it->second.second.empty()) return std::nullopt;
  return it->second.second;
}

}  // namespace biqa
