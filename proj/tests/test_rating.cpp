#include <gtest/gtest.h>

#include <algorithm>
#include <thread>

#include "httplib.h"

#include "biqa/rating_http.hpp"
#include "biqa/rating_service.hpp"
#include "test_util.hpp"

using namespace biqa;
namespace bt = biqa::testing;
using nlohmann::json;

namespace {

ImageSet make_set(const std::string& id, int n) {
  ImageSet s;
  s.id = id;
  for (int i = 0; i < n; ++i) s.image_ids.push_back(id + "_img" + std::to_string(i) + ".png");
  return s;
}

RatingService::Clock fixed_clock() {
  return [] { return std::string("2026-01-01T00:00:00Z"); };
}

void rate_all(RatingService& svc, const std::string& session, double score) {
  for (;;) {
    const auto s = svc.session(session);
    if (s.status != SessionStatus::active) return;
    const auto item = svc.next_item(session);
    svc.submit_rating({session, item.image_id, score, {}, {}});
  }
}

#define EXPECT_SERVICE_ERROR(stmt, expected_kind)                             \
  do {                                                                        \
    try {                                                                     \
      stmt;                                                                   \
      ADD_FAILURE() << "expected ServiceError(" #expected_kind ")";           \
    } catch (const ServiceError& e) {                                         \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                         \
    }                                                                         \
  } while (0)

}  // namespace

TEST(RatingService, ShufflesDependOnObserverAndAreReproducible) {
  const auto set = make_set("s", 20);
  const auto a = RatingService::shuffled_queue(set.image_ids, "alice", "s", 1);
  const auto b = RatingService::shuffled_queue(set.image_ids, "bob", "s", 1);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, RatingService::shuffled_queue(set.image_ids, "alice", "s", 1));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  auto expected = set.image_ids;
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(sorted, expected);

  bt::TempDir dir;
  RatingService svc(dir.path(), fixed_clock());
  svc.register_image_set(set);
  EXPECT_EQ(svc.create_session("alice", "s", 1).queue, a);
  EXPECT_SERVICE_ERROR(svc.create_session("alice", "nope", 1), ServiceErrorKind::unknown_set);
}

TEST(RatingService, NextItemAndHistory) {
  bt::TempDir dir;
  RatingService svc(dir.path(), fixed_clock());
  svc.register_image_set(make_set("s", 6));
  const auto s = svc.create_session("obs", "s", 3);
  auto item = svc.next_item(s.id);
  EXPECT_EQ(item.image_id, s.queue[0]);
  EXPECT_EQ(item.position, 0U);
  EXPECT_EQ(item.total, 6U);
  EXPECT_TRUE(item.history.empty());
  const double scores[] = {0.1, 0.73, 0.4};
  for (double sc : scores) {
    const auto it = svc.next_item(s.id);
    const auto ack = svc.submit_rating({s.id, it.image_id, sc, {}, {}});
    EXPECT_EQ(ack.score, sc);
  }
  item = svc.next_item(s.id);
  EXPECT_EQ(item.history, (std::vector<double>{0.1, 0.73, 0.4}));
  EXPECT_EQ(item.position, 3U);
  rate_all(svc, s.id, 0.5);
  EXPECT_EQ(svc.session(s.id).status, SessionStatus::completed);
  EXPECT_SERVICE_ERROR(svc.next_item(s.id), ServiceErrorKind::completed);
  EXPECT_SERVICE_ERROR(svc.next_item("s999999"), ServiceErrorKind::unknown_session);
}

TEST(RatingService, HistoryWindowIsBounded) {
  bt::TempDir dir;
  RatingService svc(dir.path(), fixed_clock());
  svc.register_image_set(make_set("s", 30));
  const auto s = svc.create_session("obs", "s", 3);
  for (int i = 0; i < 25; ++i) svc.submit_rating({s.id, svc.next_item(s.id).image_id, i / 100.0, {}, {}});
  const auto h = svc.next_item(s.id).history;
  ASSERT_EQ(h.size(), kHistoryWindow);
  EXPECT_EQ(h.front(), 0.05);
  EXPECT_EQ(h.back(), 0.24);
}

TEST(RatingService, SubmissionRules) {
  bt::TempDir dir;
  RatingService svc(dir.path(), fixed_clock());
  svc.register_image_set(make_set("s", 5));
  const auto s = svc.create_session("obs", "s", 9);
  const auto first = svc.next_item(s.id).image_id;
  const auto ack = svc.submit_rating({s.id, first, std::nullopt, 4, {}});
  EXPECT_EQ(ack.score, 0.75);
  EXPECT_EQ(ack.cursor, 1U);
  EXPECT_EQ(svc.ratings("s").ratings().back().score, 0.75);
  EXPECT_SERVICE_ERROR(svc.submit_rating({s.id, first, 0.5, {}, {}}), ServiceErrorKind::duplicate);
  EXPECT_SERVICE_ERROR(svc.submit_rating({s.id, s.queue[3], 0.5, {}, {}}), ServiceErrorKind::out_of_order);
  EXPECT_SERVICE_ERROR(svc.submit_rating({s.id, s.queue[1], 1.5, {}, {}}), ServiceErrorKind::invalid_score);
  EXPECT_SERVICE_ERROR(svc.submit_rating({s.id, s.queue[1], 0.2, 4, {}}), ServiceErrorKind::invalid_score);
  EXPECT_SERVICE_ERROR(svc.submit_rating({s.id, s.queue[1], std::nullopt, 6, {}}), ServiceErrorKind::invalid_score);
  EXPECT_SERVICE_ERROR(svc.submit_rating({s.id, s.queue[1], std::nullopt, std::nullopt, {}}),
                       ServiceErrorKind::invalid_score);
  EXPECT_EQ(svc.session(s.id).cursor, 1U);
  for (int label = 1; label <= 5; ++label) EXPECT_EQ(discrete_label_score(label), (label - 1) * 0.25);
}

TEST(RatingService, WithdrawnSessionKeepsPartialRatings) {
  bt::TempDir dir;
  RatingService svc(dir.path(), fixed_clock());
  svc.register_image_set(make_set("s", 12));
  const auto s = svc.create_session("quitter", "s", 1, "distance 60cm");
  for (int i = 0; i < 5; ++i) svc.submit_rating({s.id, svc.next_item(s.id).image_id, 0.6, {}, {}});
  const auto w = svc.withdraw(s.id);
  EXPECT_EQ(w.status, SessionStatus::withdrawn);
  EXPECT_EQ(w.metadata, "distance 60cm");
  EXPECT_SERVICE_ERROR(svc.next_item(s.id), ServiceErrorKind::inactive);
  EXPECT_SERVICE_ERROR(svc.withdraw(s.id), ServiceErrorKind::inactive);
  const auto csv = svc.export_csv("s");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(svc.ratings("s").size(), 5U);
}

TEST(RatingService, ExportCountsAndEmptySet) {
  bt::TempDir dir;
  RatingService svc(dir.path(), fixed_clock());
  svc.register_image_set(make_set("s", 7));
  svc.register_image_set(make_set("empty", 3));
  for (int o = 0; o < 30; ++o) {
    const auto s = svc.create_session("obs" + std::to_string(o), "s", 5);
    rate_all(svc, s.id, (o % 5) / 4.0);
  }
  const auto csv = svc.export_csv("s");
  EXPECT_EQ(csv.rfind("image_id,observer_id,score,timestamp\n", 0), 0U);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 30 * 7);
  EXPECT_EQ(svc.export_csv("empty"), "image_id,observer_id,score,timestamp\n");
  const auto mos = aggregate(svc.ratings("s"));
  ASSERT_EQ(mos.size(), 7U);
  for (const auto& m : mos) EXPECT_EQ(m.n_raters, 30);
}

TEST(RatingService, ObserverIsNotQueuedTwiceForTheSameImage) {
  bt::TempDir dir;
  RatingService svc(dir.path(), fixed_clock());
  svc.register_image_set(make_set("s", 4));
  const auto a = svc.create_session("obs", "s", 1);
  const auto b = svc.create_session("obs", "s", 2);
  svc.submit_rating({a.id, a.queue[0], 0.3, {}, {}});
  // session b was created before the rating; it still refuses a second score
  while (svc.next_item(b.id).image_id != a.queue[0]) svc.submit_rating({b.id, svc.next_item(b.id).image_id, 0.3, {}, {}});
  EXPECT_SERVICE_ERROR(svc.submit_rating({b.id, a.queue[0], 0.3, {}, {}}), ServiceErrorKind::duplicate);
  const auto c = svc.create_session("obs", "s", 3);
  EXPECT_EQ(c.queue.size(), 4U - svc.ratings("s").size());
  EXPECT_EQ(std::count(c.queue.begin(), c.queue.end(), a.queue[0]), 0);
}

TEST(RatingService, RestartReplaysLogAndSnapshots) {
  bt::TempDir dir;
  std::string session_id;
  std::string before;
  {
    RatingService svc(dir.path(), fixed_clock(), 4);
    svc.register_image_set(make_set("s", 10));
    session_id = svc.create_session("obs", "s", 8).id;
    for (int i = 0; i < 7; ++i) svc.submit_rating({session_id, svc.next_item(session_id).image_id, i / 10.0, {}, {}});
    before = svc.export_csv("s");
  }
  RatingService again(dir.path(), fixed_clock(), 4);
  again.register_image_set(make_set("s", 10));
  EXPECT_EQ(again.export_csv("s"), before);
  EXPECT_EQ(again.session(session_id).cursor, 7U);
  EXPECT_EQ(again.next_item(session_id).history.size(), 7U);
  again.submit_rating({session_id, again.next_item(session_id).image_id, 0.9, {}, {}});
  const auto s2 = again.create_session("other", "s", 1);
  EXPECT_NE(s2.id, session_id);
}

TEST(RatingService, TornFinalLogLineIsIgnored) {
  bt::TempDir dir;
  {
    RatingService svc(dir.path(), fixed_clock());
    svc.register_image_set(make_set("s", 3));
    const auto s = svc.create_session("obs", "s", 8);
    svc.submit_rating({s.id, s.queue[0], 0.5, {}, {}});
  }
  std::ofstream(dir / "log.jsonl", std::ios::app) << "{\"type\":\"rating\",\"ses";
  RatingService again(dir.path(), fixed_clock());
  again.register_image_set(make_set("s", 3));
  EXPECT_EQ(again.ratings("s").size(), 1U);
}

TEST(RatingHttp, RoutesAndErrors) {
  bt::TempDir dir;
  RatingService svc(dir / "state", fixed_clock());
  std::filesystem::create_directories(dir / "imgs");
  bt::write_bytes(dir / "imgs" / "a.png", "PNGDATA");
  bt::write_bytes(dir / "imgs" / "b.png", "PNGDATB");
  svc.register_image_set(image_set_from_directory("set1", dir / "imgs"));

  auto created = handle_request(svc, "POST", "/sessions", R"({"observer_id":"o1","image_set":"set1","shuffle_seed":4})");
  ASSERT_EQ(created.status, 201);
  const auto cj = json::parse(created.body);
  EXPECT_EQ(cj.at("schema_version"), kSchemaVersion);
  const std::string sid = cj.at("session").at("session_id");

  auto next = handle_request(svc, "GET", "/sessions/" + sid + "/next", "");
  ASSERT_EQ(next.status, 200);
  const auto nj = json::parse(next.body);
  EXPECT_EQ(nj.at("total"), 2);
  EXPECT_EQ(nj.at("history").size(), 0U);
  const std::string image = nj.at("image_id");
  EXPECT_EQ(nj.at("image_url"), "/images/" + image);

  const auto img = handle_request(svc, "GET", "/images/" + image, "");
  EXPECT_EQ(img.status, 200);
  EXPECT_EQ(img.content_type, "image/png");
  EXPECT_EQ(img.body.substr(0, 6), "PNGDAT");

  auto rated = handle_request(svc, "POST", "/sessions/" + sid + "/ratings",
                              json{{"image_id", image}, {"discrete_label", 4}}.dump());
  ASSERT_EQ(rated.status, 200);
  EXPECT_EQ(json::parse(rated.body).at("score"), 0.75);
  EXPECT_EQ(handle_request(svc, "POST", "/sessions/" + sid + "/ratings", json{{"image_id", image}, {"score", 0.2}}.dump())
                .status,
            409);
  EXPECT_EQ(handle_request(svc, "POST", "/sessions/" + sid + "/ratings", "{not json").status, 400);
  EXPECT_EQ(handle_request(svc, "POST", "/sessions", R"({"observer_id":"o1","image_set":"zzz"})").status, 404);
  EXPECT_EQ(handle_request(svc, "GET", "/sessions/nope/next", "").status, 404);
  EXPECT_EQ(handle_request(svc, "GET", "/export/zzz.csv", "").status, 404);
  EXPECT_EQ(handle_request(svc, "DELETE", "/sessions", "").status, 404);
  const auto err = json::parse(handle_request(svc, "GET", "/sessions/nope/next", "").body);
  EXPECT_EQ(err.at("error").at("code"), "unknown_session");
  EXPECT_EQ(err.at("schema_version"), kSchemaVersion);

  const auto w = handle_request(svc, "POST", "/sessions/" + sid + "/withdraw", "");
  EXPECT_EQ(json::parse(w.body).at("session").at("status"), "withdrawn");
  const auto exp = handle_request(svc, "GET", "/export/set1.csv", "");
  EXPECT_EQ(exp.content_type, "text/csv");
  EXPECT_EQ(std::count(exp.body.begin(), exp.body.end(), '\n'), 2);
}

TEST(RatingHttp, RealSocketRoundTrip) {
  bt::TempDir dir;
  RatingService svc(dir / "state", fixed_clock());
  svc.register_image_set(make_set("live", 10));
  RatingServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread worker([&] { server.serve(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto res = client.Post("/sessions", R"({"observer_id":"ui","image_set":"live","shuffle_seed":1})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(res->get_header_value("X-Schema-Version"), std::to_string(kSchemaVersion));
  const std::string sid = json::parse(res->body).at("session").at("session_id");
  std::vector<double> sent;
  for (int i = 0; i < 10; ++i) {
    auto next = client.Get("/sessions/" + sid + "/next");
    ASSERT_TRUE(next);
    ASSERT_EQ(next->status, 200);
    const auto nj = json::parse(next->body);
    EXPECT_EQ(nj.at("history").get<std::vector<double>>(), sent);
    const double score = (i % 4 == 3) ? 0.75 : i / 10.0;
    json body{{"image_id", nj.at("image_id")}};
    if (i % 4 == 3)
      body["discrete_label"] = 4;
    else
      body["score"] = score;
    auto ack = client.Post("/sessions/" + sid + "/ratings", body.dump(), "application/json");
    ASSERT_TRUE(ack);
    ASSERT_EQ(ack->status, 200) << ack->body;
    sent.push_back(score);
  }
  auto exported = client.Get("/export/live.csv");
  ASSERT_TRUE(exported);
  EXPECT_EQ(std::count(exported->body.begin(), exported->body.end(), '\n'), 11);
  server.stop();
  worker.join();

  RatingService reopened(dir / "state", fixed_clock());
  reopened.register_image_set(make_set("live", 10));
  EXPECT_EQ(reopened.ratings("live").size(), 10U);
}
