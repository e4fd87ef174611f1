#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "pbl/http_api.hpp"
#include "pbl/image.hpp"

using namespace pbl;

namespace {

// A live server on an ephemeral port, stopped on destruction.
class LiveServer {
 public:
  LiveServer() {
    SyntheticConfig cfg;
    cfg.games_per_theme = 1;
    data_ = fixtures::desk_data(cfg, 16);
    sessions_ = std::make_unique<SessionManager>(data_.pipeline);
    sessions_->register_checkpoint(
        "default", std::make_shared<ListenerModel>(fixtures::tiny_config(
                       data_.pipeline->tokenizer().vocab_size(), 16, Variant::injection_only, 5)));
    mount_http_api(server_, *sessions_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LiveServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(5, 0);
    return c;
  }
  const PerspectiveInstance& instance() const { return *data_.spawned.instances.front(); }

 private:
  fixtures::DeskData data_;
  std::unique_ptr<SessionManager> sessions_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

nlohmann::json create_body(const PerspectiveInstance& inst) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : inst.images()) images.push_back(r.image_id);
  return {{"images", images}, {"targets", inst.targets()}};
}

nlohmann::json post(httplib::Client& c, const std::string& path, const nlohmann::json& body, int expect) {
  auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  INFO(path << " -> " << res->body);
  CHECK(res->status == expect);
  return nlohmann::json::parse(res->body);
}

}  // namespace

TEST_SUITE("http") {
  TEST_CASE("a full session over HTTP") {
    LiveServer server;
    auto c = server.client();
    const auto& inst = server.instance();
    auto created = post(c, "/sessions", create_body(inst), 201);
    const std::string id = created["session_id"];
    CHECK(created["status"] == "open");
    CHECK(created["version"] == 0);

    auto utt = post(c, "/sessions/" + id + "/utterances", {{"speaker", "human"}, {"text", "the red one"}, {"debug", true}}, 200);
    REQUIRE(utt["beliefs"].size() == 3);
    for (const auto& b : utt["beliefs"])
      CHECK(b["undecided"].get<double>() + b["common"].get<double>() + b["different"].get<double>() ==
            doctest::Approx(1.0));
    CHECK(utt["trajectory"].size() == 3);

    for (int t : inst.targets()) post(c, "/sessions/" + id + "/marks", {{"image_index", t}, {"mark", "common"}}, 200);
    auto report = post(c, "/sessions/" + id + "/close", nlohmann::json::object(), 200);
    CHECK(report["targets"].size() == 3);
    CHECK(report["human_correct"].is_null());

    auto got = c.Get("/sessions/" + id);
    REQUIRE(got);
    CHECK(got->status == 200);
    auto view = nlohmann::json::parse(got->body);
    CHECK(view["status"] == "closed");
    CHECK(view["report"]["session_id"] == id);

    auto polled = c.Get("/sessions/" + id + "?since=0&wait_ms=10");
    REQUIRE(polled);
    CHECK(nlohmann::json::parse(polled->body)["version"].get<int>() > 0);

    const std::string image_id = inst.images()[0].image_id;
    auto img = c.Get("/images/" + image_id);
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(decode_ppm(img->body, image_id).width > 0);
  }

  TEST_CASE("errors map to status codes") {
    LiveServer server;
    auto c = server.client();
    const auto& inst = server.instance();
    auto five = create_body(inst);
    five["images"].erase(0);
    CHECK(post(c, "/sessions", five, 400).contains("error"));
    auto unknown = create_body(inst);
    unknown["checkpoint"] = "missing";
    post(c, "/sessions", unknown, 404);
    auto bad = c.Post("/sessions", "{not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);

    const std::string id = post(c, "/sessions", create_body(inst), 201)["session_id"];
    post(c, "/sessions/" + id + "/utterances", {{"text", ""}}, 400);
    post(c, "/sessions/" + id + "/utterances", {{"speaker", "robot"}, {"text", "hi"}}, 400);
    post(c, "/sessions/nope/utterances", {{"text", "hi"}}, 404);
    post(c, "/sessions/" + id + "/marks", {{"image_index", "x"}, {"mark", "common"}}, 400);
    post(c, "/sessions/" + id + "/marks", {{"image_index", inst.targets()[0]}, {"mark", "maybe"}}, 400);
    post(c, "/sessions/" + id + "/marks", {{"image_index", inst.targets()[0]}, {"mark", "common"}}, 200);
    post(c, "/sessions/" + id + "/marks", {{"image_index", inst.targets()[0]}, {"mark", "common"}}, 409);
    post(c, "/sessions/" + id + "/close", nlohmann::json::object(), 409);

    auto missing = c.Get("/sessions/nope");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    auto bad_poll = c.Get("/sessions/" + id + "?since=abc");
    REQUIRE(bad_poll);
    CHECK(bad_poll->status == 400);
    auto no_image = c.Get("/images/nothing");
    REQUIRE(no_image);
    CHECK(no_image->status == 404);
  }
}
