#include "pbl/http_api.hpp"

#include <algorithm>

#include "pbl/errors.hpp"
#include "pbl/image.hpp"

namespace pbl {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Handler>
auto guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const ValidationError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const ParseError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
    } catch (const NotFoundError& e) {
      send_json(res, 404, {{"error", e.what()}});
    } catch (const StateError& e) {
      send_json(res, 409, {{"error", e.what()}});
    } catch (const SessionError& e) {
      send_json(res, 409, {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

nlohmann::json body_of(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(req.body);
}

}  // namespace

void mount_http_api(httplib::Server& server, SessionManager& sessions) {
  server.Post("/sessions", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                const auto id = sessions.create_session(create_request_from_json(body_of(req)));
                send_json(res, 201, to_json(sessions.view(id)));
              }));

  server.Post(R"(/sessions/([^/]+)/utterances)",
              guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                const auto body = body_of(req);
                if (!body.contains("text") || !body["text"].is_string())
                  throw ValidationError("utterance needs a text field");
                const Speaker speaker = parse_speaker(body.value("speaker", std::string("human")));
                auto result = sessions.post_utterance(req.matches[1], speaker, body["text"].get<std::string>(),
                                                      body.value("debug", false));
                send_json(res, 200, to_json(result));
              }));

  server.Post(R"(/sessions/([^/]+)/marks)", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                const auto body = body_of(req);
                if (!body.contains("image_index") || !body["image_index"].is_number_integer())
                  throw ValidationError("mark needs an integer image_index");
                if (!body.contains("mark") || !body["mark"].is_string())
                  throw ValidationError("mark needs a mark field");
                auto rec = sessions.post_mark(req.matches[1], body["image_index"].get<int>(),
                                              parse_mark(body["mark"].get<std::string>()));
                send_json(res, 200, to_json(rec));
              }));

  server.Post(R"(/sessions/([^/]+)/close)", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, to_json(sessions.close_session(req.matches[1])));
              }));

  server.Get(R"(/sessions/([^/]+))", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               if (req.has_param("since")) {
                 std::uint64_t since = 0;
                 int wait_ms = 1000;
                 try {
                   since = std::stoull(req.get_param_value("since"));
                   if (req.has_param("wait_ms")) wait_ms = std::stoi(req.get_param_value("wait_ms"));
                 } catch (const std::exception&) {
                   throw ValidationError("since and wait_ms must be integers");
                 }
                 wait_ms = std::clamp(wait_ms, 0, 1000);
                 send_json(res, 200, to_json(sessions.wait_for_update(id, since, std::chrono::milliseconds(wait_ms))));
               } else {
                 send_json(res, 200, to_json(sessions.view(id)));
               }
             }));

  server.Get(R"(/images/([^/]+))", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               auto ref = sessions.find_image(id);
               if (!ref) throw NotFoundError("no session image '" + id + "'");
               res.status = 200;
               res.set_content(encode_ppm(sessions.pipeline().images().load(*ref)), "image/x-portable-pixmap");
             }));
}

}  // namespace pbl
