#pragma once

// HTTP binding of SessionManager:
//
//   POST /sessions                  create; 201 + session view
//   POST /sessions/{id}/utterances  {"speaker", "text", "debug"?}
//   POST /sessions/{id}/marks       {"image_index", "mark"}
//   POST /sessions/{id}/close       score report
//   GET  /sessions/{id}             view; ?since=<version>&wait_ms=<= 1000 long-polls
//   GET  /images/{image_id}         binary PPM of a session image
//
// Errors come back as {"error": message} with 400 (validation), 404
// (unknown session, checkpoint or image) or 409 (wrong session state).

// Eigen must be seen before httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "pbl/service.hpp"

#include "httplib.h"

namespace pbl {

void mount_http_api(httplib::Server& server, SessionManager& sessions);

}  // namespace pbl
