/* Copyright 2026 The realabel Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// JSON-over-HTTP front of an AnnotationService, consumed by the rater UI.
//
//   GET  /api/tasks/next?rater_id=R   200 task JSON (+ image_url) | 204 nothing left
//   POST /api/answers                 200 | 400 malformed | 404 unknown task | 409 duplicate/complete
//   GET  /api/progress                200 {tasks, complete_tasks, answers, raters}
//   GET  /api/tasks/{id}              200 task JSON | 404

#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "realabel/annotation.hpp"
#include "realabel/log.hpp"
#include "realabel/tasking.hpp"

namespace realabel {

inline int http_status(RecordResult::Status s) {
  using S = RecordResult::Status;
  switch (s) {
    case S::Accepted: return 200;
    case S::UnknownTask: return 404;
    case S::Duplicate:
    case S::TaskComplete: return 409;
    case S::ArityMismatch:
    case S::Invalid: return 400;
  }
  return 500;
}

namespace detail {

inline void reply_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply_json(res, status, nlohmann::ordered_json{{"error", message}});
}

inline nlohmann::ordered_json task_view(const AnnotationTask& t, const std::string& image_base_url) {
  auto j = to_json(t);
  std::string base = image_base_url;
  if (!base.empty() && base.back() != '/') base.push_back('/');
  j["image_url"] = base + t.image_id;
  return j;
}

}  // namespace detail

// Registers the routes on `server`. The service must outlive it.
inline void mount_annotation_api(httplib::Server& server, AnnotationService& service, std::string image_base_url) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Get("/api/tasks/next", [&service, image_base_url](const httplib::Request& req, httplib::Response& res) {
    auto rater = req.get_param_value("rater_id");
    if (rater.empty()) return detail::reply_error(res, 400, "rater_id is required");
    auto task = service.serve_next_task(rater);
    if (!task) {
      res.status = 204;
      return;
    }
    detail::reply_json(res, 200, detail::task_view(*task, image_base_url));
  });

  server.Get(R"(/api/tasks/([^/]+))", [&service, image_base_url](const httplib::Request& req, httplib::Response& res) {
    const auto* task = service.task(req.matches[1].str());
    if (!task) return detail::reply_error(res, 404, "unknown task " + req.matches[1].str());
    detail::reply_json(res, 200, detail::task_view(*task, image_base_url));
  });

  server.Post("/api/answers", [&service](const httplib::Request& req, httplib::Response& res) {
    RaterAnswer answer;
    try {
      answer = answer_from_json(nlohmann::json::parse(req.body));
    } catch (const std::exception& e) {
      return detail::reply_error(res, 400, std::string("malformed answer: ") + e.what());
    }
    auto result = service.record_answer(std::move(answer));
    int status = http_status(result.status);
    if (status != 200) return detail::reply_error(res, status, result.message);
    detail::reply_json(res, 200, nlohmann::ordered_json{{"status", "accepted"}});
  });

  server.Get("/api/progress", [&service](const httplib::Request&, httplib::Response& res) {
    auto p = service.progress();
    detail::reply_json(res, 200,
                       nlohmann::ordered_json{{"tasks", p.tasks},
                                              {"complete_tasks", p.complete_tasks},
                                              {"answers", p.answers},
                                              {"raters", p.raters}});
  });

  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    log::debug("http", {{"method", req.method}, {"path", req.path}, {"status", res.status}});
  });
}

}  // namespace realabel
