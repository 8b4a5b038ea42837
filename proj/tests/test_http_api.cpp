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

#include <gtest/gtest.h>

#include <thread>

#include "fixtures.hpp"
#include "realabel/http_api.hpp"

using namespace realabel;

namespace {

class ApiTest : public ::testing::Test {
 protected:
  void SetUp() override {
    auto c = fixtures::planted_campaign(2, 8, 0.5, 1);
    tasks_ = c.tasks;
    AnnotationTask audit;
    audit.task_id = "a1";
    audit.kind = TaskKind::MistakeAudit;
    audit.image_id = "img00000";
    audit.required_raters = 1;
    audit.audit = AuditPayload{"m", AccuracyMetric::Real, class_id(3), {class_id(1)}, {{class_id(1), {"img00001"}}}};
    tasks_.push_back(audit);
    for (auto& t : tasks_) t.required_raters = 1;
    service_ = std::make_unique<AnnotationService>(tasks_, dir_.file("answers.jsonl"));
    mount_annotation_api(server_, *service_, "http://images.example/val");
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Result post(const RaterAnswer& a) { return client_->Post("/api/answers", to_json(a).dump(), "application/json"); }

  fixtures::TempDir dir_;
  std::vector<AnnotationTask> tasks_;
  std::unique_ptr<AnnotationService> service_;
  httplib::Server server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_F(ApiTest, ServesTasksWithImageUrl) {
  auto res = client_->Get("/api/tasks/next?rater_id=alice");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  auto j = nlohmann::json::parse(res->body);
  EXPECT_EQ(j["image_url"], "http://images.example/val/" + j["image_id"].get<std::string>());
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  auto by_id = client_->Get("/api/tasks/" + j["task_id"].get<std::string>());
  ASSERT_TRUE(by_id);
  EXPECT_EQ(by_id->status, 200);
  EXPECT_EQ(client_->Get("/api/tasks/nope")->status, 404);
  EXPECT_EQ(client_->Get("/api/tasks/next")->status, 400);
}

TEST_F(ApiTest, LabelAndAuditAnswersAreLoggedVerbatimOnce) {
  using V = Verdict;
  const AnnotationTask* label = nullptr;
  for (const auto& t : tasks_)
    if (t.kind == TaskKind::LabelAssessment) label = &t;
  ASSERT_EQ(label->options.size(), 8u);
  RaterAnswer a;
  a.task_id = label->task_id;
  a.rater_id = "alice";
  a.verdicts = {V::Yes, V::No, V::Maybe, V::No, V::No, V::Yes, V::No, V::Maybe};
  auto first = post(a);
  ASSERT_TRUE(first);
  EXPECT_EQ(first->status, 200);
  EXPECT_EQ(post(a)->status, 409);  // double submit

  RaterAnswer audit;
  audit.task_id = "a1";
  audit.rater_id = "alice";
  audit.category = AuditCategory::NotAMistake;
  EXPECT_EQ(post(audit)->status, 200);

  auto logged = AnswerLog::replay(dir_.file("answers.jsonl"), false);
  ASSERT_EQ(logged.size(), 2u);
  EXPECT_EQ(logged[0].verdicts, a.verdicts);
  EXPECT_EQ(logged[1].category, AuditCategory::NotAMistake);

  auto progress = nlohmann::json::parse(client_->Get("/api/progress")->body);
  EXPECT_EQ(progress["answers"], 2);
  EXPECT_EQ(progress["complete_tasks"], 2);
  EXPECT_EQ(progress["tasks"], tasks_.size());
}

TEST_F(ApiTest, RejectsBadAnswers) {
  EXPECT_EQ(client_->Post("/api/answers", "{not json", "application/json")->status, 400);
  RaterAnswer unknown;
  unknown.task_id = "ghost";
  unknown.rater_id = "bob";
  unknown.verdicts = {Verdict::Yes};
  EXPECT_EQ(post(unknown)->status, 404);
  RaterAnswer wrong_arity;
  wrong_arity.task_id = tasks_[0].task_id;
  wrong_arity.rater_id = "bob";
  wrong_arity.verdicts = {Verdict::Yes};
  EXPECT_EQ(post(wrong_arity)->status, 400);
  EXPECT_TRUE(service_->answers().empty());
}

TEST_F(ApiTest, DrainsToNoContentAndCompleteTasksReject) {
  std::size_t served = 0;
  while (true) {
    auto res = client_->Get("/api/tasks/next?rater_id=carol");
    ASSERT_TRUE(res);
    if (res->status == 204) break;
    ASSERT_EQ(res->status, 200);
    auto t = task_from_json(nlohmann::json::parse(res->body));
    RaterAnswer a;
    a.task_id = t.task_id;
    a.rater_id = "carol";
    if (t.kind == TaskKind::MistakeAudit) {
      a.category = AuditCategory::ClearMistake;
    } else {
      a.verdicts.assign(t.options.size(), Verdict::No);
    }
    ASSERT_EQ(post(a)->status, 200);
    ++served;
  }
  EXPECT_EQ(served, tasks_.size());
  RaterAnswer late;
  late.task_id = tasks_[0].task_id;
  late.rater_id = "dave";
  late.verdicts.assign(tasks_[0].options.size(), Verdict::Yes);
  EXPECT_EQ(post(late)->status, 409);
  auto pre = client_->Options("/api/answers");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
}
