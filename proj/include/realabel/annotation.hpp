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

// Rater work distribution and answer persistence.
//
// The answer log is append-only JSON lines; the service state (per-task answer
// counts and which raters answered what) is a pure function of the log, so a
// restart replays the log from empty. All mutations go through one writer.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <unistd.h>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "realabel/error.hpp"
#include "realabel/labels.hpp"
#include "realabel/log.hpp"
#include "realabel/manifest.hpp"
#include "realabel/tasking.hpp"
#include "realabel/text.hpp"

namespace realabel {

enum class Verdict : std::uint8_t { Yes = 0, Maybe = 1, No = 2 };
enum class AuditCategory : std::uint8_t { ClearMistake = 0, NotAMistake = 1, Undecidable = 2 };

inline constexpr std::size_t kVerdictCount = 3;

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Yes: return "yes";
    case Verdict::Maybe: return "maybe";
    case Verdict::No: return "no";
  }
  return "?";
}

inline const char* category_name(AuditCategory c) {
  switch (c) {
    case AuditCategory::ClearMistake: return "clear-mistake";
    case AuditCategory::NotAMistake: return "not-a-mistake";
    case AuditCategory::Undecidable: return "undecidable";
  }
  return "?";
}

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "yes") return Verdict::Yes;
  if (s == "maybe") return Verdict::Maybe;
  if (s == "no") return Verdict::No;
  return std::nullopt;
}

inline std::optional<AuditCategory> parse_category(std::string_view s) {
  if (s == "clear-mistake") return AuditCategory::ClearMistake;
  if (s == "not-a-mistake") return AuditCategory::NotAMistake;
  if (s == "undecidable") return AuditCategory::Undecidable;
  return std::nullopt;
}

struct RaterAnswer {
  std::string task_id;
  std::string rater_id;
  std::vector<Verdict> verdicts;          // label-assessment
  std::optional<AuditCategory> category;  // mistake-audit
  std::int64_t ts = 0;                    // milliseconds since epoch, or a sequence number

  bool operator==(const RaterAnswer&) const = default;
};

inline nlohmann::ordered_json to_json(const RaterAnswer& a) {
  nlohmann::ordered_json j;
  j["task_id"] = a.task_id;
  j["rater_id"] = a.rater_id;
  auto v = nlohmann::ordered_json::array();
  if (a.category) {
    v.push_back(category_name(*a.category));
  } else {
    for (Verdict x : a.verdicts) v.push_back(verdict_name(x));
  }
  j["verdicts"] = std::move(v);
  j["ts"] = a.ts;
  return j;
}

inline RaterAnswer answer_from_json(const nlohmann::json& j) {
  RaterAnswer a;
  a.task_id = j.at("task_id").get<std::string>();
  a.rater_id = j.at("rater_id").get<std::string>();
  const auto& verdicts = j.at("verdicts");
  require(verdicts.is_array(), "parse", "verdicts must be an array");
  if (verdicts.size() == 1 && verdicts[0].is_string() && parse_category(verdicts[0].get<std::string>())) {
    a.category = parse_category(verdicts[0].get<std::string>());
  } else {
    for (const auto& v : verdicts) {
      auto parsed = v.is_string() ? parse_verdict(v.get<std::string>()) : std::nullopt;
      if (!parsed) throw Error("parse", "invalid verdict " + v.dump());
      a.verdicts.push_back(*parsed);
    }
  }
  a.ts = j.value("ts", std::int64_t{0});
  require(!a.task_id.empty() && !a.rater_id.empty(), "parse", "answer needs task_id and rater_id");
  return a;
}

inline std::int64_t now_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Append-only JSON-lines answer log.
class AnswerLog {
 public:
  // Reads every complete entry. A final line without a newline that does not
  // parse is a torn write from a crash and is dropped (and truncated away when
  // `repair` is set); any other malformed line is an error.
  static std::vector<RaterAnswer> replay(const std::string& path, bool repair = false) {
    std::vector<RaterAnswer> out;
    if (!std::filesystem::exists(path)) return out;
    auto in = text::open_input(path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0, line_no = 0, good_end = 0;
    while (pos < content.size()) {
      ++line_no;
      auto nl = content.find('\n', pos);
      bool complete = nl != std::string::npos;
      std::string_view line(content.data() + pos, (complete ? nl : content.size()) - pos);
      std::size_t next = complete ? nl + 1 : content.size();
      if (text::trim(line).empty()) {
        pos = next;
        if (complete) good_end = next;
        continue;
      }
      try {
        out.push_back(answer_from_json(nlohmann::json::parse(line)));
        if (complete) good_end = next;
        else good_end = content.size();
      } catch (const std::exception& e) {
        if (!complete) {
          log::warn("answer_log_torn_tail", {{"path", path}, {"line", line_no}});
          break;
        }
        throw ParseError(path, line_no, e.what());
      }
      pos = next;
    }
    if (repair && good_end < content.size()) std::filesystem::resize_file(path, good_end);
    if (repair && good_end == content.size() && !content.empty() && content.back() != '\n') {
      std::ofstream fix(path, std::ios::app);
      fix << '\n';
    }
    return out;
  }

  explicit AnswerLog(const std::string& path) : path_(path) {
    file_ = std::fopen(path.c_str(), "ab");
    if (!file_) throw Error("io", "cannot open answer log: " + path);
  }
  AnswerLog(const AnswerLog&) = delete;
  AnswerLog& operator=(const AnswerLog&) = delete;
  ~AnswerLog() {
    if (file_) std::fclose(file_);
  }

  // Returns only after the entry is flushed to stable storage.
  void append(const RaterAnswer& a) {
    std::string line = to_json(a).dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0 ||
        ::fsync(::fileno(file_)) != 0) {
      throw Error("io", "answer log write failed: " + path_);
    }
  }

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  std::FILE* file_ = nullptr;
};

struct RecordResult {
  enum class Status { Accepted, UnknownTask, Duplicate, ArityMismatch, TaskComplete, Invalid };
  Status status = Status::Accepted;
  std::string message;

  bool accepted() const noexcept { return status == Status::Accepted; }
};

struct Progress {
  std::size_t tasks = 0;
  std::size_t complete_tasks = 0;
  std::size_t answers = 0;
  std::size_t raters = 0;
};

class AnnotationService {
 public:
  // When `log_path` is given, existing entries are replayed and new answers are
  // appended durably before they are acknowledged.
  explicit AnnotationService(std::vector<AnnotationTask> tasks, std::optional<std::string> log_path = std::nullopt)
      : tasks_(std::move(tasks)) {
    std::sort(tasks_.begin(), tasks_.end(), [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
    state_.resize(tasks_.size());
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      require(i == 0 || tasks_[i].task_id != tasks_[i - 1].task_id, "data", "duplicate task id " + tasks_[i].task_id);
      index_.emplace(tasks_[i].task_id, i);
      open_.emplace(0, i);
    }
    if (log_path) {
      for (const auto& a : AnswerLog::replay(*log_path, true)) {
        auto r = apply(a);
        if (!r.accepted()) throw Error("data", "answer log " + *log_path + " is inconsistent: " + r.message);
      }
      log_.emplace(*log_path);
    }
  }

  std::size_t task_count() const noexcept { return tasks_.size(); }

  const AnnotationTask* task(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &tasks_[it->second];
  }

  // Least-answered unfinished task this rater has not answered; ties by task id.
  std::optional<AnnotationTask> serve_next_task(const std::string& rater_id) const {
    std::shared_lock lock(mu_);
    for (const auto& [count, idx] : open_) {
      if (!state_[idx].raters.count(rater_id)) return tasks_[idx];
    }
    return std::nullopt;
  }

  RecordResult record_answer(RaterAnswer answer) {
    std::unique_lock lock(mu_);
    if (answer.ts == 0) answer.ts = now_millis();
    auto check = validate(answer);
    if (!check.accepted()) return check;
    if (log_) log_->append(answer);
    commit(answer);
    return check;
  }

  Progress progress() const {
    std::shared_lock lock(mu_);
    Progress p;
    p.tasks = tasks_.size();
    p.complete_tasks = tasks_.size() - open_.size();
    p.answers = answers_.size();
    p.raters = raters_.size();
    return p;
  }

  std::vector<RaterAnswer> answers() const {
    std::shared_lock lock(mu_);
    return answers_;
  }

  std::size_t answer_count(std::string_view task_id) const {
    std::shared_lock lock(mu_);
    auto it = index_.find(std::string(task_id));
    return it == index_.end() ? 0 : state_[it->second].raters.size();
  }

 private:
  struct TaskState {
    std::set<std::string> raters;
  };

  RecordResult validate(const RaterAnswer& a) const {
    using S = RecordResult::Status;
    auto it = index_.find(a.task_id);
    if (it == index_.end()) return {S::UnknownTask, "unknown task " + a.task_id};
    const auto& task = tasks_[it->second];
    const auto& st = state_[it->second];
    if (a.rater_id.empty()) return {S::Invalid, "missing rater id"};
    if (st.raters.count(a.rater_id)) return {S::Duplicate, "rater " + a.rater_id + " already answered " + a.task_id};
    if (st.raters.size() >= static_cast<std::size_t>(task.required_raters)) {
      return {S::TaskComplete, "task " + a.task_id + " already has its required answers"};
    }
    if (task.kind == TaskKind::LabelAssessment) {
      if (a.category || a.verdicts.size() != task.options.size()) {
        return {S::ArityMismatch, "task " + a.task_id + " expects " + std::to_string(task.options.size()) + " verdicts"};
      }
    } else if (!a.category || !a.verdicts.empty()) {
      return {S::ArityMismatch, "audit task " + a.task_id + " expects a single category"};
    }
    return {S::Accepted, "ok"};
  }

  void commit(const RaterAnswer& a) {
    std::size_t idx = index_.at(a.task_id);
    auto& st = state_[idx];
    open_.erase({st.raters.size(), idx});
    st.raters.insert(a.rater_id);
    if (st.raters.size() < static_cast<std::size_t>(tasks_[idx].required_raters)) open_.emplace(st.raters.size(), idx);
    raters_.insert(a.rater_id);
    answers_.push_back(a);
  }

  RecordResult apply(const RaterAnswer& a) {
    auto check = validate(a);
    if (check.accepted()) commit(a);
    return check;
  }

  std::vector<AnnotationTask> tasks_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<TaskState> state_;
  std::set<std::pair<std::size_t, std::size_t>> open_;  // (answer count, task index)
  std::set<std::string> raters_;
  std::vector<RaterAnswer> answers_;
  std::optional<AnswerLog> log_;
  mutable std::shared_mutex mu_;
};

// A simulated rater: categorical answer distributions conditioned on whether
// the option is truly present.
struct SimulatedRaterProfile {
  std::string rater_id;
  std::array<double, 3> present{1.0, 0.0, 0.0};  // P(yes, maybe, no | present)
  std::array<double, 3> absent{0.0, 0.0, 1.0};   // P(yes, maybe, no | absent)
  // On fine-grained animal classes each row is mixed toward uniform:
  // skill * row + (1 - skill) / 3.
  double finegrained_skill = 1.0;
  // Probability of reporting the planted audit category; otherwise one of the
  // other two uniformly.
  double audit_accuracy = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto* row : {&present, &absent}) {
      double total = 0.0;
      for (double p : *row) {
        require(p >= 0.0 && p <= 1.0, "config", "rater " + rater_id + ": probability outside [0, 1]");
        total += p;
      }
      require(std::abs(total - 1.0) <= 1e-9, "config", "rater " + rater_id + ": answer probabilities must sum to 1");
    }
    require(finegrained_skill >= 0.0 && finegrained_skill <= 1.0, "config", "rater " + rater_id + ": invalid skill");
    require(audit_accuracy >= 0.0 && audit_accuracy <= 1.0, "config", "rater " + rater_id + ": invalid audit accuracy");
  }
};

inline SimulatedRaterProfile noiseless_profile(std::string rater_id, std::uint64_t seed = 0) {
  SimulatedRaterProfile p;
  p.rater_id = std::move(rater_id);
  p.seed = seed;
  return p;
}

inline std::vector<SimulatedRaterProfile> load_profiles(const std::string& path) {
  auto in = text::open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse", path + ": " + e.what());
  }
  require(j.is_array(), "parse", path + ": expected an array of rater profiles");
  std::vector<SimulatedRaterProfile> out;
  for (const auto& e : j) {
    SimulatedRaterProfile p;
    p.rater_id = e.at("rater_id").get<std::string>();
    if (e.contains("present")) p.present = e["present"].get<std::array<double, 3>>();
    if (e.contains("absent")) p.absent = e["absent"].get<std::array<double, 3>>();
    p.finegrained_skill = e.value("finegrained_skill", 1.0);
    p.audit_accuracy = e.value("audit_accuracy", 1.0);
    p.seed = e.value("seed", std::uint64_t{0});
    p.validate();
    out.push_back(std::move(p));
  }
  return out;
}

struct SimulationTruth {
  // Label-assessment truth: an option is present iff it is in the image's set.
  const LabelSet* labels = nullptr;
  // Audit truth: planted category per audit task id.
  std::map<std::string, AuditCategory> audit;
  // Needed only when some profile has finegrained_skill < 1.
  const ClassManifest* manifest = nullptr;
};

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t sample_categorical(std::mt19937_64& rng, const std::array<double, 3>& p) {
  double u = unit_uniform(rng);
  if (u < p[0]) return 0;
  if (u < p[0] + p[1]) return 1;
  return 2;
}

}  // namespace detail

// Drains the tasks with the given raters in round-robin order through an
// in-memory service, so assignment follows the same policy as live serving.
// Fully deterministic given profile seeds; `ts` is a sequence number.
inline std::vector<RaterAnswer> simulate_raters(std::span<const AnnotationTask> tasks, const SimulationTruth& truth,
                                                std::span<const SimulatedRaterProfile> profiles) {
  require(!profiles.empty(), "simulation", "no rater profiles");
  for (const auto& p : profiles) p.validate();

  // Resolve every option's truth up front so a gap fails before any sampling.
  std::unordered_map<std::string, std::vector<bool>> option_truth;
  for (const auto& t : tasks) {
    if (t.kind == TaskKind::LabelAssessment) {
      require(truth.labels != nullptr, "simulation", "label-assessment tasks need label truth");
      auto img = truth.labels->images()->find(t.image_id);
      if (!img) throw Error("simulation", "option without ground truth: image " + t.image_id + " is not in the truth set");
      std::vector<bool> present;
      for (ClassId c : t.options) present.push_back(truth.labels->contains(*img, c));
      option_truth.emplace(t.task_id, std::move(present));
    } else if (!truth.audit.count(t.task_id)) {
      throw Error("simulation", "audit task " + t.task_id + " has no planted category");
    }
  }

  std::vector<AnnotationTask> owned(tasks.begin(), tasks.end());
  AnnotationService service(std::move(owned));
  std::vector<std::mt19937_64> rngs;
  for (const auto& p : profiles) rngs.emplace_back(p.seed);

  std::vector<RaterAnswer> out;
  std::int64_t seq = 0;
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t r = 0; r < profiles.size(); ++r) {
      const auto& profile = profiles[r];
      auto task = service.serve_next_task(profile.rater_id);
      if (!task) continue;
      progress = true;
      RaterAnswer a;
      a.task_id = task->task_id;
      a.rater_id = profile.rater_id;
      a.ts = ++seq;
      if (task->kind == TaskKind::LabelAssessment) {
        const auto& present = option_truth.at(task->task_id);
        for (std::size_t o = 0; o < task->options.size(); ++o) {
          auto row = present[o] ? profile.present : profile.absent;
          if (profile.finegrained_skill < 1.0) {
            require(truth.manifest != nullptr, "simulation", "fine-grained skill needs a class manifest");
            if (truth.manifest->is_finegrained_animal(task->options[o])) {
              for (auto& p : row) p = profile.finegrained_skill * p + (1.0 - profile.finegrained_skill) / 3.0;
            }
          }
          a.verdicts.push_back(static_cast<Verdict>(detail::sample_categorical(rngs[r], row)));
        }
      } else {
        auto planted = static_cast<std::size_t>(truth.audit.at(task->task_id));
        double u = detail::unit_uniform(rngs[r]);
        std::size_t cat = planted;
        if (u >= profile.audit_accuracy) {
          std::size_t other = detail::unit_uniform(rngs[r]) < 0.5 ? 1 : 2;
          cat = (planted + other) % 3;
        }
        a.category = static_cast<AuditCategory>(cat);
      }
      auto result = service.record_answer(a);
      if (!result.accepted()) throw Error("simulation", result.message);
      out.push_back(std::move(a));
    }
  }
  return out;
}

inline void write_answers(std::span<const RaterAnswer> answers, const std::string& path) {
  auto out = text::open_output(path);
  for (const auto& a : answers) out << to_json(a).dump() << '\n';
  if (!out) throw Error("io", "write failed: " + path);
}

inline std::vector<RaterAnswer> read_answers(const std::string& path) {
  require(std::filesystem::exists(path), "io", "cannot open file: " + path);
  return AnswerLog::replay(path);
}

}  // namespace realabel
