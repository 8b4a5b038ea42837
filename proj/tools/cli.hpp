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

// The `realabel` command line: one subcommand per pipeline stage, a shared
// key=value config file whose entries fill any flag not given explicitly, and
// JSON errors on stderr (exit 1 for module errors, 2 for usage errors).

#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "realabel/http_api.hpp"
#include "realabel/realabel.hpp"

namespace realabel::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using ConfigMap = std::map<std::string, std::string>;

// `key = value` per line; blank lines and `#` comments are skipped. Keys are
// flag names without the leading dashes.
inline ConfigMap load_config(const std::string& path) {
  auto in = text::open_input(path);
  ConfigMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(path, line_no, "expected key = value");
    std::string key(text::trim(t.substr(0, eq)));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw ParseError(path, line_no, "empty key");
    out[key] = std::string(text::trim(t.substr(eq + 1)));
  }
  return out;
}

namespace detail {

inline void ensure_parent(const std::string& path) {
  auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

inline void write_text(const std::string& path, const std::string& body) {
  ensure_parent(path);
  auto out = text::open_output(path);
  out << body;
  if (!out) throw Error("io", "write failed: " + path);
}

// Reports go to --report when set, otherwise stdout.
inline void emit_report(const Json& report, const std::string& path) {
  std::string body = report.dump(2) + "\n";
  if (path.empty()) std::cout << body << std::flush;
  else write_text(path, body);
}

inline bool is_prediction_file(const fs::path& p) {
  auto ext = p.extension().string();
  return ext == ".csv" || ext == ".bin" || ext == ".rlpred";
}

// Files are taken as given; directories contribute their prediction files in
// name order.
inline std::vector<std::string> expand_predictions(const std::vector<std::string>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) {
    if (!fs::is_directory(p)) {
      out.push_back(p);
      continue;
    }
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file() && is_prediction_file(e.path())) found.push_back(e.path().string());
    }
    std::sort(found.begin(), found.end());
    require(!found.empty(), "io", "no prediction files in " + p);
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

inline std::vector<PredictionSet> load_models(const std::vector<std::string>& paths, const RegistryPtr& images,
                                              std::int32_t num_classes) {
  auto files = expand_predictions(paths);
  require(!files.empty(), "io", "no prediction files given");
  std::vector<PredictionSet> models;
  for (const auto& f : files) {
    IngestOptions opt;
    opt.images = images;
    opt.num_classes = num_classes;
    models.push_back(ingest_predictions(f, opt));
    log::info("predictions.loaded", {{"path", f}, {"model", models.back().model_name()}});
  }
  return models;
}

inline std::vector<std::size_t> indices_of(const RegistryPtr& images, const std::vector<std::string>& ids,
                                           const std::string& what) {
  std::vector<std::size_t> out;
  for (const auto& id : ids) {
    auto i = images->find(id);
    require(i.has_value(), "data", what + ": unknown image id " + id);
    out.push_back(*i);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::map<std::string, AuditCategory> load_audit_truth(const std::string& path) {
  auto in = text::open_input(path);
  std::map<std::string, AuditCategory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto c = parse_category(j.at("category").get<std::string>());
      if (!c) throw ParseError(path, line_no, "unknown audit category");
      out[j.at("task_id").get<std::string>()] = *c;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, line_no, e.what());
    }
  }
  return out;
}

inline Json error_object(std::string_view kind, const std::string& message) {
  Json e;
  e["kind"] = kind;
  e["message"] = message;
  return e;
}

inline httplib::Server* g_server = nullptr;

inline void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace detail

// Flag values for every subcommand. Subcommands only read their own.
struct Flags {
  std::string config;
  unsigned threads = 0;
  std::uint64_t seed = 0;
  std::string log_level = "info";

  std::vector<std::string> predictions;
  std::string original, labels, gold, hierarchy, manifest, proposals, tasks, answers, profiles, audit_truth;
  std::string skipped, table, include, exclude, order, folds_file, fold_preds;
  std::string out, report, skipped_out, retained_out, removed_out;
  std::int32_t num_classes = 0;

  std::size_t top_logits = 150000, top_probs = 150000, min_occurrences = 2;
  bool global_pool = false;
  double recall_floor = 0.97;

  std::size_t max_options = kDefaultMaxOptions;
  int required_raters = 5;
  std::size_t raters = 5;

  std::string method = "ds";
  std::string virtual_rater = "on";
  std::optional<double> tau;
  double target_precision = kDefaultTargetPrecision;
  double tol = 1e-6;
  int max_iter = 500;
  std::size_t thresholds = 0;

  std::size_t k = 1;
  bool include_original = false;

  double ceiling = 0.90;
  std::string anchor;
  std::size_t top = 5;
  std::string subset = "all";
  std::string metric = "original";
  std::size_t sample = 100, exemplars = 3;

  std::uint32_t folds = 10;
  std::optional<double> min_prob;

  std::size_t trials = 1000, max_classes = 50;
  double tolerance = 1e-5;

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string image_base_url;
};

class Cli {
 public:
  Cli() : app_("realabel: multi-label reassessment toolkit", "realabel") { build(); }

  int run(int argc, char** argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app_.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app_.exit(e);
    } catch (const CLI::CallForVersion& e) {
      return app_.exit(e);
    } catch (const CLI::ParseError& e) {
      return usage_error(e.what());
    }
    try {
      log::set_level(parse_level(f_.log_level));
      if (!f_.config.empty()) merge_config(load_config(f_.config));
      check_required();
      log::set_level(parse_level(f_.log_level));
      set_thread_cap(f_.threads);
      validate_inputs();
      action_();
      return 0;
    } catch (const UsageError& e) {
      return usage_error(e.what());
    } catch (const ParseError& e) {
      auto obj = detail::error_object(e.kind(), e.what());
      obj["path"] = e.path();
      obj["line"] = e.line();
      return fail(obj);
    } catch (const Error& e) {
      return fail(detail::error_object(e.kind(), e.what()));
    } catch (const fs::filesystem_error& e) {
      return fail(detail::error_object("io", e.what()));
    } catch (const std::exception& e) {
      return fail(detail::error_object("internal", e.what()));
    }
  }

 private:
  static log::Level parse_level(const std::string& s) {
    if (s == "debug") return log::Level::Debug;
    if (s == "info") return log::Level::Info;
    if (s == "warn") return log::Level::Warn;
    if (s == "error") return log::Level::Error;
    if (s == "off") return log::Level::Off;
    throw UsageError("unknown log level: " + s);
  }

  static int fail(Json obj) {
    Json j;
    j["error"] = std::move(obj);
    std::cerr << j.dump() << std::endl;
    return 1;
  }

  int usage_error(const std::string& message) {
    Json j;
    j["error"] = detail::error_object("usage", message);
    std::cerr << j.dump() << "\nRun with --help for more information." << std::endl;
    return 2;
  }

  // The selected subcommand chain, outermost first.
  std::vector<CLI::App*> chain() {
    std::vector<CLI::App*> out{&app_};
    CLI::App* cur = &app_;
    while (true) {
      auto subs = cur->get_subcommands();
      if (subs.empty()) break;
      cur = subs.front();
      out.push_back(cur);
    }
    return out;
  }

  void merge_config(const ConfigMap& config) {
    for (CLI::App* a : chain()) {
      for (CLI::Option* opt : a->get_options()) {
        if (opt->count() > 0 || opt->get_lnames().empty()) continue;
        auto it = config.find(opt->get_lnames().front());
        if (it == config.end() || it->first == "config") continue;
        if (opt->get_expected_max() > 1) {
          std::stringstream ss(it->second);
          std::string item;
          while (std::getline(ss, item, ',')) opt->add_result(std::string(text::trim(item)));
        } else {
          opt->add_result(it->second);
        }
        try {
          opt->run_callback();
        } catch (const CLI::ParseError& e) {
          throw UsageError("config key " + it->first + ": " + e.what());
        }
      }
    }
  }

  // Only the selected subcommand's flags are checked, after the config merge.
  void check_required() {
    auto active = chain();
    for (CLI::Option* opt : required_) {
      bool mine = false;
      for (CLI::App* a : active) {
        for (CLI::Option* o : a->get_options()) mine = mine || o == opt;
      }
      if (mine && opt->count() == 0) throw UsageError("missing required flag " + opt->get_name());
    }
  }

  // Every input path the selected stage will read must exist before it starts.
  void validate_inputs() {
    for (auto& [opt, dir] : inputs_) {
      if (opt->count() == 0) continue;
      for (const auto& p : opt->results()) {
        if (!fs::exists(p)) throw Error("io", "input not found: " + p);
        if (dir && !fs::is_directory(p)) throw Error("io", "not a directory: " + p);
      }
    }
  }

  CLI::App* command(const std::string& name, const std::string& about, std::function<void()> action,
                    CLI::App* parent = nullptr) {
    CLI::App* sub = (parent ? parent : &app_)->add_subcommand(name, about);
    sub->fallthrough();  // global flags may follow the subcommand
    sub->callback([this, action = std::move(action)] { action_ = action; });
    return sub;
  }

  CLI::Option* required(CLI::Option* opt) {
    required_.push_back(opt);
    opt->description(opt->get_description() + " (required)");
    return opt;
  }

  CLI::Option* input(CLI::Option* opt, bool dir = false) {
    inputs_.emplace_back(opt, dir);
    return opt;
  }

  // Shared flag groups.
  void add_original(CLI::App* s, bool req = true) {
    auto* o = input(s->add_option("--original", f_.original, "Original labels CSV (image_id,class_id)"));
    if (req) required(o);
  }
  void add_predictions(CLI::App* s, const std::string& what = "Prediction files or directories") {
    required(input(s->add_option("--predictions,--pred", f_.predictions, what)));
    s->add_option("--num-classes", f_.num_classes, "Class count (default: manifest size or inferred)");
  }
  void add_pooling(CLI::App* s) {
    s->add_option("--top-logits", f_.top_logits, "Pairs kept per logit channel")->capture_default_str();
    s->add_option("--top-probs", f_.top_probs, "Pairs kept per probability channel")->capture_default_str();
    s->add_option("--min-occurrences", f_.min_occurrences, "Channel lists a pooled pair must appear in")
        ->capture_default_str();
    s->add_flag("--global-pool", f_.global_pool, "Rank all models' scores together instead of per model");
  }
  void add_report(CLI::App* s) { s->add_option("--report", f_.report, "Write the JSON report here instead of stdout"); }
  void add_labels(CLI::App* s) {
    required(input(s->add_option("--labels", f_.labels, "Multi-label set (JSON lines)")));
  }
  void add_manifest(CLI::App* s, bool req) {
    auto* o = input(s->add_option("--manifest", f_.manifest, "Class manifest CSV"));
    if (req) required(o);
  }
  void add_out(CLI::App* s, const std::string& what) { required(s->add_option("--out", f_.out, what)); }

  PoolingConfig pooling() const {
    PoolingConfig pc;
    pc.top_logit_count = f_.top_logits;
    pc.top_prob_count = f_.top_probs;
    pc.min_occurrences = f_.min_occurrences;
    pc.global_pool = f_.global_pool;
    return pc;
  }

  std::optional<ClassManifest> manifest() const {
    if (f_.manifest.empty()) return std::nullopt;
    return load_class_manifest(f_.manifest);
  }

  std::int32_t num_classes(const std::optional<ClassManifest>& m) const {
    if (f_.num_classes > 0) return f_.num_classes;
    if (m && m->size() > 0) return to_int(m->classes().rbegin()->first) + 1;
    return 0;
  }

  OriginalLabels original() const { return load_original_labels(f_.original); }

  void build() {
    app_.require_subcommand(1);
    app_.add_option("--config", f_.config, "key = value file; explicit flags win");
    app_.add_option("--threads", f_.threads, "Cap on worker threads (0 = all cores)");
    app_.add_option("--seed", f_.seed, "Seed for every randomized stage")->capture_default_str();
    app_.add_option("--log-level", f_.log_level, "debug, info, warn, error or off")->capture_default_str();

    build_propose();
    build_select_models();
    build_make_tasks();
    build_serve();
    build_simulate();
    build_aggregate();
    build_curve();
    build_metrics();
    build_compare();
    build_oracle();
    build_cooccur();
    build_curves();
    build_audit();
    build_folds();
    build_clean();
    build_loss_check();
  }

  void build_propose() {
    auto* s = command("propose", "Pool candidate labels from model predictions", [this] { propose(); });
    add_predictions(s);
    add_original(s);
    add_manifest(s, false);
    add_pooling(s);
    input(s->add_option("--gold", f_.gold, "Gold label sets; adds precision and recall to the report"));
    add_out(s, "Proposals output (JSON lines)");
    add_report(s);
  }

  void propose() {
    auto orig = original();
    auto man = manifest();
    auto models = detail::load_models(f_.predictions, orig.images, num_classes(man));
    auto props = generate_proposals(std::span<const PredictionSet>(models), orig, pooling());
    detail::ensure_parent(f_.out);
    write_proposals(props, f_.out);
    Json r;
    Json names = Json::array();
    for (const auto& m : models) names.push_back(m.model_name());
    r["models"] = names;
    r["images"] = props.image_count();
    r["proposals"] = props.total();
    r["mean_per_image"] = props.mean_per_image();
    if (!f_.gold.empty()) {
      auto pr = score_proposals(props, ingest_gold(f_.gold, orig.images));
      r["precision"] = pr.precision;
      r["recall"] = pr.recall;
    }
    log::info("propose.done", {{"out", f_.out}, {"proposals", props.total()}});
    detail::emit_report(r, f_.report);
  }

  void build_select_models() {
    auto* s = command("select-models", "Exhaustive model-subset search under a recall floor",
                      [this] { select_models(); });
    add_predictions(s);
    add_original(s);
    add_manifest(s, false);
    required(input(s->add_option("--gold", f_.gold, "Gold label sets (JSON lines)")));
    s->add_option("--recall-floor", f_.recall_floor, "Minimum gold recall")->capture_default_str();
    add_pooling(s);
    add_report(s);
  }

  void select_models() {
    auto orig = original();
    auto man = manifest();
    auto models = detail::load_models(f_.predictions, orig.images, num_classes(man));
    auto gold = ingest_gold(f_.gold, orig.images);
    auto result = select_subset(models, orig, gold, f_.recall_floor, pooling());
    log::info("select-models.done", {{"subsets", result.subsets_evaluated}});
    detail::emit_report(to_json(result), f_.report);
  }

  void build_make_tasks() {
    auto* s = command("make-tasks", "Turn proposals into label-assessment tasks", [this] { make_tasks(); });
    required(input(s->add_option("--proposals", f_.proposals, "Proposals (JSON lines)")));
    add_predictions(s, "Prediction files or directories (for the unanimity filter)");
    add_original(s);
    required(input(s->add_option("--hierarchy", f_.hierarchy, "Hierarchy edge list")));
    add_manifest(s, true);
    s->add_option("--max-options", f_.max_options, "Options per task")->capture_default_str();
    s->add_option("--required-raters", f_.required_raters, "Answers needed per task")->capture_default_str();
    add_out(s, "Tasks output (JSON lines)");
    s->add_option("--skipped-out", f_.skipped_out, "Ids of images that skip review (all models agree with the label)");
    add_report(s);
  }

  void make_tasks() {
    auto orig = original();
    auto man = manifest();
    auto hierarchy = load_hierarchy(f_.hierarchy, &*man);
    auto models = detail::load_models(f_.predictions, orig.images, num_classes(man));
    auto props = read_proposals(f_.proposals, orig.images);
    auto filter = filter_unanimous(props, models, orig);
    auto tasks = split_tasks(props, filter.keep, hierarchy, f_.max_options, f_.required_raters);
    detail::ensure_parent(f_.out);
    write_tasks(tasks, f_.out);
    if (!f_.skipped_out.empty()) {
      std::vector<std::string> ids;
      for (auto i : filter.skip) ids.push_back(orig.images->id(i));
      detail::ensure_parent(f_.skipped_out);
      write_id_list(ids, f_.skipped_out);
    }
    std::size_t options = 0;
    for (const auto& t : tasks) options += t.options.size();
    Json r;
    r["images"] = orig.size();
    r["skipped"] = filter.skip.size();
    r["reviewed"] = filter.keep.size();
    r["tasks"] = tasks.size();
    r["options"] = options;
    log::info("make-tasks.done", {{"out", f_.out}, {"tasks", tasks.size()}});
    detail::emit_report(r, f_.report);
  }

  void build_serve() {
    auto* s = command("serve", "Serve tasks to raters over HTTP/JSON", [this] { serve(); });
    required(input(s->add_option("--tasks", f_.tasks, "Tasks (JSON lines)")));
    required(s->add_option("--log", f_.answers, "Append-only answer log (replayed on start)"));
    s->add_option("--host", f_.host, "Bind address")->capture_default_str();
    s->add_option("--port", f_.port, "Port")->capture_default_str();
    s->add_option("--image-base-url", f_.image_base_url, "Base URL for image pixels")->envname("IMAGE_BASE_URL");
  }

  void serve() {
    detail::ensure_parent(f_.answers);
    AnnotationService service(read_tasks(f_.tasks), f_.answers);
    httplib::Server server;
    mount_annotation_api(server, service, f_.image_base_url);
    detail::g_server = &server;
    std::signal(SIGINT, detail::stop_server);
    std::signal(SIGTERM, detail::stop_server);
    if (!server.bind_to_port(f_.host, f_.port)) {
      throw Error("io", "cannot bind " + f_.host + ":" + std::to_string(f_.port));
    }
    log::info("serve.listening", {{"host", f_.host}, {"port", f_.port}, {"tasks", service.progress().tasks}});
    server.listen_after_bind();
    detail::g_server = nullptr;
    log::info("serve.stopped", {{"answers", service.progress().answers}});
  }

  void build_simulate() {
    auto* s = command("simulate-raters", "Answer tasks with simulated raters", [this] { simulate(); });
    required(input(s->add_option("--tasks", f_.tasks, "Tasks (JSON lines)")));
    required(input(s->add_option("--truth", f_.labels, "True label sets (JSON lines)")));
    input(s->add_option("--profiles", f_.profiles, "Rater profiles (JSON array); default: noiseless raters"));
    s->add_option("--raters", f_.raters, "Noiseless raters when no profiles are given")->capture_default_str();
    input(s->add_option("--audit-truth", f_.audit_truth, "Planted audit categories (JSON lines)"));
    add_manifest(s, false);
    add_out(s, "Answers output (JSON lines)");
  }

  void simulate() {
    auto tasks = read_tasks(f_.tasks);
    auto truth_labels = ingest_labels(f_.labels);
    auto man = manifest();
    std::vector<SimulatedRaterProfile> profiles;
    if (!f_.profiles.empty()) {
      profiles = load_profiles(f_.profiles);
    } else {
      require(f_.raters > 0, "config", "need at least one rater");
      for (std::size_t r = 0; r < f_.raters; ++r) profiles.push_back(noiseless_profile("sim" + std::to_string(r), r));
    }
    for (auto& p : profiles) p.seed += f_.seed;
    SimulationTruth truth;
    truth.labels = &truth_labels;
    truth.manifest = man ? &*man : nullptr;
    if (!f_.audit_truth.empty()) truth.audit = detail::load_audit_truth(f_.audit_truth);
    auto answers = simulate_raters(tasks, truth, profiles);
    detail::ensure_parent(f_.out);
    write_answers(answers, f_.out);
    log::info("simulate-raters.done", {{"out", f_.out}, {"answers", answers.size()}});
  }

  void add_aggregation_inputs(CLI::App* s) {
    required(input(s->add_option("--tasks", f_.tasks, "Tasks (JSON lines)")));
    required(input(s->add_option("--answers", f_.answers, "Answer log (JSON lines)")));
    add_original(s);
    add_manifest(s, false);
    s->add_option("--virtual-rater", f_.virtual_rater, "Original label as an extra rater on animal images")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    s->add_option("--tol", f_.tol, "EM convergence tolerance")->capture_default_str();
    s->add_option("--max-iter", f_.max_iter, "EM iteration cap")->capture_default_str();
    s->add_option("--target-precision", f_.target_precision, "Gold precision the operating point must reach")
        ->capture_default_str();
  }

  struct Fitted {
    OriginalLabels original;
    AnswerMatrix matrix;
  };

  Fitted answer_matrix() {
    Fitted f{original(), {}};
    auto man = manifest();
    auto tasks = read_tasks(f_.tasks);
    auto answers = read_answers(f_.answers);
    VirtualRaterConfig vr;
    bool use_vr = f_.virtual_rater == "on";
    if (use_vr) {
      if (!man) throw UsageError("--virtual-rater on needs --manifest (animal classes)");
      vr.original = &f.original;
      vr.manifest = &*man;
    }
    f.matrix = build_answer_matrix(tasks, answers, f.original.images, use_vr ? &vr : nullptr);
    log::info("aggregate.matrix", {{"items", f.matrix.items.size()}, {"raters", f.matrix.raters.size()}});
    return f;
  }

  RaterModel fit(const AnswerMatrix& m) const {
    DawidSkeneOptions opt;
    opt.tol = f_.tol;
    opt.max_iter = f_.max_iter;
    auto model = run_dawid_skene(m, opt);
    if (!model.converged) log::warn("aggregate.not_converged", {{"iterations", model.iterations}});
    return model;
  }

  std::vector<double> thresholds(const RaterModel& model, const GoldStandard& gold) const {
    if (f_.thresholds == 0) return default_thresholds(model, gold);
    std::vector<double> t;
    for (std::size_t i = 0; i <= f_.thresholds; ++i) t.push_back(static_cast<double>(i) / static_cast<double>(f_.thresholds));
    t.push_back(std::nextafter(1.0, 2.0));
    return t;
  }

  void build_aggregate() {
    auto* s = command("aggregate", "Aggregate rater answers into final label sets", [this] { aggregate(); });
    add_aggregation_inputs(s);
    s->add_option("--method", f_.method, "ds or majority")->check(CLI::IsMember({"ds", "majority"}))->capture_default_str();
    s->add_option("--tau", f_.tau, "Posterior threshold (default: operating point from --gold, else 0.5)");
    input(s->add_option("--gold", f_.gold, "Gold label sets; adds the PR curve to the report"));
    input(s->add_option("--skipped", f_.skipped, "Ids of images that keep their original label unreviewed"));
    s->add_option("--thresholds", f_.thresholds, "Uniform PR grid size (0 = every distinct posterior)");
    add_out(s, "Final label sets (JSON lines)");
    add_report(s);
  }

  UnanimityFilter skipped_filter(const OriginalLabels& orig) const {
    UnanimityFilter filter;
    if (!f_.skipped.empty()) filter.skip = detail::indices_of(orig.images, load_name_list(f_.skipped), f_.skipped);
    return filter;
  }

  void aggregate() {
    auto fitted = answer_matrix();
    const auto& orig = fitted.original;
    const auto& m = fitted.matrix;
    auto filter = skipped_filter(orig);
    std::optional<GoldStandard> gold;
    if (!f_.gold.empty()) gold = ingest_gold(f_.gold, orig.images);
    Json r;
    r["method"] = f_.method;
    r["virtual_rater"] = f_.virtual_rater;
    r["items"] = m.items.size();
    std::vector<char> accepted;
    if (f_.method == "majority") {
      accepted = majority_vote(m);
      if (f_.tau) log::warn("aggregate.tau_ignored", {{"method", "majority"}});
    } else {
      auto model = fit(m);
      double tau = 0.5;
      std::string source = "default";
      Json curve_json;
      if (gold) {
        auto curve = precision_recall_curve(model, *gold, thresholds(model, *gold));
        curve_json = to_json(std::span<const PrPoint>(curve));
        if (auto op = choose_operating_point(curve, f_.target_precision)) {
          tau = *op;
          source = "operating-point";
        } else {
          log::warn("aggregate.no_operating_point", {{"target_precision", f_.target_precision}});
        }
      }
      if (f_.tau) {
        tau = *f_.tau;
        source = "flag";
      }
      require(tau >= 0.0 && tau <= 1.0, "aggregation", "tau must lie in [0, 1]");
      accepted = accept_at(model, tau);
      r["tau"] = tau;
      r["tau_source"] = source;
      r["model"] = to_json(model);
      if (gold) r["pr_curve"] = std::move(curve_json);
    }
    auto labels = finalize_labels(m.items, accepted, filter, orig);
    std::size_t n_accepted = std::count(accepted.begin(), accepted.end(), 1);
    r["accepted"] = n_accepted;
    if (gold) {
      auto pr = score_acceptance(m.items, accepted, *gold);
      r["gold_precision"] = pr.precision;
      r["gold_recall"] = pr.recall;
    }
    r["evaluated_images"] = labels.evaluated_count();
    r["excluded_images"] = labels.excluded_count();
    detail::ensure_parent(f_.out);
    export_labels(labels, f_.out);
    log::info("aggregate.done", {{"out", f_.out}, {"accepted", n_accepted}});
    detail::emit_report(r, f_.report);
  }

  void build_curve() {
    auto* s = command("curve", "Precision-recall curve of the aggregated posteriors against gold", [this] { curve(); });
    add_aggregation_inputs(s);
    required(input(s->add_option("--gold", f_.gold, "Gold label sets (JSON lines)")));
    s->add_option("--thresholds", f_.thresholds, "Uniform grid size (0 = every distinct posterior)");
    add_out(s, "Curve CSV (tau,precision,recall,accepted,hits,gold)");
    add_report(s);
  }

  void curve() {
    auto fitted = answer_matrix();
    auto model = fit(fitted.matrix);
    auto gold = ingest_gold(f_.gold, fitted.original.images);
    auto curve = precision_recall_curve(model, gold, thresholds(model, gold));
    std::string csv = "tau,precision,recall,accepted,hits,gold\n";
    for (const auto& p : curve) {
      csv += text::format_double(p.tau) + ',' + text::format_double(p.precision) + ',' + text::format_double(p.recall) +
             ',' + std::to_string(p.accepted) + ',' + std::to_string(p.hits) + ',' + std::to_string(p.gold) + '\n';
    }
    detail::write_text(f_.out, csv);
    Json r;
    r["points"] = curve.size();
    auto op = choose_operating_point(curve, f_.target_precision);
    r["target_precision"] = f_.target_precision;
    r["operating_point"] = op ? Json(*op) : Json(nullptr);
    log::info("curve.done", {{"out", f_.out}, {"points", curve.size()}});
    detail::emit_report(r, f_.report);
  }

  void build_metrics() {
    auto* s = command("metrics", "ReaL and original accuracy of models", [this] { metrics(); });
    add_labels(s);
    add_predictions(s);
    add_original(s, false);
    add_manifest(s, false);
    s->add_option("--k", f_.k, "Top-k for the headline ReaL accuracy")->check(CLI::Range(1, 3))->capture_default_str();
    s->add_flag("--include-original", f_.include_original, "Also score the original labels as a model (needs --original)");
    add_report(s);
  }

  void metrics() {
    std::optional<OriginalLabels> orig;
    if (!f_.original.empty()) orig = original();
    if (f_.include_original && !orig) throw UsageError("--include-original needs --original");
    require(f_.k >= 1 && f_.k <= 3, "config", "k must be 1, 2 or 3");
    auto labels = ingest_labels(f_.labels, orig ? orig->images : nullptr);
    auto man = manifest();
    auto models = detail::load_models(f_.predictions, nullptr, num_classes(man));
    if (f_.include_original) {
      std::int32_t n = num_classes(man);
      if (n == 0) {
        for (const auto& m : models) n = std::max(n, m.num_classes());
      }
      models.push_back(original_as_predictions(*orig, n));
    }
    Json arr = Json::array();
    for (std::size_t i = 0; i < models.size(); ++i) {
      const auto& m = models[i];
      Json j;
      if (f_.include_original && i + 1 == models.size()) {
        // A single label per image has no top-2 or top-3.
        auto top1 = real_accuracy_count(m, labels, 1);
        j["model_name"] = m.model_name();
        j["original_top1"] = original_accuracy(m, *orig);
        j["real_top1"] = top1.rate();
        j["evaluated_image_count"] = top1.evaluated;
        j["k"] = 1;
        j["real_accuracy"] = top1.rate();
      } else {
        j = to_json(accuracy_report(m, labels, orig ? &*orig : nullptr));
        j["k"] = f_.k;
        j["real_accuracy"] = real_accuracy(m, labels, f_.k);
      }
      if (orig && !(f_.include_original && i + 1 == models.size())) {
        try {
          auto pref = preference_rate(m, *orig, labels);
          j["preference_rate"] = pref.rate;
          j["preference_n"] = pref.n_discriminating;
        } catch (const Error& e) {
          if (e.kind() != "metrics") throw;
          j["preference_rate"] = nullptr;  // no image separates model from label
          j["preference_n"] = 0;
        }
      }
      arr.push_back(std::move(j));
    }
    log::info("metrics.done", {{"models", models.size()}});
    detail::emit_report(arr, f_.report);
  }

  void build_compare() {
    auto* s = command("compare", "Split-half regression of ReaL on original accuracy", [this] { compare(); });
    required(input(s->add_option("--table", f_.table, "Accuracy table CSV (model,real_acc,orig_acc)")));
    input(s->add_option("--include", f_.include, "Model names to keep, one per line"));
    input(s->add_option("--exclude", f_.exclude, "Model names to drop, one per line"));
    add_report(s);
  }

  void compare() {
    auto points = load_accuracy_table(f_.table);
    std::vector<std::string> inc, exc;
    if (!f_.include.empty()) inc = load_name_list(f_.include);
    if (!f_.exclude.empty()) exc = load_name_list(f_.exclude);
    auto chosen = select_points(points, inc, exc);
    auto result = split_regression(chosen);
    log::info("compare.done", {{"models", chosen.size()}});
    detail::emit_report(to_json(result), f_.report);
  }

  void build_oracle() {
    auto* s = command("oracle", "Per-class accuracy of the original labels against the label sets", [this] { oracle(); });
    add_labels(s);
    add_original(s);
    add_manifest(s, false);
    s->add_option("--ceiling", f_.ceiling, "Oracle accuracy below which a class is ambiguous")->capture_default_str();
    add_out(s, "Per-class CSV (class_id,oracle_accuracy)");
    add_report(s);
  }

  void oracle() {
    auto orig = original();
    auto labels = ingest_labels(f_.labels, orig.images);
    auto acc = oracle_accuracy(labels, orig);
    auto man = manifest();
    std::string csv = "class_id,oracle_accuracy\n";
    double mean = 0.0;
    for (const auto& [c, a] : acc) {
      csv += std::to_string(to_int(c)) + ',' + text::format_double(a) + '\n';
      mean += a;
    }
    detail::write_text(f_.out, csv);
    Json r;
    r["classes"] = acc.size();
    r["mean_oracle_accuracy"] = acc.empty() ? 0.0 : mean / static_cast<double>(acc.size());
    if (man) {
      Json amb = Json::array();
      for (ClassId c : ambiguous_classes(acc, *man, f_.ceiling)) {
        Json e;
        e["class_id"] = to_int(c);
        e["name"] = man->at(c).display_name;
        e["oracle_accuracy"] = acc.at(c);
        amb.push_back(std::move(e));
      }
      r["ambiguous_classes"] = std::move(amb);
    }
    log::info("oracle.done", {{"out", f_.out}});
    detail::emit_report(r, f_.report);
  }

  void build_cooccur() {
    auto* s = command("cooccur", "Classes that co-occur with an anchor class", [this] { cooccur(); });
    add_labels(s);
    required(s->add_option("--class", f_.anchor, "Anchor class id, or display name with --manifest"));
    s->add_option("--top", f_.top, "Rows to report")->capture_default_str();
    add_manifest(s, false);
    add_report(s);
  }

  void cooccur() {
    auto labels = ingest_labels(f_.labels);
    auto man = manifest();
    ClassId anchor{};
    if (auto id = text::parse_int<std::int32_t>(f_.anchor)) {
      anchor = class_id(*id);
    } else {
      if (!man) throw UsageError("--class by name needs --manifest");
      auto found = man->find_by_name(f_.anchor);
      require(found.has_value(), "analysis", "unknown class name: " + f_.anchor);
      anchor = *found;
    }
    auto rows = cooccurrence(labels, anchor, f_.top);
    Json r;
    r["anchor"] = to_int(anchor);
    Json arr = Json::array();
    for (const auto& c : rows) {
      Json e;
      e["class_id"] = to_int(c.cls);
      if (man && man->contains(c.cls)) e["name"] = man->at(c.cls).display_name;
      e["rate"] = c.rate;
      e["count"] = c.count;
      arr.push_back(std::move(e));
    }
    r["cooccurring"] = std::move(arr);
    detail::emit_report(r, f_.report);
  }

  void build_curves() {
    auto* s = command("curves", "Sorted per-class accuracy curves for models and the oracle", [this] { curves(); });
    add_labels(s);
    add_original(s);
    add_predictions(s);
    add_manifest(s, true);
    s->add_option("--subset", f_.subset, "all, animal or finegrained")
        ->check(CLI::IsMember({"all", "animal", "finegrained"}))
        ->capture_default_str();
    add_out(s, "Curves CSV");
  }

  void curves() {
    auto orig = original();
    auto labels = ingest_labels(f_.labels, orig.images);
    auto man = manifest();
    auto models = detail::load_models(f_.predictions, nullptr, num_classes(man));
    std::set<ClassId> subset;
    for (const auto& [c, info] : man->classes()) {
      if (f_.subset == "all" || (f_.subset == "animal" && info.is_animal) ||
          (f_.subset == "finegrained" && info.is_finegrained_animal)) {
        subset.insert(c);
      }
    }
    auto curves = class_accuracy_curves(models, labels, orig, subset);
    detail::ensure_parent(f_.out);
    write_curves_csv(curves, f_.out);
    log::info("curves.done", {{"out", f_.out}, {"curves", curves.size()}});
  }

  void build_audit() {
    auto* audit = app_.add_subcommand("audit", "Mistake audits: sample model errors, then tally rater verdicts");
    audit->require_subcommand(1);
    audit->fallthrough();
    auto* make = command("make", "Sample a model's mistakes into audit tasks", [this] { audit_make(); }, audit);
    required(input(make->add_option("--predictions,--pred", f_.predictions, "Model prediction file")));
    make->add_option("--num-classes", f_.num_classes, "Class count (default: inferred)");
    add_labels(make);
    add_original(make);
    make->add_option("--metric", f_.metric, "original or real")->check(CLI::IsMember({"original", "real"}))->capture_default_str();
    make->add_option("--sample", f_.sample, "Mistakes to sample")->capture_default_str();
    make->add_option("--exemplars", f_.exemplars, "Exemplar images per correct class")->capture_default_str();
    make->add_option("--required-raters", f_.required_raters, "Answers needed per task")->capture_default_str();
    add_out(make, "Audit tasks (JSON lines)");

    auto* agg = command("aggregate", "Category proportions per model and metric", [this] { audit_aggregate(); }, audit);
    required(input(agg->add_option("--tasks", f_.tasks, "Audit tasks (JSON lines)")));
    required(input(agg->add_option("--answers", f_.answers, "Answer log (JSON lines)")));
    input(agg->add_option("--order", f_.order, "Model names in report order, one per line"));
    add_report(agg);
  }

  void audit_make() {
    require(f_.predictions.size() == 1, "config", "audit make takes exactly one prediction file");
    auto orig = original();
    auto labels = ingest_labels(f_.labels, orig.images);
    IngestOptions opt;
    opt.num_classes = f_.num_classes;
    auto pred = ingest_predictions(f_.predictions.front(), opt);
    AuditOptions ao;
    ao.exemplars_per_class = f_.exemplars;
    ao.sample_size = f_.sample;
    ao.seed = f_.seed;
    ao.required_raters = f_.required_raters;
    auto tasks = make_audit_tasks(pred, parse_metric(f_.metric), labels, orig, ao);
    detail::ensure_parent(f_.out);
    write_tasks(tasks, f_.out);
    log::info("audit.make.done", {{"out", f_.out}, {"tasks", tasks.size()}});
  }

  void audit_aggregate() {
    auto tasks = read_tasks(f_.tasks);
    auto answers = read_answers(f_.answers);
    std::vector<std::string> order;
    if (!f_.order.empty()) order = load_name_list(f_.order);
    auto outcomes = aggregate_audit(tasks, answers, order);
    Json arr = Json::array();
    for (const auto& o : outcomes) arr.push_back(to_json(o));
    detail::emit_report(arr, f_.report);
  }

  void build_folds() {
    auto* s = command("folds", "Assign training images to K folds", [this] { folds(); });
    add_original(s);
    s->add_option("--folds", f_.folds, "Number of folds")->capture_default_str();
    add_out(s, "Folds CSV");
  }

  void folds() {
    auto orig = original();
    auto f = assign_folds(orig.images, f_.folds, f_.seed);
    detail::ensure_parent(f_.out);
    write_folds(f, f_.out);
    Json sizes = f.sizes();
    log::info("folds.done", {{"out", f_.out}, {"sizes", sizes}});
  }

  void build_clean() {
    auto* s = command("clean", "Drop training images whose label a held-out model disagrees with", [this] { clean(); });
    required(input(s->add_option("--fold-preds", f_.fold_preds, "Directory of held-out prediction files"), true));
    add_original(s);
    required(input(s->add_option("--folds", f_.folds_file, "Folds CSV")));
    s->add_option("--min-prob", f_.min_prob, "Keep iff the held-out probability of the label reaches this");
    required(s->add_option("--retained-out", f_.retained_out, "Retained image ids"));
    required(s->add_option("--removed-out", f_.removed_out, "Removed image ids"));
    s->add_option("--num-classes", f_.num_classes, "Class count (default: inferred)");
    add_report(s);
  }

  void clean() {
    auto orig = original();
    auto folds = read_folds(f_.folds_file);
    auto preds = detail::load_models({f_.fold_preds}, nullptr, f_.num_classes);
    CleanOptions opt;
    opt.min_prob = f_.min_prob;
    auto result = clean_dataset(preds, orig, folds, opt);
    detail::ensure_parent(f_.retained_out);
    detail::ensure_parent(f_.removed_out);
    write_id_list(result.retained, f_.retained_out);
    write_id_list(result.removed, f_.removed_out);
    Json r;
    r["retained"] = result.retained.size();
    r["removed"] = result.removed.size();
    r["rule"] = f_.min_prob ? "min-prob" : "top1";
    if (f_.min_prob) r["min_prob"] = *f_.min_prob;
    log::info("clean.done", {{"retained", result.retained.size()}, {"removed", result.removed.size()}});
    detail::emit_report(r, f_.report);
  }

  void build_loss_check() {
    auto* s = command("loss-check", "Check loss gradients against finite differences", [this] { loss_check(); });
    s->add_option("--trials", f_.trials, "Random instances per loss")->capture_default_str();
    s->add_option("--max-classes", f_.max_classes, "Largest class count sampled")->capture_default_str();
    s->add_option("--tolerance", f_.tolerance, "Largest allowed relative error")->capture_default_str();
    add_report(s);
  }

  void loss_check() {
    require(f_.max_classes >= 1, "config", "max-classes must be positive");
    std::mt19937_64 rng(f_.seed);
    std::normal_distribution<double> normal(0.0, 3.0);
    double worst_softmax = 0.0, worst_sigmoid = 0.0;
    for (std::size_t rep = 0; rep < f_.trials; ++rep) {
      std::size_t c = 1 + rng() % f_.max_classes;
      std::vector<double> z(c), t(c);
      for (auto& v : z) v = normal(rng);
      for (auto& v : t) v = static_cast<double>(rng() % 2);
      std::size_t target = rng() % c;
      auto s = softmax_ce(z, target);
      worst_softmax = std::max(worst_softmax, gradient_check_error(z, s.gradient, [&](const std::vector<double>& x) {
                                                 return softmax_ce(x, target).loss;
                                               }));
      auto b = sigmoid_bce(z, t);
      worst_sigmoid = std::max(worst_sigmoid, gradient_check_error(z, b.gradient, [&](const std::vector<double>& x) {
                                                 return sigmoid_bce(x, t).loss;
                                               }));
    }
    Json r;
    r["trials"] = f_.trials;
    r["softmax_ce_max_rel_error"] = worst_softmax;
    r["sigmoid_bce_max_rel_error"] = worst_sigmoid;
    r["tolerance"] = f_.tolerance;
    bool ok = worst_softmax <= f_.tolerance && worst_sigmoid <= f_.tolerance;
    r["pass"] = ok;
    detail::emit_report(r, f_.report);
    require(ok, "loss-check", "gradient check exceeded tolerance");
  }

  CLI::App app_;
  Flags f_;
  std::function<void()> action_;
  std::vector<CLI::Option*> required_;
  std::vector<std::pair<CLI::Option*, bool>> inputs_;
};

inline int run(int argc, char** argv) {
  Cli cli;
  return cli.run(argc, argv);
}

}  // namespace realabel::cli
