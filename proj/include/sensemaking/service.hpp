#pragma once

// Session manager with write-ahead event logs, and its HTTP/JSON binding.

#include <chrono>
#include <ctime>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "httplib.h"
#include "sensemaking/data_io.hpp"
#include "sensemaking/engine.hpp"
#include "sensemaking/event_log.hpp"

namespace sensemaking {

struct ServiceConfig {
  fs::path schema;
  fs::path weights;
  fs::path calibration;
  fs::path cases;
  fs::path probs;
  std::optional<fs::path> heatmaps;
  fs::path data_root;  // image_ref values resolve against this
  fs::path log_dir;
  SessionConfig session;
  std::optional<double> alpha;  // must agree with the calibration file when given
  std::string host = "127.0.0.1";
  int port = 8080;
};

// Relative paths resolve against the config file's directory.
inline ServiceConfig load_service_config(const fs::path& path) {
  const Json j = read_json(path);
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto resolve = [&](const char* key) {
    fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  ServiceConfig c;
  try {
    c.schema = resolve("schema");
    c.weights = resolve("weights");
    c.calibration = resolve("calibration");
    c.cases = resolve("cases");
    c.probs = resolve("probs");
    if (j.contains("heatmaps") && !j.at("heatmaps").is_null()) c.heatmaps = resolve("heatmaps");
    c.data_root = j.contains("data_root") ? resolve("data_root") : c.cases.parent_path();
    c.log_dir = resolve("log_dir");
    c.session.delta = j.value("delta", kDefaultDelta);
    c.session.tau_e = j.value("tau_e", kDefaultEvidenceThreshold);
    c.session.neutral_band = j.value("neutral_band", kDefaultNeutralBand);
    if (j.contains("alpha") && !j.at("alpha").is_null()) c.alpha = j.at("alpha").get<double>();
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  c.session.validate();
  return c;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return out.str();
}

class SessionManager {
 public:
  struct PostResult {
    InterventionEvent event;
    SensemakingState state;
    Json diff;
  };

  struct RecoveryIssue {
    fs::path file;
    std::string message;
  };

  // Replays every log already present in log_dir.
  SessionManager(std::shared_ptr<const Model> model, std::vector<Case> cases, fs::path log_dir,
                 SessionConfig defaults = {}, fs::path data_root = {})
      : model_(std::move(model)),
        log_dir_(std::move(log_dir)),
        data_root_(std::move(data_root)),
        defaults_(defaults) {
    defaults_.validate();
    for (auto& c : cases) {
      const std::string id = c.case_id;
      case_order_.push_back(id);
      cases_.emplace(id, std::move(c));
    }
    fs::create_directories(log_dir_);
    recover();
  }

  const Model& model() const { return *model_; }
  const std::vector<RecoveryIssue>& recovery_issues() const { return recovery_issues_; }

  std::vector<const Case*> list_cases() const {
    std::vector<const Case*> out;
    for (const auto& id : case_order_) out.push_back(&cases_.at(id));
    return out;
  }

  const Case& find_case(const std::string& case_id) const {
    auto it = cases_.find(case_id);
    if (it == cases_.end()) throw Error(ErrorCode::NotFound, "no case '" + case_id + "'");
    return it->second;
  }

  std::vector<std::string> session_ids() const {
    std::shared_lock lock(map_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
  }

  SensemakingState create_session(const std::string& case_id, std::optional<SessionConfig> config = std::nullopt) {
    const Case& c = find_case(case_id);
    const SessionConfig cfg = config.value_or(defaults_);
    cfg.validate();

    std::unique_lock lock(map_mutex_);
    std::ostringstream id;
    id << "s" << std::setw(6) << std::setfill('0') << next_session_++;
    auto session = std::make_shared<Session>();
    session->c = &c;
    session->state = init_session(id.str(), c, *model_, cfg);
    const fs::path path = log_dir_ / (id.str() + ".jsonl");
    if (fs::exists(path)) throw Error(ErrorCode::IoError, "log already exists: " + path.string());
    session->writer = EventLogWriter(path);
    session->writer.append_header(SessionHeader{id.str(), case_id, model_->schema.hash(), cfg});
    sessions_.emplace(id.str(), session);
    return session->state;
  }

  SensemakingState get_state(const std::string& session_id) const {
    auto session = find_session(session_id);
    std::lock_guard guard(session->mutex);
    return session->state;
  }

  std::vector<InterventionEvent> events(const std::string& session_id) const {
    auto session = find_session(session_id);
    std::lock_guard guard(session->mutex);
    return session->events;
  }

  // The event is durable before the new state becomes visible.
  PostResult post_event(const std::string& session_id, InterventionEvent event) {
    auto session = find_session(session_id);
    std::lock_guard guard(session->mutex);
    event.session_id = session_id;
    event.event_id = session_id + ":" + std::to_string(event.seq);
    if (event.timestamp.empty()) event.timestamp = utc_timestamp();
    SensemakingState next = apply_event(session->state, event, *session->c, *model_);
    session->writer.append_event(event);
    Json diff = state_diff(session->state, next);
    session->state = std::move(next);
    session->events.push_back(event);
    return PostResult{std::move(event), session->state, std::move(diff)};
  }

  // Finalize with an implicit seq (next in line) unless one is supplied.
  SensemakingState finalize(const std::string& session_id, const std::string& label, bool override_threshold,
                            std::optional<std::int64_t> seq = std::nullopt) {
    auto session = find_session(session_id);
    std::int64_t next_seq;
    {
      std::lock_guard guard(session->mutex);
      next_seq = seq.value_or(session->state.t + 1);
    }
    return post_event(session_id, InterventionEvent{"", session_id, next_seq, Finalize{label, override_threshold}, ""})
        .state;
  }

  EvidenceAttribution attribution(const std::string& session_id, const std::string& hypothesis) const {
    auto session = find_session(session_id);
    std::lock_guard guard(session->mutex);
    return attribute_state(session->state, *session->c, *model_, hypothesis);
  }

  // kind is "image" or "heatmap:<concept>".
  std::string case_asset(const std::string& case_id, const std::string& kind) const {
    const Case& c = find_case(case_id);
    fs::path path;
    if (kind == "image") {
      path = resolve_asset(c.image_ref);
    } else if (kind.rfind("heatmap:", 0) == 0) {
      const std::string concept_id = kind.substr(8);
      auto it = c.heatmap_refs.find(concept_id);
      if (it == c.heatmap_refs.end()) throw Error(ErrorCode::NotFound, "no heatmap for '" + concept_id + "'");
      path = it->second;
    } else {
      throw Error(ErrorCode::ValidationError, "unknown asset kind '" + kind + "'");
    }
    if (!fs::is_regular_file(path)) throw Error(ErrorCode::NotFound, "asset missing: " + path.filename().string());
    return read_file(path);
  }

 private:
  struct Session {
    mutable std::mutex mutex;
    const Case* c = nullptr;
    SensemakingState state;
    std::vector<InterventionEvent> events;
    EventLogWriter writer;
  };

  std::shared_ptr<Session> find_session(const std::string& session_id) const {
    std::shared_lock lock(map_mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "no session '" + session_id + "'");
    return it->second;
  }

  fs::path resolve_asset(const std::string& ref) const {
    const fs::path rel = fs::path(ref).lexically_normal();
    if (rel.is_absolute() || (!rel.empty() && *rel.begin() == "..")) {
      throw Error(ErrorCode::NotFound, "asset outside the data root");
    }
    return data_root_ / rel;
  }

  void recover() {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(log_dir_)) {
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
      try {
        SessionLog log = read_session_log(path);
        if (log.header.schema_hash != model_->schema.hash()) {
          throw Error(ErrorCode::SchemaMismatch, "log written against schema " + log.header.schema_hash);
        }
        auto session = std::make_shared<Session>();
        session->c = &find_case(log.header.case_id);
        session->state = replay(log.header.session_id, log.events, *session->c, *model_, log.header.config);
        session->events = std::move(log.events);
        session->writer =
            EventLogWriter(path, log.torn_tail ? std::optional<std::uintmax_t>(log.valid_bytes) : std::nullopt);
        bump_counter(log.header.session_id);
        sessions_.emplace(log.header.session_id, std::move(session));
      } catch (const Error& e) {
        recovery_issues_.push_back({path, e.what()});
      }
    }
  }

  void bump_counter(const std::string& session_id) {
    if (session_id.size() < 2 || session_id[0] != 's') return;
    try {
      next_session_ = std::max(next_session_, std::stoull(session_id.substr(1)) + 1);
    } catch (const std::exception&) {
    }
  }

  std::shared_ptr<const Model> model_;
  std::map<std::string, Case> cases_;
  std::vector<std::string> case_order_;
  fs::path log_dir_;
  fs::path data_root_;
  SessionConfig defaults_;

  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  unsigned long long next_session_ = 1;
  std::vector<RecoveryIssue> recovery_issues_;
};

// ---------------------------------------------------------------------------
// HTTP

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::OutOfOrderEvent: return 409;
    case ErrorCode::SessionFinalized: return 410;
    case ErrorCode::ParseError: return 400;
    case ErrorCode::IoError: return 500;
    default: return 422;
  }
}

inline std::string_view http_error_name(int status) {
  switch (status) {
    case 400: return "BadRequest";
    case 404: return "NotFound";
    case 409: return "Conflict";
    case 410: return "Gone";
    case 500: return "InternalError";
    default: return "ValidationError";
  }
}

inline Json attribution_to_json(const EvidenceAttribution& a) {
  Json items = Json::array();
  for (const auto& item : a.items) {
    items.push_back(Json{{"concept_id", item.concept_id},
                         {"state_id", item.state_id},
                         {"weight", item.weight},
                         {"value", item.value},
                         {"magnitude", item.magnitude},
                         {"group", to_string(item.group)},
                         {"computed_group", to_string(item.computed_group)},
                         {"verified", item.verified}});
  }
  return Json{{"hypothesis", a.hypothesis}, {"items", items}};
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, Json{{"error", http_error_name(status)}, {"message", message}});
}

template <typename Handler>
auto guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

inline Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("request body: ") + e.what());
  }
}

inline std::string content_type_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".pgm") return "image/x-portable-graymap";
  return "application/octet-stream";
}

}  // namespace detail

inline void register_routes(httplib::Server& server, SessionManager& manager) {
  using detail::guarded;
  using detail::send_json;

  server.Get("/schema", guarded([&](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, Json{{"schema", manager.model().schema.to_json()}, {"hash", manager.model().schema.hash()}});
  }));

  server.Get("/cases", guarded([&](const httplib::Request&, httplib::Response& res) {
    Json out = Json::array();
    for (const Case* c : manager.list_cases()) {
      Json heatmaps = Json::array();
      for (const auto& [concept_id, _] : c->heatmap_refs) heatmaps.push_back(concept_id);
      out.push_back(Json{{"case_id", c->case_id}, {"image_ref", c->image_ref}, {"heatmaps", heatmaps}});
    }
    send_json(res, 200, out);
  }));

  server.Get(R"(/cases/([^/]+)/image)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    const Case& c = manager.find_case(req.matches[1]);
    res.set_content(manager.case_asset(c.case_id, "image"), detail::content_type_for(c.image_ref));
  }));

  server.Get(R"(/cases/([^/]+)/heatmaps/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
    res.set_content(manager.case_asset(req.matches[1], "heatmap:" + std::string(req.matches[2])),
                    "image/x-portable-graymap");
  }));

  server.Post("/sessions", guarded([&](const httplib::Request& req, httplib::Response& res) {
    const Json body = detail::parse_body(req);
    std::optional<SessionConfig> config;
    if (body.contains("config")) {
      SessionConfig cfg = SessionConfig{};
      const auto& c = body.at("config");
      cfg.delta = c.value("delta", cfg.delta);
      cfg.tau_e = c.value("tau_e", cfg.tau_e);
      cfg.neutral_band = c.value("neutral_band", cfg.neutral_band);
      config = cfg;
    }
    const auto state = manager.create_session(body.at("case_id").get<std::string>(), config);
    send_json(res, 201, Json{{"session_id", state.session_id}, {"state", state_to_json(state)}});
  }));

  server.Get(R"(/sessions/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, state_to_json(manager.get_state(req.matches[1])));
  }));

  server.Get(R"(/sessions/([^/]+)/events)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, Json(manager.events(req.matches[1])));
  }));

  server.Get(R"(/sessions/([^/]+)/attribution/([^/]+))",
             guarded([&](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, attribution_to_json(manager.attribution(req.matches[1], req.matches[2])));
             }));

  server.Post(R"(/sessions/([^/]+)/events)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    InterventionEvent event = detail::parse_body(req).get<InterventionEvent>();
    auto result = manager.post_event(req.matches[1], std::move(event));
    send_json(res, 200, result.diff);
  }));

  server.Post(R"(/sessions/([^/]+)/finalize)", guarded([&](const httplib::Request& req, httplib::Response& res) {
    const Json body = detail::parse_body(req);
    std::optional<std::int64_t> seq;
    if (body.contains("seq")) seq = body.at("seq").get<std::int64_t>();
    const auto state = manager.finalize(req.matches[1], body.at("label").get<std::string>(),
                                        body.value("override", false), seq);
    send_json(res, 200, state_to_json(state));
  }));
}

}  // namespace sensemaking
