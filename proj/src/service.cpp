#include "apc/service.hpp"

#include <charconv>
#include <cstdio>
#include <mutex>
#include <random>

#include "apc/error.hpp"

namespace apc {

using nlohmann::json;

struct Service::Entry {
  Entry(RecoveredSession s, EventLog l, json r)
      : state(std::move(s)), log(std::move(l)), request(std::move(r)) {}

  std::shared_mutex mu;
  RecoveredSession state;
  EventLog log;
  json request;  // config exactly as the creator sent it
};

ApiResponse error_response(int status, std::string_view code, const std::string& message) {
  return {status, json{{"error", code}, {"message", message}}};
}

namespace {

ApiResponse field_errors(const std::vector<FieldError>& errors) {
  json fields = json::array();
  for (const auto& e : errors) fields.push_back({{"field", e.field}, {"message", e.message}});
  return {422, json{{"error", "validation"},
                    {"message", errors.size() == 1 ? errors.front().message
                                                   : std::to_string(errors.size()) +
                                                         " invalid fields"},
                    {"fields", fields}}};
}

std::string random_hex(std::size_t bytes) {
  static thread_local std::random_device rd;
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes; ++i) {
    const auto b = rd() & 0xff;
    out += kHex[b >> 4];
    out += kHex[b & 0xf];
  }
  return out;
}

std::uint64_t random_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

bool valid_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
  return true;
}

json progress_fields(const Session& s) {
  return json{{"completed", s.cursor()},
              {"total", s.total_trials()},
              {"progress", s.total_trials() ? static_cast<double>(s.cursor()) /
                                                  static_cast<double>(s.total_trials())
                                            : 1.0}};
}

ApiResponse completed_response(const Session& s) {
  auto body = progress_fields(s);
  body["error"] = "session-complete";
  body["message"] = "all trials have been answered";
  body["status"] = "complete";
  body["summary"] = json{{"completed_trials", s.cursor()}, {"total_trials", s.total_trials()}};
  return {409, body};
}

}  // namespace

Service::Service(ServiceOptions options)
    : options_(std::move(options)), sessions_dir_(options_.data_dir / "sessions") {
  std::error_code ec;
  std::filesystem::create_directories(sessions_dir_, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + sessions_dir_.string() + ": " + ec.message());
  load_existing();
}

Service::~Service() = default;

std::filesystem::path Service::log_path(const std::string& id) const {
  return sessions_dir_ / (id + ".jsonl");
}

void Service::load_existing() {
  for (const auto& file : std::filesystem::directory_iterator(sessions_dir_)) {
    if (file.path().extension() != ".jsonl") continue;
    try {
      const auto events = read_event_log(file.path(), true);
      auto rec = rebuild_session(events);
      if (rec.id != file.path().stem().string())
        fail(ErrorCode::Integrity, "session id " + rec.id + " does not match file name");
      auto entry = std::make_shared<Entry>(std::move(rec),
                                           EventLog(file.path(), options_.sync_writes),
                                           events.front().payload.value("request", json()));
      auto& st = entry->state;
      if (st.session.status() == SessionStatus::Complete && !st.completion_logged) {
        // The process stopped between the last response and its completion marker.
        entry->log.append({kEventSchemaVersion, st.id, st.next_seq++, EventKind::Completed,
                           now_ms(), json{{"n_trials", st.session.cursor()}}});
        st.completion_logged = true;
      }
      if (st.idempotency_key) idempotency_[*st.idempotency_key] = st.id;
      sessions_.emplace(st.id, std::move(entry));
    } catch (const std::exception& e) {
      load_errors_.push_back(file.path().string() + ": " + e.what());
    }
  }
}

Role Service::authenticate(std::optional<std::string_view> token) const {
  if (!token) return Role::Anonymous;
  if (options_.experimenter_token && *token == *options_.experimenter_token)
    return Role::Experimenter;
  if (options_.rater_token && *token == *options_.rater_token) return Role::Rater;
  return Role::Anonymous;
}

std::optional<ApiResponse> Service::gate(Role role, Role required) const {
  if (required == Role::Experimenter) {
    if (!options_.experimenter_token || role == Role::Experimenter) return std::nullopt;
    if (role == Role::Rater)
      return error_response(403, "forbidden", "this endpoint requires the experimenter role");
    return error_response(401, "unauthorized", "missing or invalid bearer token");
  }
  if (!options_.rater_token || role != Role::Anonymous) return std::nullopt;
  return error_response(401, "unauthorized", "missing or invalid bearer token");
}

const StimulusManifest* Service::manifest(const std::string& id) const {
  for (const auto& m : options_.manifests)
    if (id.empty() || m.id == id) return &m;
  return nullptr;
}

std::shared_ptr<Service::Entry> Service::find(const std::string& id) const {
  std::shared_lock lock(registry_mu_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::vector<std::string> Service::session_ids() const {
  std::shared_lock lock(registry_mu_);
  std::vector<std::string> ids;
  for (const auto& [id, e] : sessions_) ids.push_back(id);
  return ids;
}

ApiResponse Service::create_session(std::string_view body,
                                    std::optional<std::string> idempotency_key, Role role) {
  if (auto denied = gate(role, Role::Experimenter)) return *denied;
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_response(400, "bad-request", std::string("body is not JSON: ") + e.what());
  }
  if (!doc.is_object()) return error_response(400, "bad-request", "body must be a JSON object");
  if (!idempotency_key && doc.contains("idempotency_key")) {
    if (!doc["idempotency_key"].is_string())
      return field_errors({{"idempotency_key", "expected a string"}});
    idempotency_key = doc["idempotency_key"].get<std::string>();
  }
  if (!doc.contains("config")) return field_errors({{"config", "required"}});

  std::vector<FieldError> errors;
  std::optional<std::uint64_t> seed;
  SessionConfig config = config_from_json(doc["config"], errors, &seed);
  std::string manifest_id;
  if (doc.contains("manifest")) {
    if (doc["manifest"].is_string())
      manifest_id = doc["manifest"].get<std::string>();
    else
      errors.push_back({"manifest", "expected a manifest id string"});
  }
  const StimulusManifest* m = manifest(manifest_id);
  if (!m)
    errors.push_back({"manifest", manifest_id.empty() ? "the service has no manifest loaded"
                                                      : "unknown manifest '" + manifest_id + "'"});
  if (!errors.empty()) return field_errors(errors);
  if (auto missing = m->check(config); !missing.empty()) return field_errors(missing);

  std::unique_lock lock(registry_mu_);
  if (idempotency_key) {
    const auto it = idempotency_.find(*idempotency_key);
    if (it != idempotency_.end()) {
      auto& existing = *sessions_.at(it->second);
      std::shared_lock entry_lock(existing.mu);
      if (existing.request != doc["config"] || existing.state.manifest_id != m->id)
        return error_response(409, "idempotency-conflict",
                              "idempotency key was already used for a different request");
      return {201, json{{"session_id", existing.state.id},
                        {"status", to_string(existing.state.session.status())},
                        {"total_trials", existing.state.session.total_trials()},
                        {"config", config_to_json(existing.state.session.config())}}};
    }
  }
  if (!seed) config.seed = random_seed();

  std::string id;
  do {
    id = random_hex(16);
  } while (sessions_.contains(id));
  const auto created_ms = now_ms();
  SessionEvent created{kEventSchemaVersion, id, 0, EventKind::Created, created_ms,
                       json{{"config", config_to_json(config)},
                            {"request", doc["config"]},
                            {"manifest", m->id},
                            {"idempotency_key", idempotency_key ? json(*idempotency_key)
                                                                : json(nullptr)}}};
  auto entry = std::make_shared<Entry>(
      RecoveredSession{id, m->id, idempotency_key, created_ms, Session(config), 1, false},
      EventLog(log_path(id), options_.sync_writes), doc["config"]);
  entry->log.append(created);
  sessions_.emplace(id, entry);
  if (idempotency_key) idempotency_[*idempotency_key] = id;
  return {201, json{{"session_id", id},
                    {"status", "active"},
                    {"total_trials", entry->state.session.total_trials()},
                    {"config", config_to_json(config)}}};
}

ApiResponse Service::next_trial(const std::string& id, Role role) {
  if (auto denied = gate(role, Role::Rater)) return *denied;
  const auto entry = valid_id(id) ? find(id) : nullptr;
  if (!entry) return error_response(404, "not-found", "unknown session " + id);
  std::unique_lock lock(entry->mu);
  auto& st = entry->state;
  if (st.session.status() == SessionStatus::Complete) return completed_response(st.session);

  const StimulusManifest* m = manifest(st.manifest_id);
  if (!m)
    return error_response(500, "internal", "manifest " + st.manifest_id + " is not loaded");
  TrialPlan plan;
  if (st.session.pending()) {
    plan = *st.session.pending();
  } else {
    Session next = st.session;
    plan = next.next_trial();
    entry->log.append({kEventSchemaVersion, st.id, st.next_seq, EventKind::TrialPlanned,
                       now_ms(), plan_to_json(plan)});
    ++st.next_seq;
    st.session = std::move(next);
  }
  const auto& reference = m->url(plan.clip, StimulusManifest::level_key(plan.reference_level));
  const auto& standard = m->url(plan.clip, StimulusManifest::variant_key(plan.variant));
  const bool ref_first = plan.order == PresentationOrder::ReferenceFirst;
  auto body = progress_fields(st.session);
  body["trial_index"] = plan.trial_index;
  body["first"] = ref_first ? reference : standard;
  body["second"] = ref_first ? standard : reference;
  body["status"] = "active";
  return {200, body};
}

ApiResponse Service::post_response(const std::string& id, std::string_view index_text,
                                   std::string_view body, Role role) {
  if (auto denied = gate(role, Role::Rater)) return *denied;
  const auto entry = valid_id(id) ? find(id) : nullptr;
  if (!entry) return error_response(404, "not-found", "unknown session " + id);

  std::size_t index = 0;
  const auto [ptr, ec] = std::from_chars(index_text.data(), index_text.data() + index_text.size(),
                                         index);
  if (ec != std::errc() || ptr != index_text.data() + index_text.size())
    return field_errors({{"trial_index", "expected a non-negative integer"}});
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_response(400, "bad-request", std::string("body is not JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("choice") || !doc["choice"].is_string())
    return field_errors({{"choice", "required: \"first\" or \"second\""}});
  RaterAnswer answer;
  try {
    answer = parse_answer(doc["choice"].get<std::string>());
  } catch (const Error& e) {
    return field_errors({{"choice", e.what()}});
  }

  std::unique_lock lock(entry->mu);
  auto& st = entry->state;
  auto accepted = [&](bool duplicate) {
    auto out = progress_fields(st.session);
    out["accepted"] = true;
    out["duplicate"] = duplicate;
    out["trial_index"] = index;
    out["session_status"] = to_string(st.session.status());
    return ApiResponse{200, out};
  };
  if (index < st.session.cursor()) {
    if (st.session.log()[index].answer == answer) return accepted(true);
    return error_response(409, "sequencing",
                          "trial " + std::to_string(index) + " was already answered differently");
  }
  if (st.session.status() == SessionStatus::Complete)
    return error_response(409, "state", "session is complete");
  if (index != st.session.cursor() || !st.session.pending())
    return error_response(409, "sequencing",
                          "trial " + std::to_string(index) + " is not the outstanding trial");

  Session next = st.session;
  next.record_response(index, answer);
  const TrialRecord& rec = next.log().back();
  entry->log.append({kEventSchemaVersion, st.id, st.next_seq, EventKind::ResponseRecorded,
                     rec.timestamp_ms,
                     json{{"trial_index", index},
                          {"answer", to_string(answer)},
                          {"choice", to_string(rec.choice)},
                          {"timestamp_ms", rec.timestamp_ms}}});
  ++st.next_seq;
  st.session = std::move(next);
  if (st.session.status() == SessionStatus::Complete) {
    entry->log.append({kEventSchemaVersion, st.id, st.next_seq, EventKind::Completed, now_ms(),
                       json{{"n_trials", st.session.cursor()}}});
    ++st.next_seq;
    st.completion_logged = true;
  }
  return accepted(false);
}

ApiResponse Service::estimates(const std::string& id, Role role) {
  if (auto denied = gate(role, Role::Experimenter)) return *denied;
  const auto entry = valid_id(id) ? find(id) : nullptr;
  if (!entry) return error_response(404, "not-found", "unknown session " + id);
  std::shared_lock lock(entry->mu);
  const auto& s = entry->state.session;
  json list = json::array();
  for (const auto& e : s.estimates()) list.push_back(estimate_to_json(e));
  auto body = progress_fields(s);
  body["session_id"] = id;
  body["status"] = to_string(s.status());
  body["estimates"] = list;
  return {200, body};
}

ApiResponse Service::status(const std::string& id, Role role) {
  if (auto denied = gate(role, Role::Rater)) return *denied;
  const auto entry = valid_id(id) ? find(id) : nullptr;
  if (!entry) return error_response(404, "not-found", "unknown session " + id);
  std::shared_lock lock(entry->mu);
  auto body = progress_fields(entry->state.session);
  body["session_id"] = id;
  body["status"] = to_string(entry->state.session.status());
  return {200, body};
}

}  // namespace apc
