#include "apc/event_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "apc/error.hpp"

namespace apc {

using nlohmann::json;

std::string_view to_string(EventKind k) noexcept {
  switch (k) {
    case EventKind::Created: return "created";
    case EventKind::TrialPlanned: return "trial_planned";
    case EventKind::ResponseRecorded: return "response_recorded";
    case EventKind::Completed: return "completed";
  }
  return "unknown";
}

EventKind parse_event_kind(std::string_view text) {
  for (auto k : {EventKind::Created, EventKind::TrialPlanned, EventKind::ResponseRecorded,
                 EventKind::Completed})
    if (to_string(k) == text) return k;
  fail(ErrorCode::Integrity, "unknown event kind '" + std::string(text) + "'");
}

std::string to_json_line(const SessionEvent& e) {
  json doc{{"schema_version", e.schema_version},
           {"session_id", e.session_id},
           {"seq", e.seq},
           {"kind", to_string(e.kind)},
           {"timestamp", e.timestamp_ms},
           {"payload", e.payload}};
  return doc.dump();
}

SessionEvent parse_event_line(std::string_view line, const std::string& where) {
  try {
    const auto doc = json::parse(line);
    SessionEvent e;
    e.schema_version = doc.at("schema_version").get<int>();
    if (e.schema_version != kEventSchemaVersion)
      fail(ErrorCode::Integrity,
           where + ": unsupported schema_version " + std::to_string(e.schema_version));
    e.session_id = doc.at("session_id").get<std::string>();
    e.seq = doc.at("seq").get<std::uint64_t>();
    e.kind = parse_event_kind(doc.at("kind").get<std::string>());
    e.timestamp_ms = doc.at("timestamp").get<std::int64_t>();
    e.payload = doc.at("payload");
    return e;
  } catch (const json::exception& ex) {
    fail(ErrorCode::Integrity, where + ": malformed event: " + ex.what());
  } catch (const Error& ex) {
    if (ex.code() == ErrorCode::Integrity && std::string(ex.what()).rfind(where, 0) == 0) throw;
    fail(ErrorCode::Integrity, where + ": " + ex.what());
  }
}

json config_to_json(const SessionConfig& c) {
  return json{{"variants", c.variants},
              {"clips", c.clips},
              {"trials_per_variant", c.trials_per_variant},
              {"scale_levels", c.scale_levels},
              {"policy", to_string(c.policy)},
              {"slope", c.slope},
              {"lapse", c.lapse},
              {"seed", c.seed},
              {"n_particles", c.n_particles},
              {"particle_mode", to_string(c.particle_mode)},
              {"staircase_start", c.staircase_start}};
}

namespace {

template <typename T>
void read_field(const json& doc, const char* name, T& out, std::vector<FieldError>& errors,
                const char* expected) {
  if (!doc.contains(name)) return;
  try {
    out = doc.at(name).get<T>();
  } catch (const json::exception&) {
    errors.push_back({std::string("config.") + name, std::string("expected ") + expected});
  }
}

}  // namespace

SessionConfig config_from_json(const json& doc, std::vector<FieldError>& errors,
                               std::optional<std::uint64_t>* seed_out) {
  SessionConfig c;
  if (!doc.is_object()) {
    errors.push_back({"config", "expected an object"});
    return c;
  }
  read_field(doc, "variants", c.variants, errors, "an array of strings");
  read_field(doc, "clips", c.clips, errors, "an array of strings");
  read_field(doc, "trials_per_variant", c.trials_per_variant, errors, "a non-negative integer");
  read_field(doc, "scale_levels", c.scale_levels, errors, "an integer");
  read_field(doc, "slope", c.slope, errors, "a number");
  read_field(doc, "lapse", c.lapse, errors, "a number");
  read_field(doc, "n_particles", c.n_particles, errors, "a non-negative integer");
  read_field(doc, "staircase_start", c.staircase_start, errors, "an integer");
  if (!doc.contains("variants")) errors.push_back({"config.variants", "required"});
  if (!doc.contains("clips")) errors.push_back({"config.clips", "required"});
  if (doc.contains("policy")) {
    try {
      c.policy = parse_policy_kind(doc.at("policy").get<std::string>());
    } catch (const std::exception&) {
      errors.push_back({"config.policy", "expected one of bald, staircase, random"});
    }
  }
  if (doc.contains("particle_mode")) {
    try {
      c.particle_mode = parse_particle_mode(doc.at("particle_mode").get<std::string>());
    } catch (const std::exception&) {
      errors.push_back({"config.particle_mode", "expected grid or random"});
    }
  }
  std::optional<std::uint64_t> seed;
  if (doc.contains("seed")) {
    if (doc.at("seed").is_number_unsigned())
      seed = doc.at("seed").get<std::uint64_t>();
    else
      errors.push_back({"config.seed", "expected a non-negative 64-bit integer"});
  }
  if (seed) c.seed = *seed;
  if (seed_out) *seed_out = seed;
  if (errors.empty()) {
    try {
      c.validate();
    } catch (const Error& e) {
      errors.push_back({"config", e.what()});
    }
  }
  return c;
}

json plan_to_json(const TrialPlan& p) {
  return json{{"trial_index", p.trial_index},
              {"variant", p.variant},
              {"clip", p.clip},
              {"reference_level", p.reference_level},
              {"order", to_string(p.order)}};
}

json estimate_to_json(const QualityEstimate& e) {
  return json{{"variant", e.variant},
              {"pse", e.pse ? json(*e.pse) : json(nullptr)},
              {"uncertainty", e.uncertainty ? json(*e.uncertainty) : json(nullptr)},
              {"n_trials", e.n_trials},
              {"method", e.method}};
}

TrialPlan plan_from_json(const json& doc) {
  TrialPlan p;
  p.trial_index = doc.at("trial_index").get<std::size_t>();
  p.variant = doc.at("variant").get<std::string>();
  p.clip = doc.at("clip").get<std::string>();
  p.reference_level = doc.at("reference_level").get<int>();
  p.order = parse_order(doc.at("order").get<std::string>());
  return p;
}

EventLog::EventLog(const std::filesystem::path& path, bool sync) : path_(path), sync_(sync) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorCode::Io, "cannot open " + path.string() + ": " + std::strerror(errno));
}

EventLog::EventLog(EventLog&& other) noexcept
    : path_(std::move(other.path_)), fd_(other.fd_), sync_(other.sync_) {
  other.fd_ = -1;
}

EventLog& EventLog::operator=(EventLog&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    path_ = std::move(other.path_);
    fd_ = other.fd_;
    sync_ = other.sync_;
    other.fd_ = -1;
  }
  return *this;
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const SessionEvent& event) {
  const std::string line = to_json_line(event) + "\n";
  ssize_t n;
  do {
    n = ::write(fd_, line.data(), line.size());
  } while (n < 0 && errno == EINTR);
  if (n != static_cast<ssize_t>(line.size()))
    fail(ErrorCode::Io, "short write to " + path_.string());
  if (sync_ && ::fdatasync(fd_) != 0)
    fail(ErrorCode::Io, "fdatasync failed on " + path_.string());
}

std::vector<SessionEvent> read_event_log(const std::filesystem::path& path, bool repair) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto complete = text.rfind('\n');
  const std::size_t keep = complete == std::string::npos ? 0 : complete + 1;
  if (keep < text.size() && repair) std::filesystem::resize_file(path, keep);

  std::vector<SessionEvent> events;
  std::size_t start = 0, line_no = 0;
  while (start < keep) {
    const auto end = text.find('\n', start);
    ++line_no;
    const std::string_view line(text.data() + start, end - start);
    if (!line.empty())
      events.push_back(parse_event_line(line, path.string() + ":" + std::to_string(line_no)));
    start = end + 1;
  }
  return events;
}

RecoveredSession rebuild_session(std::span<const SessionEvent> events) {
  if (events.empty()) fail(ErrorCode::Integrity, "event log is empty");
  auto where = [](std::size_t i) { return "event " + std::to_string(i); };
  const SessionEvent& first = events.front();
  if (first.kind != EventKind::Created)
    fail(ErrorCode::Integrity, where(0) + ": first event must be 'created'");

  std::vector<FieldError> errors;
  SessionConfig config;
  std::string manifest_id;
  std::optional<std::string> key;
  try {
    config = config_from_json(first.payload.at("config"), errors);
    manifest_id = first.payload.value("manifest", "");
    if (first.payload.contains("idempotency_key") && !first.payload["idempotency_key"].is_null())
      key = first.payload["idempotency_key"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Integrity, where(0) + ": " + e.what());
  }
  if (!errors.empty())
    fail(ErrorCode::Integrity, where(0) + ": " + errors.front().field + ": " +
                                   errors.front().message);

  RecoveredSession rec{first.session_id, manifest_id, key, first.timestamp_ms,
                       Session(config), 0, false};
  for (std::size_t i = 0; i < events.size(); ++i) {
    const SessionEvent& e = events[i];
    if (e.seq != i)
      fail(ErrorCode::Integrity, where(i) + ": sequence number " + std::to_string(e.seq) +
                                     " where " + std::to_string(i) + " was expected");
    if (e.session_id != rec.id)
      fail(ErrorCode::Integrity, where(i) + ": belongs to session " + e.session_id);
    if (rec.completion_logged)
      fail(ErrorCode::Integrity, where(i) + ": event after completion");
    try {
      switch (e.kind) {
        case EventKind::Created:
          if (i != 0) fail(ErrorCode::Integrity, "duplicate 'created' event");
          break;
        case EventKind::TrialPlanned: {
          const TrialPlan logged = plan_from_json(e.payload);
          if (logged.trial_index != rec.session.cursor())
            fail(ErrorCode::Integrity, "planned trial " + std::to_string(logged.trial_index) +
                                           " while trial " +
                                           std::to_string(rec.session.cursor()) + " is due");
          if (rec.session.pending())
            fail(ErrorCode::Integrity, "trial " + std::to_string(logged.trial_index) +
                                           " planned twice");
          const TrialPlan expect = rec.session.next_trial();
          if (expect.reference_level != logged.reference_level)
            fail(ErrorCode::Integrity, "trial " + std::to_string(logged.trial_index) +
                                           ": logged level " +
                                           std::to_string(logged.reference_level) +
                                           " but policy selects " +
                                           std::to_string(expect.reference_level));
          if (expect != logged)
            fail(ErrorCode::Integrity, "trial " + std::to_string(logged.trial_index) +
                                           ": logged schedule entry differs from the seeded "
                                           "schedule");
          break;
        }
        case EventKind::ResponseRecorded: {
          const auto index = e.payload.at("trial_index").get<std::size_t>();
          const auto answer = parse_answer(e.payload.at("answer").get<std::string>());
          const auto& pending = rec.session.pending();
          if (!pending || pending->trial_index != index)
            fail(ErrorCode::Integrity,
                 "response to trial " + std::to_string(index) + " that is not outstanding");
          if (e.payload.contains("choice") &&
              parse_choice(e.payload.at("choice").get<std::string>()) !=
                  resolve_choice(pending->order, answer))
            fail(ErrorCode::Integrity, "trial " + std::to_string(index) +
                                           ": choice does not match answer and order");
          rec.session.record_response(index, answer,
                                      e.payload.at("timestamp_ms").get<std::int64_t>());
          break;
        }
        case EventKind::Completed:
          if (rec.session.status() != SessionStatus::Complete)
            fail(ErrorCode::Integrity, "'completed' logged before the last response");
          rec.completion_logged = true;
          break;
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::Integrity, where(i) + ": " + ex.what());
    } catch (const Error& ex) {
      fail(ErrorCode::Integrity, where(i) + ": " + ex.what());
    }
    rec.next_seq = i + 1;
  }
  return rec;
}

}  // namespace apc
