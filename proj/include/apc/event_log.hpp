#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apc/manifest.hpp"
#include "apc/session.hpp"
#include "json.hpp"

namespace apc {

inline constexpr int kEventSchemaVersion = 1;

enum class EventKind { Created, TrialPlanned, ResponseRecorded, Completed };

std::string_view to_string(EventKind k) noexcept;
EventKind parse_event_kind(std::string_view text);

struct SessionEvent {
  int schema_version = kEventSchemaVersion;
  std::string session_id;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::Created;
  std::int64_t timestamp_ms = 0;
  nlohmann::json payload;
};

// One event per line, no trailing newline in the returned string.
std::string to_json_line(const SessionEvent& event);
SessionEvent parse_event_line(std::string_view line, const std::string& where);

nlohmann::json config_to_json(const SessionConfig& config);
// Field-level problems go to `errors`; the returned config is meaningful
// only when `errors` stays empty. A missing seed is left as nullopt.
SessionConfig config_from_json(const nlohmann::json& doc, std::vector<FieldError>& errors,
                               std::optional<std::uint64_t>* seed_out = nullptr);

nlohmann::json plan_to_json(const TrialPlan& plan);
nlohmann::json estimate_to_json(const QualityEstimate& estimate);
TrialPlan plan_from_json(const nlohmann::json& doc);

// Append-only writer. Each event is one write(2) on an O_APPEND descriptor.
class EventLog {
 public:
  explicit EventLog(const std::filesystem::path& path, bool sync = false);
  EventLog(EventLog&& other) noexcept;
  EventLog& operator=(EventLog&& other) noexcept;
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;
  ~EventLog();

  void append(const SessionEvent& event);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  bool sync_ = false;
};

// Reads every event. A final line without a newline is a torn write: it is
// dropped, and with `repair` the file is truncated to the last full line.
std::vector<SessionEvent> read_event_log(const std::filesystem::path& path, bool repair = false);

struct RecoveredSession {
  std::string id;
  std::string manifest_id;
  std::optional<std::string> idempotency_key;
  std::int64_t created_ms = 0;
  Session session;
  std::uint64_t next_seq = 0;
  bool completion_logged = false;
};

// Re-executes the events against a fresh session. Any disagreement between
// the log and the seeded policies raises Integrity naming the event.
RecoveredSession rebuild_session(std::span<const SessionEvent> events);

}  // namespace apc
