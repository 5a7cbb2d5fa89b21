#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "apc/event_log.hpp"
#include "apc/manifest.hpp"
#include "json.hpp"

namespace apc {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

enum class Role { Anonymous, Rater, Experimenter };

struct ServiceOptions {
  std::filesystem::path data_dir;
  std::vector<StimulusManifest> manifests;
  // An unset token leaves that role's endpoints open.
  std::optional<std::string> rater_token;
  std::optional<std::string> experimenter_token;
  bool sync_writes = false;
};

// Transport-independent session service. Every session lives in memory and
// in <data_dir>/sessions/<id>.jsonl; construction rebuilds all sessions from
// their logs. Operations on one session are serialized; distinct sessions
// proceed independently.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Role authenticate(std::optional<std::string_view> bearer_token) const;

  ApiResponse create_session(std::string_view body, std::optional<std::string> idempotency_key,
                             Role role = Role::Experimenter);
  ApiResponse next_trial(const std::string& id, Role role = Role::Rater);
  ApiResponse post_response(const std::string& id, std::string_view trial_index,
                            std::string_view body, Role role = Role::Rater);
  ApiResponse estimates(const std::string& id, Role role = Role::Experimenter);
  ApiResponse status(const std::string& id, Role role = Role::Rater);

  std::vector<std::string> session_ids() const;
  // Logs that could not be rebuilt at startup, one message each.
  const std::vector<std::string>& load_errors() const { return load_errors_; }
  std::filesystem::path log_path(const std::string& id) const;

 private:
  struct Entry;

  std::shared_ptr<Entry> find(const std::string& id) const;
  std::optional<ApiResponse> gate(Role role, Role required) const;
  const StimulusManifest* manifest(const std::string& id) const;
  void load_existing();

  ServiceOptions options_;
  std::filesystem::path sessions_dir_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::map<std::string, std::string> idempotency_;
  std::vector<std::string> load_errors_;
};

ApiResponse error_response(int status, std::string_view code, const std::string& message);

}  // namespace apc
