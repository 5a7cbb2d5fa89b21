#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "apc/session.hpp"

namespace apc {

struct FieldError {
  std::string field;
  std::string message;
};

// Clip -> stimulus key -> media URL. Keys are `variant:<id>` or `level:<n>`.
// URLs are opaque to the engine.
struct StimulusManifest {
  std::string id;
  std::map<std::string, std::map<std::string, std::string>> clips;

  static std::string variant_key(std::string_view variant);
  static std::string level_key(int level);

  std::optional<std::string> find(std::string_view clip, std::string_view key) const;
  const std::string& url(std::string_view clip, std::string_view key) const;

  // Every stimulus the config can request must resolve.
  std::vector<FieldError> check(const SessionConfig& config) const;
};

StimulusManifest parse_manifest(std::string_view json_text, const std::string& source);
StimulusManifest read_manifest(const std::filesystem::path& path);

}  // namespace apc
