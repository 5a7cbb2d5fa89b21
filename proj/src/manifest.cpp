#include "apc/manifest.hpp"

#include <fstream>
#include <sstream>

#include "apc/error.hpp"
#include "json.hpp"

namespace apc {

using nlohmann::json;

std::string StimulusManifest::variant_key(std::string_view variant) {
  return "variant:" + std::string(variant);
}

std::string StimulusManifest::level_key(int level) { return "level:" + std::to_string(level); }

std::optional<std::string> StimulusManifest::find(std::string_view clip,
                                                  std::string_view key) const {
  const auto c = clips.find(std::string(clip));
  if (c == clips.end()) return std::nullopt;
  const auto k = c->second.find(std::string(key));
  if (k == c->second.end()) return std::nullopt;
  return k->second;
}

const std::string& StimulusManifest::url(std::string_view clip, std::string_view key) const {
  const auto c = clips.find(std::string(clip));
  if (c != clips.end()) {
    const auto k = c->second.find(std::string(key));
    if (k != c->second.end()) return k->second;
  }
  fail(ErrorCode::NotFound,
       "manifest has no stimulus " + std::string(key) + " for clip " + std::string(clip));
}

std::vector<FieldError> StimulusManifest::check(const SessionConfig& config) const {
  std::vector<FieldError> errors;
  for (std::size_t i = 0; i < config.clips.size(); ++i) {
    const auto& clip = config.clips[i];
    const auto field = "config.clips[" + std::to_string(i) + "]";
    const auto c = clips.find(clip);
    if (c == clips.end()) {
      errors.push_back({field, "clip '" + clip + "' is missing from manifest " + id});
      continue;
    }
    std::vector<std::string> missing;
    for (const auto& v : config.variants)
      if (!c->second.contains(variant_key(v))) missing.push_back(variant_key(v));
    for (int level = 1; level <= config.scale_levels; ++level)
      if (!c->second.contains(level_key(level))) missing.push_back(level_key(level));
    if (!missing.empty()) {
      std::string list;
      for (std::size_t k = 0; k < missing.size() && k < 5; ++k)
        list += (k ? ", " : "") + missing[k];
      if (missing.size() > 5) list += ", ... (" + std::to_string(missing.size()) + " total)";
      errors.push_back({field, "clip '" + clip + "' has no stimulus for " + list});
    }
  }
  return errors;
}

StimulusManifest parse_manifest(std::string_view json_text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Ingest, source + ": " + e.what());
  }
  StimulusManifest m;
  try {
    m.id = doc.at("id").get<std::string>();
    for (const auto& [clip, stimuli] : doc.at("clips").items()) {
      auto& entry = m.clips[clip];
      for (const auto& [key, url] : stimuli.items()) {
        if (key.rfind("variant:", 0) != 0 && key.rfind("level:", 0) != 0)
          fail(ErrorCode::Ingest, source + ": clip " + clip + ": bad stimulus key '" + key + "'");
        entry[key] = url.get<std::string>();
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Ingest, source + ": " + e.what());
  }
  if (m.id.empty()) fail(ErrorCode::Ingest, source + ": manifest id is empty");
  return m;
}

StimulusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_manifest(text.str(), path.string());
}

}  // namespace apc
