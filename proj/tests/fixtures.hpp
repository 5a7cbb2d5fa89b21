#pragma once

// Manifests, configs and scratch directories for service-level tests.

#include <filesystem>
#include <random>
#include <string>

#include "apc/manifest.hpp"
#include "json.hpp"

namespace fixture {

inline std::string level_url(const std::string& clip, int level) {
  return "https://media.test/" + clip + "/L" + std::to_string(level) + ".mp4";
}

inline std::string variant_url(const std::string& clip, const std::string& variant) {
  return "https://media.test/" + clip + "/V" + variant + ".mp4";
}

inline apc::StimulusManifest manifest(int n_clips = 30, int levels = 50) {
  apc::StimulusManifest m;
  m.id = "demo";
  for (int c = 0; c < n_clips; ++c) {
    const auto clip = "clip" + std::to_string(c);
    auto& entry = m.clips[clip];
    for (int l = 1; l <= levels; ++l) entry[apc::StimulusManifest::level_key(l)] = level_url(clip, l);
    for (const char* v : {"A", "B"}) entry[apc::StimulusManifest::variant_key(v)] = variant_url(clip, v);
  }
  return m;
}

inline nlohmann::json config(const std::string& policy, std::uint64_t seed, int n_clips = 30) {
  nlohmann::json clips = nlohmann::json::array();
  for (int c = 0; c < n_clips; ++c) clips.push_back("clip" + std::to_string(c));
  return {{"variants", {"A", "B"}},
          {"clips", clips},
          {"trials_per_variant", n_clips},
          {"policy", policy},
          {"seed", seed}};
}

inline std::string create_body(const std::string& policy, std::uint64_t seed, int n_clips = 30) {
  return nlohmann::json{{"config", config(policy, seed, n_clips)}, {"manifest", "demo"}}.dump();
}

// Level shown in a trial payload, recovered from the test manifest's URLs.
inline int shown_level(const nlohmann::json& trial, bool* reference_first = nullptr) {
  for (const char* side : {"first", "second"}) {
    const auto url = trial.at(side).get<std::string>();
    const auto pos = url.rfind("/L");
    if (pos != std::string::npos) {
      if (reference_first) *reference_first = std::string(side) == "first";
      return std::stoi(url.substr(pos + 2));
    }
  }
  return -1;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("apc_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture
