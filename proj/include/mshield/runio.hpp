#pragma once

// Run directories and manifests. Every command works inside its own
// runs/<timestamp>-<command> directory; the manifest is written before any
// work starts and finalized (end timestamp, artifact list) when it ends.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mshield/common.hpp"

#ifndef MSHIELD_GIT_REV
#define MSHIELD_GIT_REV "unknown"
#endif

namespace mshield {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

inline std::string runs_root() {
  if (const char* env = std::getenv("MERGE_SHIELD_RUNS"); env && *env) return env;
  return "runs";
}

inline std::string make_run_dir(const std::string& command) {
  namespace fs = std::filesystem;
  const fs::path root = runs_root();
  fs::create_directories(root);
  const std::string stamp = utc_timestamp();
  for (int k = 0; k < 1000; ++k) {
    fs::path dir = root / (stamp + "-" + command + (k ? "-" + std::to_string(k) : ""));
    std::error_code ec;
    if (fs::create_directory(dir, ec)) return dir.string();
  }
  throw ConfigError("cannot create a run directory under " + root.string());
}

class RunManifest {
 public:
  RunManifest(std::string run_dir, std::string command, const nlohmann::json& config,
              std::uint64_t seed)
      : dir_(std::move(run_dir)) {
    j_["command"] = command;
    j_["config"] = config;
    j_["seed"] = seed;
    j_["version"] = MSHIELD_GIT_REV;
    j_["start_utc"] = utc_timestamp();
    j_["end_utc"] = nullptr;
    j_["artifacts"] = nlohmann::json::array();
    write();
  }

  // Registers an artifact path (relative to the run dir) and rewrites.
  void add_artifact(const std::string& rel_path) {
    j_["artifacts"].push_back(rel_path);
    write();
  }

  void finalize() {
    j_["end_utc"] = utc_timestamp();
    write();
  }

  const std::string& dir() const { return dir_; }

 private:
  void write() const {
    std::ofstream os(std::filesystem::path(dir_) / "manifest.json");
    os << j_.dump(2) << "\n";
  }

  std::string dir_;
  nlohmann::json j_;
};

}  // namespace mshield
