#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wm::pipeline {

/// Lowercase hex SHA-1 of a file's bytes, as git-style content ids.
std::string sha1_file(const std::filesystem::path& path);

struct StageRecord {
  std::string started;   // UTC ISO-8601
  std::string finished;  // empty while running
  std::map<std::string, std::string> inputs;   // run-relative path -> sha1
  std::map<std::string, std::string> outputs;  // run-relative path -> sha1
  std::vector<std::string> metrics;            // run-relative metric files
};

/// manifest.json in the run directory: one record per stage key
/// ("collect", "evolve/z_h", ...), rewritten atomically after every change.
class RunManifest {
 public:
  RunManifest(std::filesystem::path run_dir, std::string config_hash);
  static RunManifest load_or_create(const std::filesystem::path& run_dir, const std::string& config_hash);

  const std::string& config_hash() const noexcept { return config_hash_; }
  const std::filesystem::path& run_dir() const noexcept { return run_dir_; }
  std::optional<StageRecord> stage(const std::string& key) const;
  /// True when the stage finished, its recorded inputs still hash the same and
  /// its outputs are present and unmodified.
  bool up_to_date(const std::string& key, const std::vector<std::filesystem::path>& inputs) const;

  void begin(const std::string& key, const std::vector<std::filesystem::path>& inputs);
  void finish(const std::string& key, const std::vector<std::filesystem::path>& outputs,
              const std::vector<std::filesystem::path>& metrics);
  void save() const;

  std::string relative(const std::filesystem::path& p) const;

 private:
  std::filesystem::path run_dir_;
  std::string config_hash_;
  std::map<std::string, StageRecord> stages_;
};

std::string utc_timestamp();

}  // namespace wm::pipeline
