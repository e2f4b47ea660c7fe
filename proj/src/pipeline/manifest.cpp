#include "wm/pipeline/manifest.hpp"

#include <openssl/evp.h>

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wm/core/io.hpp"
#include "wm/pipeline/config.hpp"

namespace wm::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha1_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", md[i]);
    hex += two;
  }
  return hex;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest::RunManifest(fs::path run_dir, std::string config_hash)
    : run_dir_(std::move(run_dir)), config_hash_(std::move(config_hash)) {}

RunManifest RunManifest::load_or_create(const fs::path& run_dir, const std::string& config_hash) {
  RunManifest m(run_dir, config_hash);
  const fs::path file = run_dir / "manifest.json";
  if (!fs::exists(file)) return m;
  std::ifstream in(file);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("corrupt manifest " + file.string() + ": " + e.what());
  }
  const std::string stored = j.value("config_hash", "");
  if (stored != config_hash)
    throw ConfigError("run directory " + run_dir.string() + " belongs to config hash " + stored + ", not " +
                      config_hash + "; use a fresh --run directory");
  for (const auto& [key, s] : j.at("stages").items()) {
    StageRecord r;
    r.started = s.value("started", "");
    r.finished = s.value("finished", "");
    r.inputs = s.value("inputs", std::map<std::string, std::string>{});
    r.outputs = s.value("outputs", std::map<std::string, std::string>{});
    r.metrics = s.value("metrics", std::vector<std::string>{});
    m.stages_[key] = std::move(r);
  }
  return m;
}

std::optional<StageRecord> RunManifest::stage(const std::string& key) const {
  auto it = stages_.find(key);
  if (it == stages_.end()) return std::nullopt;
  return it->second;
}

std::string RunManifest::relative(const fs::path& p) const { return fs::relative(p, run_dir_).generic_string(); }

bool RunManifest::up_to_date(const std::string& key, const std::vector<fs::path>& inputs) const {
  auto it = stages_.find(key);
  if (it == stages_.end() || it->second.finished.empty()) return false;
  const StageRecord& r = it->second;
  if (r.inputs.size() != inputs.size()) return false;
  for (const auto& p : inputs) {
    auto in = r.inputs.find(relative(p));
    if (in == r.inputs.end() || !fs::exists(p) || sha1_file(p) != in->second) return false;
  }
  for (const auto& [rel, hash] : r.outputs) {
    const fs::path p = run_dir_ / rel;
    if (!fs::exists(p) || sha1_file(p) != hash) return false;
  }
  return true;
}

void RunManifest::begin(const std::string& key, const std::vector<fs::path>& inputs) {
  StageRecord r;
  r.started = utc_timestamp();
  for (const auto& p : inputs) r.inputs[relative(p)] = sha1_file(p);
  stages_[key] = std::move(r);
  save();
}

void RunManifest::finish(const std::string& key, const std::vector<fs::path>& outputs,
                         const std::vector<fs::path>& metrics) {
  StageRecord& r = stages_.at(key);
  for (const auto& p : outputs) r.outputs[relative(p)] = sha1_file(p);
  for (const auto& p : metrics) {
    r.metrics.push_back(relative(p));
    r.outputs[relative(p)] = sha1_file(p);
  }
  r.finished = utc_timestamp();
  save();
}

void RunManifest::save() const {
  json stages = json::object();
  for (const auto& [key, r] : stages_)
    stages[key] = {{"started", r.started}, {"finished", r.finished}, {"inputs", r.inputs}, {"outputs", r.outputs},
                   {"metrics", r.metrics}};
  const json j{{"config_hash", config_hash_}, {"stages", stages}};
  const std::string text = j.dump(2) + "\n";
  fs::create_directories(run_dir_);
  core::write_file_atomic(run_dir_ / "manifest.json", [&](std::ostream& os) { os << text; });
}

}  // namespace wm::pipeline
