#include "wm/core/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "wm/core/io.hpp"

namespace wm::core {

namespace {

void check_token(const std::string& s, const char* what) {
  if (s.empty()) throw std::invalid_argument(std::string("checkpoint ") + what + " is empty");
  for (char c : s)
    if (c == ':' || c == '\n' || c == ' ' || c == '\t')
      throw std::invalid_argument(std::string("checkpoint ") + what + " contains a reserved character: " + s);
}

std::string shape_token(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape(const std::string& t) {
  if (t == "scalar") return {};
  Shape s;
  std::stringstream ss(t);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

std::string field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  if (pos == std::string::npos) throw FormatError("checkpoint manifest missing " + key + " in: " + text);
  const auto start = pos + key.size() + 1;
  const auto end = text.find(' ', start);
  return text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

void Checkpoint::add(std::string name, Array value) {
  check_token(name, "tensor name");
  if (has_tensor(name)) throw std::invalid_argument("duplicate checkpoint tensor " + name);
  tensors.emplace_back(std::move(name), std::move(value));
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, _] : tensors)
    if (n == name) return true;
  return false;
}

const Array& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, a] : tensors)
    if (n == name) return a;
  throw FormatError("checkpoint has no tensor named " + name);
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint has no metadata key " + key);
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream manifest;
  manifest << "format: wm-checkpoint\nversion: 1\n";
  for (const auto& [k, v] : ckpt.meta) {
    check_token(k, "metadata key");
    if (v.find('\n') != std::string::npos) throw std::invalid_argument("metadata value contains newline: " + k);
    manifest << "meta." << k << ": " << v << '\n';
  }
  std::size_t offset = 0;
  for (const auto& [name, a] : ckpt.tensors) {
    manifest << "tensor." << name << ": shape=" << shape_token(a.shape()) << " offset=" << offset
             << " count=" << a.size() << '\n';
    offset += a.size() * sizeof(float);
  }
  manifest << "data_bytes: " << offset << "\n---\n";
  write_file_atomic(path, [&](std::ostream& os) {
    os << manifest.str();
    for (const auto& [name, a] : ckpt.tensors) {
      std::vector<float> buf(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) buf[i] = static_cast<float>(a[i]);
      write_f32s(os, buf);
    }
  });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  Checkpoint ckpt;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> entries;
  std::string line;
  bool header_ok = false;
  std::size_t data_bytes = 0;
  while (true) {
    if (!std::getline(is, line)) throw FormatError("truncated checkpoint manifest: " + path.string());
    if (line == "---") break;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw FormatError("malformed checkpoint manifest line: " + line);
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    if (key == "format") {
      if (value != "wm-checkpoint") throw FormatError("not a checkpoint: " + path.string());
      header_ok = true;
    } else if (key == "version") {
      if (value != "1") throw FormatError("unsupported checkpoint version " + value);
    } else if (key.rfind("meta.", 0) == 0) {
      ckpt.meta[key.substr(5)] = value;
    } else if (key.rfind("tensor.", 0) == 0) {
      entries.push_back({key.substr(7), parse_shape(field(value, "shape")), std::stoull(field(value, "offset")),
                         std::stoull(field(value, "count"))});
    } else if (key == "data_bytes") {
      data_bytes = std::stoull(value);
    } else {
      throw FormatError("unknown checkpoint manifest key " + key);
    }
  }
  if (!header_ok) throw FormatError("checkpoint manifest lacks format line: " + path.string());
  std::vector<float> payload(data_bytes / sizeof(float));
  read_f32s(is, payload);
  for (const auto& e : entries) {
    if (shape_size(e.shape) != e.count || e.offset + e.count * sizeof(float) > data_bytes)
      throw FormatError("inconsistent checkpoint entry " + e.name);
    std::vector<double> data(e.count);
    const std::size_t first = e.offset / sizeof(float);
    for (std::size_t i = 0; i < e.count; ++i) data[i] = static_cast<double>(payload[first + i]);
    ckpt.tensors.emplace_back(e.name, Array(e.shape, std::move(data)));
  }
  return ckpt;
}

void round_to_f32(Array& a) {
  for (double& v : a.storage()) v = static_cast<double>(static_cast<float>(v));
}

void round_to_f32(const std::vector<Parameter*>& params) {
  for (auto* p : params) round_to_f32(p->value);
}

void store_parameters(Checkpoint& ckpt, const std::vector<Parameter*>& params) {
  for (const auto* p : params) ckpt.add(p->name, p->value);
}

void restore_parameters(const Checkpoint& ckpt, const std::vector<Parameter*>& params) {
  for (auto* p : params) {
    const Array& a = ckpt.tensor(p->name);
    if (a.shape() != p->value.shape()) throw_shape_mismatch(("checkpoint tensor " + p->name).c_str(), a.shape(), p->value.shape());
    p->value = a;
    p->zero_grad();
  }
}

}  // namespace wm::core
