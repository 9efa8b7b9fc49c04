#pragma once

// Text formats used across the project:
//   tensor:     header line "N C T H W", then whitespace-separated scalars in
//               row-major order, printed with 17 significant digits so doubles
//               round-trip exactly
//   checkpoint: "tcs3d.checkpoint.v1", config key=value lines, "tensors <n>",
//               then per tensor a "tensor <name>" manifest line followed by
//               the tensor format above
//   config:     flat key=value lines, '#' comments

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tcs3d/tensor.hpp"

namespace tcs3d {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] inline void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

inline void write_tensor(std::ostream& os, const Tensor& t) {
  const Shape5& s = t.shape();
  os << s[0] << ' ' << s[1] << ' ' << s[2] << ' ' << s[3] << ' ' << s[4] << '\n';
  const auto v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    os << format_double(v[i]);
    os << ((i + 1) % 8 == 0 || i + 1 == v.size() ? '\n' : ' ');
  }
}

inline Tensor read_tensor(std::istream& is) {
  Shape5 s;
  for (std::size_t d = 0; d < 5; ++d)
    if (!(is >> s[d])) io_fail("tensor stream: malformed shape header");
  std::vector<double> v(numel(s));
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!(is >> v[i])) io_fail("tensor stream: expected " + std::to_string(v.size()) +
                               " scalars, got " + std::to_string(i));
  return Tensor::from_values(s, std::move(v));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path);
  if (!os) io_fail("cannot open for writing: " + path.string());
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) io_fail("cannot open for reading: " + path.string());
  return read_tensor(is);
}

// ---------------------------------------------------------------------------
// named-tensor checkpoints
// ---------------------------------------------------------------------------

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
using KvMap = std::map<std::string, std::string>;

inline void write_checkpoint(std::ostream& os, const NamedTensors& tensors, const KvMap& config) {
  os << "tcs3d.checkpoint.v1\n";
  for (const auto& [k, v] : config) os << "config " << k << '=' << v << '\n';
  os << "tensors " << tensors.size() << '\n';
  for (const auto& [name, t] : tensors) {
    os << "tensor " << name << '\n';
    write_tensor(os, t);
  }
}

struct Checkpoint {
  NamedTensors tensors;
  KvMap config;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "tcs3d.checkpoint.v1")
    io_fail("checkpoint: bad magic line");
  Checkpoint ck;
  std::size_t count = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config") {
      std::string kv;
      ls >> kv;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) io_fail("checkpoint: malformed config line: " + line);
      ck.config[kv.substr(0, eq)] = kv.substr(eq + 1);
    } else if (tag == "tensors") {
      if (!(ls >> count)) io_fail("checkpoint: malformed tensor count");
      break;
    } else {
      io_fail("checkpoint: unexpected line: " + line);
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) io_fail("checkpoint: truncated before tensor " + std::to_string(i));
    std::istringstream ls(line);
    std::string tag, name;
    ls >> tag >> name;
    if (tag != "tensor" || name.empty())
      io_fail("checkpoint: expected 'tensor <name>' line, got: " + line);
    ck.tensors.emplace_back(name, read_tensor(is));
    is >> std::ws;
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors,
                            const KvMap& config = {}) {
  std::ofstream os(path);
  if (!os) io_fail("cannot open for writing: " + path.string());
  write_checkpoint(os, tensors, config);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) io_fail("cannot open for reading: " + path.string());
  return read_checkpoint(is);
}

// ---------------------------------------------------------------------------
// flat key=value config files
// ---------------------------------------------------------------------------

inline KvMap parse_kv_text(std::istream& is) {
  KvMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    std::size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      io_fail("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::size_t v0 = val.find_first_not_of(" \t");
    val = v0 == std::string::npos ? "" : val.substr(v0);
    if (key.empty()) io_fail("config line " + std::to_string(lineno) + ": empty key");
    out[key] = val;
  }
  return out;
}

inline KvMap load_kv_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) io_fail("cannot open config file: " + path.string());
  return parse_kv_text(is);
}

inline double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    io_fail("config field '" + key + "': expected a number, got '" + it->second + "'");
  }
}

inline std::int64_t kv_int(const KvMap& kv, const std::string& key, std::int64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    io_fail("config field '" + key + "': expected an integer, got '" + it->second + "'");
  }
}

inline std::string kv_string(const KvMap& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

// comma-separated doubles, e.g. class_probs=0.4,0.21,...
inline std::vector<double> kv_double_list(const KvMap& kv, const std::string& key,
                                          const std::vector<double>& fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      io_fail("config field '" + key + "': expected comma-separated numbers, got '" + it->second +
              "'");
    }
  }
  if (out.empty()) io_fail("config field '" + key + "': empty list");
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace tcs3d
