#include "zlraid/config.h"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace zlraid {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

uint64_t parse_size_or(const std::string& text, uint64_t fallback, bool* ok) {
  *ok = false;
  std::string t = trim(text);
  if (t.empty()) return fallback;
  size_t i = 0;
  while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
  if (i == 0) return fallback;
  uint64_t v = std::strtoull(t.substr(0, i).c_str(), nullptr, 10);
  std::string suffix = trim(t.substr(i));
  uint64_t mult = 1;
  if (suffix.empty()) mult = 1;
  else if (suffix == "KiB" || suffix == "K" || suffix == "k") mult = 1ull << 10;
  else if (suffix == "MiB" || suffix == "M" || suffix == "m") mult = 1ull << 20;
  else if (suffix == "GiB" || suffix == "G" || suffix == "g") mult = 1ull << 30;
  else if (suffix == "TiB" || suffix == "T" || suffix == "t") mult = 1ull << 40;
  else return fallback;
  *ok = true;
  return v * mult;
}

Result<KvConfig> KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    return Status::error(Errc::ConfigError, "cannot open config file: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

Result<KvConfig> KvConfig::parse_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      return Status::error(Errc::ConfigError,
                           "config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      return Status::error(Errc::ConfigError,
                           "config line " + std::to_string(lineno) + ": empty key");
    }
    cfg.kv_[key] = value;
  }
  return cfg;
}

void KvConfig::note_error(const std::string& key, const std::string& why) {
  if (first_error_.ok()) {
    first_error_ = Status::error(Errc::ConfigError, "config key '" + key + "': " + why);
  }
}

std::string KvConfig::get_string(const std::string& key, const std::string& def) {
  consumed_.insert(key);
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t def) {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  char* end = nullptr;
  uint64_t v = std::strtoull(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0') {
    note_error(key, "expected integer, got '" + it->second + "'");
    return def;
  }
  return v;
}

double KvConfig::get_double(const std::string& key, double def) {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  char* end = nullptr;
  double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0') {
    note_error(key, "expected number, got '" + it->second + "'");
    return def;
  }
  return v;
}

bool KvConfig::get_bool(const std::string& key, bool def) {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  note_error(key, "expected boolean, got '" + v + "'");
  return def;
}

uint64_t KvConfig::get_size(const std::string& key, uint64_t def) {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  bool ok = false;
  uint64_t v = parse_size_or(it->second, def, &ok);
  if (!ok) note_error(key, "expected size (e.g. 8KiB), got '" + it->second + "'");
  return v;
}

Status KvConfig::finish(bool strict) const {
  if (!first_error_.ok()) return first_error_;
  if (strict) {
    for (const auto& [k, v] : kv_) {
      (void)v;
      if (!consumed_.count(k)) {
        return Status::error(Errc::ConfigError, "unknown config key '" + k + "'");
      }
    }
  }
  return Status::success();
}

const char* errc_name(Errc e) {
  switch (e) {
    case Errc::Ok: return "Ok";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ZoneStateError: return "ZoneStateError";
    case Errc::TooManyOpenZones: return "TooManyOpenZones";
    case Errc::ConcurrentWriteConflict: return "ConcurrentWriteConflict";
    case Errc::DriveFailed: return "DriveFailed";
    case Errc::ImageFormatError: return "ImageFormatError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::UnmappedLba: return "UnmappedLba";
    case Errc::NoFreeZones: return "NoFreeZones";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::CorruptFooter: return "CorruptFooter";
    case Errc::UnrecoverableCorruption: return "UnrecoverableCorruption";
    case Errc::TraceParseError: return "TraceParseError";
    case Errc::VerifyFailed: return "VerifyFailed";
  }
  return "Unknown";
}

}  // namespace zlraid
