#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "zlraid/common.h"

namespace zlraid {

// "key = value" config files, one pair per line, '#' comments. Values may use
// KiB/MiB/GiB suffixes where the consumer reads sizes. Unknown keys are
// rejected once all consumers have pulled their keys (strict by default, so a
// typo'd knob fails loudly instead of silently running defaults).
class KvConfig {
 public:
  static Result<KvConfig> parse_file(const std::string& path);
  static Result<KvConfig> parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  // Getters mark keys consumed and record a ConfigError on bad values.
  std::string get_string(const std::string& key, const std::string& def);
  uint64_t get_u64(const std::string& key, uint64_t def);
  double get_double(const std::string& key, double def);
  bool get_bool(const std::string& key, bool def);
  // Accepts raw byte counts or KiB/MiB/GiB/K/M/G suffixes.
  uint64_t get_size(const std::string& key, uint64_t def);

  // Ok unless a getter failed or (strict) a key was never consumed.
  Status finish(bool strict = true) const;

 private:
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> consumed_;
  Status first_error_;
  void note_error(const std::string& key, const std::string& why);
};

uint64_t parse_size_or(const std::string& text, uint64_t fallback, bool* ok);

}  // namespace zlraid
