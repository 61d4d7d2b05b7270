#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lrtts::cli {

struct KeyInfo {
  const char* name;
  const char* default_value;
  const char* help;
};

/// Every configuration key the executable understands.
const std::vector<KeyInfo>& known_keys();
const KeyInfo* find_key(const std::string& name);
/// "--budget-s" for "budget_s".
std::string flag_of(const std::string& key);

/// key=value settings with defaults < config file < flag overrides.
class RunConfig {
 public:
  RunConfig();

  /// `key = value` lines; '#' starts a comment. Unknown or repeated keys throw
  /// Usage naming the line.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  /// Throws Usage when the value is empty.
  const std::string& required(const std::string& key) const;

  /// `key = value` lines for `keys`, in the given order.
  std::string snapshot(const std::string& command, const std::vector<std::string>& keys) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lrtts::cli
