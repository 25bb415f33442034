#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rpl/simulate.hpp"

namespace rpl {

/// Flat `key=value` run configuration. `#` starts a comment; lists are
/// comma-separated and numeric lists also accept `log:lo:hi:count`.
class RunConfig {
 public:
  static RunConfig parse(std::istream& in, std::string_view source = "config");
  static RunConfig load(const std::filesystem::path& path);

  // Adds or replaces one entry from a `key=value` string.
  void set(std::string_view assignment);
  void set(const std::string& key, std::string value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string command() const;

  std::string text(const std::string& key, const std::string& fallback) const;
  double number(const std::string& key, double fallback) const;
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;

  // Throws InputError naming every key the command does not accept.
  void check_keys() const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Builds the simulation settings described by a `simulate` configuration.
SimulationConfig simulation_from(const RunConfig& config);

/// Entry point of the `retarget` executable. Returns the process exit code:
/// 0 ok, 2 config or input error, 3 numeric singularity, 4 fitting failure,
/// 5 every simulated replicate failed.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rpl
