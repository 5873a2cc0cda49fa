#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace binloc::cli {

using Json = nlohmann::ordered_json;

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "BINLOC_OUTPUT_ROOT";

/// Overrides given on the command line; unset fields keep the file's values.
struct Overrides {
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string output_dir;
  int threads = 0;
};

/// Parses a config file strictly, fills defaults and applies overrides.
/// Unknown keys and type errors raise ConfigError naming the key and line.
Json load_config(const std::filesystem::path& path, const Overrides& overrides = {});
Json resolve_config(const std::string& text, const Overrides& overrides = {});

/// Run id of a command: a hash of every resolved setting that can change
/// its outputs (output_dir and threads are excluded).
std::string run_id(const Json& config, const std::string& command);

/// Directory a command writes into: <output_dir>/<command>-<run id>.
std::filesystem::path run_dir(const Json& config, const std::string& command);

/// Expands "@synth:<set>" and "@train" references; other strings are paths
/// relative to the working directory.
std::filesystem::path resolve_manifest_ref(const Json& config, const std::string& ref);
std::filesystem::path resolve_checkpoint_ref(const Json& config, const std::string& ref);

/// Entry point shared by the binary and the tests. Returns the exit code:
/// 0 on success, 2 for usage or config errors, 1 for other failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace binloc::cli
