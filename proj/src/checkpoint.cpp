#include "binloc/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "binloc/error.hpp"
#include "binloc/rng.hpp"

namespace binloc {
namespace {

constexpr const char* kMagic = "binloc-checkpoint";
constexpr int kVersion = 1;

void write_blocks(std::ofstream& out, const ModelState& p) {
  for (const auto& block : p.blocks()) {
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(float)));
  }
}

void read_blocks(std::ifstream& in, ModelState& p, const std::filesystem::path& path) {
  for (auto& block : p.blocks()) {
    const auto bytes = static_cast<std::streamsize>(block.size() * sizeof(float));
    in.read(reinterpret_cast<char*>(block.data()), bytes);
    if (in.gcount() != bytes) throw FormatError(path.string() + ": truncated checkpoint payload");
  }
}

}  // namespace

Checkpoint Checkpoint::fresh(const FeatureSetSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int c_in = spec.channel_count();
  return Checkpoint{init_params<float>(c_in, derive_seed(seed, 1)), AdamState<float>(c_in), spec};
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const ModelState& p = checkpoint.params;
  if (checkpoint.feature_spec.channel_count() != p.input_channels) {
    throw ValidationError("save_checkpoint: feature set does not match input_channels");
  }
  nlohmann::ordered_json header;
  header["format"] = kMagic;
  header["version"] = kVersion;
  header["arch"] = kArchitecture;
  header["input_channels"] = p.input_channels;
  header["step"] = checkpoint.optimizer.step;
  header["feature_set"] = checkpoint.feature_spec.token();
  header["layout"] = checkpoint.feature_spec.layout();
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  const auto names = ModelState::block_names();
  const auto sizes = p.blocks();
  for (std::size_t i = 0; i < names.size(); ++i) blocks.push_back({names[i], sizes[i].size()});
  header["blocks"] = blocks;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << header.dump() << '\n';
  write_blocks(out, p);
  write_blocks(out, checkpoint.optimizer.first_moment);
  write_blocks(out, checkpoint.optimizer.second_moment);
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty checkpoint");

  int c_in = 0;
  std::uint64_t step = 0;
  FeatureSetSpec spec;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format").get<std::string>() != kMagic) throw FormatError("not a checkpoint");
    if (header.at("version").get<int>() != kVersion) throw FormatError("unsupported version");
    if (header.at("arch").get<std::string>() != kArchitecture) {
      throw FormatError("architecture fingerprint mismatch");
    }
    c_in = header.at("input_channels").get<int>();
    step = header.at("step").get<std::uint64_t>();
    spec = parse_feature_set(header.at("feature_set").get<std::string>());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (c_in < 1 || c_in > 6 || spec.channel_count() != c_in) {
    throw FormatError(path.string() + ": inconsistent input_channels in header");
  }

  Checkpoint cp{ModelState(c_in), AdamState<float>(c_in), spec};
  const auto names = ModelState::block_names();
  const auto sizes = cp.params.blocks();
  try {
    const auto& blocks = header.at("blocks");
    if (!blocks.is_array() || blocks.size() != names.size()) throw FormatError("block table mismatch");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (blocks[i].at(0).get<std::string>() != names[i] ||
          blocks[i].at(1).get<std::size_t>() != sizes[i].size()) {
        throw FormatError("block " + names[i] + " has unexpected shape");
      }
    }
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": bad block table: " + e.what());
  }
  read_blocks(in, cp.params, path);
  read_blocks(in, cp.optimizer.first_moment, path);
  read_blocks(in, cp.optimizer.second_moment, path);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  cp.optimizer.step = step;
  return cp;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const FeatureSetSpec& expected) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.params.input_channels != expected.channel_count()) {
    throw ValidationError(path.string() + ": checkpoint has " +
                          std::to_string(cp.params.input_channels) + " input planes but feature set '" +
                          expected.token() + "' needs " + std::to_string(expected.channel_count()));
  }
  return cp;
}

}  // namespace binloc
