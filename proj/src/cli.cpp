#include "binloc/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "binloc/audio_io.hpp"
#include "binloc/checkpoint.hpp"
#include "binloc/error.hpp"
#include "binloc/evaluation.hpp"
#include "binloc/features.hpp"
#include "binloc/parallel.hpp"
#include "binloc/rng.hpp"
#include "binloc/synth.hpp"
#include "binloc/training.hpp"

namespace binloc::cli {
namespace {

constexpr const char* kDefaultOutputRoot = "runs";

Json set_json(const std::string& name, const std::string& split, std::vector<std::string> kinds,
              std::vector<std::uint64_t> seeds, bool ood) {
  Json j;
  j["name"] = name;
  j["split"] = split;
  j["kinds"] = std::move(kinds);
  j["seeds"] = std::move(seeds);
  j["out_of_domain"] = ood;
  return j;
}

Json default_test_sets() {
  Json j = Json::object();
  j["test_in"] = "@synth:test_in";
  j["test_ood"] = "@synth:test_ood";
  return j;
}

// Every accepted key, with its default value and type.
Json defaults() {
  Json d;
  d["seed"] = std::uint64_t{1};
  d["output_dir"] = "";
  d["threads"] = 1;

  Json& s = d["synth"];
  s["azimuths_deg"] = Json::array();
  s["tone_min_hz"] = 250.0;
  s["tone_max_hz"] = 4000.0;
  const HeadModel head;
  s["head"]["radius_m"] = head.radius_m;
  s["head"]["speed_of_sound_mps"] = head.speed_of_sound_mps;
  s["head"]["shadow_alpha_min"] = head.shadow_alpha_min;
  s["head"]["shadow_theta_min_deg"] = head.shadow_theta_min_deg;
  s["sets"] = Json::array({
      set_json("train", "train", {"am_noise", "bursty_pink"}, {1, 2, 3, 4}, false),
      set_json("val", "val", {"am_noise", "bursty_pink"}, {5}, false),
      set_json("test_in", "test", {"am_noise", "bursty_pink"}, {6, 7}, false),
      set_json("test_ood", "test",
               {"white_noise", "pink_noise", "pure_tone", "click_train", "bursty_pink_reverb"}, {8, 9},
               true),
  });

  const TrainConfig t;
  Json& f = d["features"];
  f["feature_set"] = "ild+ipd";
  f["manifests"] = Json::array({"@synth:train", "@synth:val"});

  Json& tr = d["train"];
  tr["feature_set"] = "ild+ipd";
  tr["train_manifest"] = "@synth:train";
  tr["val_manifest"] = "@synth:val";
  tr["learning_rate"] = t.learning_rate;
  tr["max_epochs"] = t.max_epochs;
  tr["patience"] = t.patience;
  tr["batch_size"] = t.batch_size;

  Json& e = d["eval"];
  e["feature_set"] = "ild+ipd";
  e["checkpoint"] = "@train";
  e["test_sets"] = default_test_sets();

  Json& sw = d["sweep"];
  sw["feature_sets"] = Json::array();
  sw["train_manifest"] = "@synth:train";
  sw["val_manifest"] = "@synth:val";
  sw["test_sets"] = default_test_sets();
  sw["learning_rate"] = t.learning_rate;
  sw["max_epochs"] = t.max_epochs;
  sw["patience"] = t.patience;
  sw["batch_size"] = t.batch_size;
  return d;
}

// 1-based line of the first occurrence of the key path in the raw text.
int line_of(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const std::string& key : path) {
    const std::size_t at = text.find('"' + key + '"', pos);
    if (at == std::string::npos) break;
    pos = at;
  }
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

std::string join(const std::vector<std::string>& path) {
  std::string out;
  for (const auto& p : path) out += (out.empty() ? "" : ".") + p;
  return out;
}

struct Merger {
  const std::string& text;

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& what) const {
    throw ConfigError(fmt::format("config key '{}' (line {}): {}", join(path), line_of(text, path), what));
  }

  void check_type(const Json& expected, const Json& got, const std::vector<std::string>& path) const {
    const bool ok = (expected.is_boolean() && got.is_boolean()) || (expected.is_string() && got.is_string()) ||
                    (expected.is_array() && got.is_array()) || (expected.is_object() && got.is_object()) ||
                    (expected.is_number_float() && got.is_number()) ||
                    (expected.is_number_integer() && got.is_number_integer());
    if (!ok) fail(path, fmt::format("expected {}, got {}", expected.type_name(), got.type_name()));
    if (expected.is_number_unsigned() && got.is_number_integer() && got.get<std::int64_t>() < 0) {
      fail(path, "must be non-negative");
    }
  }

  // Named string map, e.g. test sets.
  void merge_string_map(Json& dst, const Json& src, std::vector<std::string>& path) const {
    dst = Json::object();
    for (const auto& [k, v] : src.items()) {
      path.push_back(k);
      if (!v.is_string()) fail(path, "expected a manifest path or reference");
      dst[k] = v;
      path.pop_back();
    }
    if (dst.empty()) fail(path, "needs at least one test set");
  }

  void merge_sets(Json& dst, const Json& src, std::vector<std::string>& path) const {
    const Json schema = set_json("", "", {}, {}, false);
    dst = Json::array();
    for (std::size_t i = 0; i < src.size(); ++i) {
      path.push_back(std::to_string(i));
      if (!src[i].is_object()) fail(path, "expected an object");
      Json item = schema;
      merge(item, src[i], path);
      for (const char* required : {"name", "kinds", "seeds"}) {
        if (!src[i].contains(required)) {
          path.push_back(required);
          fail(path, "required");
        }
      }
      dst.push_back(std::move(item));
      path.pop_back();
    }
  }

  void merge(Json& dst, const Json& src, std::vector<std::string>& path) const {
    for (const auto& [key, value] : src.items()) {
      path.push_back(key);
      if (!dst.contains(key)) fail(path, "unknown key");
      Json& slot = dst[key];
      check_type(slot, value, path);
      if (key == "test_sets") {
        merge_string_map(slot, value, path);
      } else if (key == "sets" && path.size() == 2) {
        merge_sets(slot, value, path);
      } else if (slot.is_object()) {
        merge(slot, value, path);
      } else if (slot.is_number_float()) {
        slot = value.get<double>();
      } else {
        slot = value;
      }
      path.pop_back();
    }
  }
};

std::uint64_t hash_json(const Json& j) { return fnv1a64(j.dump()); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

FeatureSetSpec spec_at(const Json& section, const char* key) {
  try {
    return parse_feature_set(section.at(key).get<std::string>());
  } catch (const ParameterError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

TrainConfig train_config(const Json& config, const Json& section, const FeatureSetSpec& spec) {
  TrainConfig t;
  t.learning_rate = section.at("learning_rate").get<double>();
  t.max_epochs = section.at("max_epochs").get<int>();
  t.patience = section.at("patience").get<int>();
  t.batch_size = section.at("batch_size").get<int>();
  t.seed = config.at("seed").get<std::uint64_t>();
  t.feature_spec = spec;
  t.threads = config.at("threads").get<int>();
  t.validate();
  return t;
}

DatasetConfig dataset_config(const Json& config) {
  const Json& s = config.at("synth");
  DatasetConfig d;
  d.azimuths_deg = s.at("azimuths_deg").get<std::vector<double>>();
  d.tone_min_hz = s.at("tone_min_hz").get<double>();
  d.tone_max_hz = s.at("tone_max_hz").get<double>();
  const Json& h = s.at("head");
  d.head.radius_m = h.at("radius_m").get<double>();
  d.head.speed_of_sound_mps = h.at("speed_of_sound_mps").get<double>();
  d.head.shadow_alpha_min = h.at("shadow_alpha_min").get<double>();
  d.head.shadow_theta_min_deg = h.at("shadow_theta_min_deg").get<double>();
  d.threads = config.at("threads").get<int>();
  try {
    for (const Json& j : s.at("sets")) {
      DatasetSet set;
      set.name = j.at("name").get<std::string>();
      set.split = parse_split(j.at("split").get<std::string>());
      for (const auto& k : j.at("kinds")) set.kinds.push_back(parse_source_kind(k.get<std::string>()));
      set.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      set.out_of_domain = j.at("out_of_domain").get<bool>();
      d.sets.push_back(std::move(set));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth.sets: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("synth.sets: ") + e.what());
  }
  return d;
}

std::vector<TestSetRef> test_sets(const Json& config, const Json& section) {
  std::vector<TestSetRef> out;
  for (const auto& [name, ref] : section.at("test_sets").items()) {
    out.push_back({name, resolve_manifest_ref(config, ref.get<std::string>())});
  }
  return out;
}

void require_file(const std::filesystem::path& path, const std::string& what) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError(fmt::format("{} not found: {}", what, path.string()));
  }
}

std::filesystem::path prepare_run_dir(const Json& config, const std::string& command) {
  const auto dir = run_dir(config, command);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", dir.string(), ec.message()));
  write_text(dir / "config.json", config.dump(2) + "\n");
  return dir;
}

// ---- commands ------------------------------------------------------------

void cmd_synth(const Json& config, std::ostream& out) {
  const DatasetConfig d = dataset_config(config);
  const auto dir = prepare_run_dir(config, "synth");
  const DatasetSummary s = build_dataset(d, dir);
  for (std::size_t i = 0; i < s.set_names.size(); ++i) {
    out << fmt::format("{:<12} {:>6} clips  {}\n", s.set_names[i], s.record_counts[i], s.manifest_paths[i].string());
  }
  const std::size_t lines = read_manifest(dir / "manifest.jsonl").size();
  out << fmt::format("total        {:>6} clips ({} manifest lines)  {}\n", s.total_records, lines,
                     (dir / "manifest.jsonl").string());
  if (lines != s.total_records) throw Error("manifest line count does not match the rendered clips");
}

void cmd_features(const Json& config, std::ostream& out) {
  const Json& section = config.at("features");
  const FeatureSetSpec spec = spec_at(section, "feature_set");
  const int threads = config.at("threads").get<int>();
  std::vector<std::filesystem::path> manifests;
  for (const auto& ref : section.at("manifests")) {
    if (!ref.is_string()) throw ConfigError("features.manifests: expected strings");
    manifests.push_back(resolve_manifest_ref(config, ref.get<std::string>()));
    require_file(manifests.back(), "manifest");
  }
  const auto dir = prepare_run_dir(config, "features");
  for (const auto& manifest : manifests) {
    const auto records = read_manifest(manifest);
    const auto sub = dir / manifest.stem();
    std::filesystem::create_directories(sub);
    std::string index;
    for (const auto& r : records) index += std::filesystem::path(r.clip_path).stem().string() + ".feat\n";
    parallel_for(records.size(), threads, [&](std::size_t i) {
      AudioClip clip = read_wav(resolve_clip_path(manifest, records[i]));
      if (clip.sample_rate_hz == kSourceRateHz) clip = resample_48k_to_16k(clip);
      write_feature_cache(assemble_features(clip, spec),
                          sub / (std::filesystem::path(records[i].clip_path).stem().string() + ".feat"));
    });
    write_text(sub / "index.txt", index);
    out << fmt::format("{:<12} {:>6} tensors ({} x 98 x 257)  {}\n", manifest.stem().string(), records.size(),
                       spec.channel_count(), sub.string());
  }
}

void cmd_train(const Json& config, std::ostream& out) {
  const Json& section = config.at("train");
  const FeatureSetSpec spec = spec_at(section, "feature_set");
  const TrainConfig tc = train_config(config, section, spec);
  const auto train_path = resolve_manifest_ref(config, section.at("train_manifest").get<std::string>());
  const auto val_path = resolve_manifest_ref(config, section.at("val_manifest").get<std::string>());
  require_file(train_path, "train manifest");
  require_file(val_path, "val manifest");
  const auto dir = prepare_run_dir(config, "train");

  const FeatureDataset train_set = load_feature_dataset(train_path, spec, tc.threads);
  const FeatureDataset val_set = load_feature_dataset(val_path, spec, tc.threads);
  out << fmt::format("training {} on {} clips, validating on {}\n", spec.display_name(), train_set.size(),
                     val_set.size());
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  const TrainResult r = train(train_set, val_set, tc, [&](const EpochLog& e) {
    log << to_json_line(e) << '\n' << std::flush;
    out << fmt::format("epoch {:>4}  train {:.5f}  val {:.5f}  {:.1f}s\n", e.epoch, e.train_loss, e.val_loss,
                       e.elapsed_s);
  });
  save_checkpoint(Checkpoint{r.best_params, r.best_optimizer, spec}, dir / "checkpoint.bin");
  Json summary;
  summary["feature_set"] = spec.token();
  summary["best_epoch"] = r.best_epoch;
  summary["best_val_loss"] = r.best_val_loss;
  summary["epochs_run"] = r.epochs_run;
  summary["stop_reason"] = r.stop_reason;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << fmt::format("stopped: {}; best epoch {} (val {:.5f})\ncheckpoint: {}\n", r.stop_reason, r.best_epoch,
                     r.best_val_loss, (dir / "checkpoint.bin").string());
}

void cmd_eval(const Json& config, std::ostream& out) {
  const Json& section = config.at("eval");
  const FeatureSetSpec spec = spec_at(section, "feature_set");
  const auto checkpoint = resolve_checkpoint_ref(config, section.at("checkpoint").get<std::string>());
  require_file(checkpoint, "checkpoint");
  const auto sets = test_sets(config, section);
  for (const auto& t : sets) require_file(t.manifest, "test manifest '" + t.name + "'");
  const auto dir = prepare_run_dir(config, "eval");

  std::string csv = std::string(kResultCsvHeader) + "\n";
  std::string per_source = "spec,testset,source_type,mae_deg,n\n";
  for (const auto& t : sets) {
    const EvalReport r = evaluate(checkpoint, t.manifest, spec, t.name, config.at("threads").get<int>());
    const std::string text = format_report_text(r);
    write_text(dir / ("report_" + t.name + ".txt"), text);
    csv += format_result_csv_row(r) + "\n";
    for (const auto& [name, s] : r.per_source) {
      per_source += fmt::format("{},{},{},{:.4f},{}\n", spec.token(), t.name, name, s.mae_deg, s.count);
    }
    out << text << '\n';
  }
  write_text(dir / "results.csv", csv);
  write_text(dir / "per_source.csv", per_source);
  out << "results: " << (dir / "results.csv").string() << '\n';
}

int cmd_sweep(const Json& config, std::ostream& out, std::ostream& err) {
  const Json& section = config.at("sweep");
  SweepInputs in;
  for (const auto& token : section.at("feature_sets")) {
    if (!token.is_string()) throw ConfigError("sweep.feature_sets: expected strings");
    try {
      in.specs.push_back(parse_feature_set(token.get<std::string>()));
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("sweep.feature_sets: ") + e.what());
    }
    if (table_row_of(in.specs.back()) == 0) throw ConfigError("sweep.feature_sets: not a table row");
  }
  in.base = train_config(config, section, FeatureSetSpec{false, false, true, true});
  in.train_manifest = resolve_manifest_ref(config, section.at("train_manifest").get<std::string>());
  in.val_manifest = resolve_manifest_ref(config, section.at("val_manifest").get<std::string>());
  require_file(in.train_manifest, "train manifest");
  require_file(in.val_manifest, "val manifest");
  in.test_sets = test_sets(config, section);
  for (const auto& t : in.test_sets) require_file(t.manifest, "test manifest '" + t.name + "'");
  in.threads = config.at("threads").get<int>();
  const auto dir = prepare_run_dir(config, "sweep");
  in.artifact_dir = dir / "rows";

  const SweepResult r = run_sweep(in);
  write_text(dir / "results.csv", format_sweep_csv(r));
  write_text(dir / "per_source.csv", format_sweep_per_source_csv(r));
  const std::string table = format_sweep_table(r);
  write_text(dir / "table.txt", table);
  out << table << "results: " << (dir / "results.csv").string() << '\n';
  const auto failed = std::count_if(r.rows.begin(), r.rows.end(), [](const SweepRow& row) { return !row.error.empty(); });
  if (failed > 0) {
    err << fmt::format("binloc: {} of {} sweep rows failed\n", failed, r.rows.size());
    return 1;
  }
  return 0;
}

}  // namespace

Json resolve_config(const std::string& text, const Overrides& overrides) {
  Json user;
  try {
    user = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ConfigError(fmt::format("config parse error at line {}: {}", line, e.what()));
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  Json config = defaults();
  std::vector<std::string> path;
  Merger{text}.merge(config, user, path);

  if (overrides.has_seed) config["seed"] = overrides.seed;
  if (!overrides.output_dir.empty()) config["output_dir"] = overrides.output_dir;
  if (overrides.threads > 0) config["threads"] = overrides.threads;
  if (config["output_dir"].get<std::string>().empty()) {
    const char* env = std::getenv(kOutputRootEnv);
    config["output_dir"] = (env && *env) ? env : kDefaultOutputRoot;
  }
  if (config["threads"].get<int>() < 1) throw ConfigError("config key 'threads': must be >= 1");
  return config;
}

Json load_config(const std::filesystem::path& path, const Overrides& overrides) {
  return resolve_config(read_text(path), overrides);
}

std::string run_id(const Json& config, const std::string& command) {
  Json key;
  key["command"] = command;
  key["synth"] = config.at("synth");
  if (command != "synth") {
    key["seed"] = config.at("seed");
    key[command] = config.at(command);
  }
  if (command == "eval") key["train"] = config.at("train");
  return fmt::format("{:016x}", hash_json(key)).substr(0, 12);
}

std::filesystem::path run_dir(const Json& config, const std::string& command) {
  return std::filesystem::path(config.at("output_dir").get<std::string>()) / (command + "-" + run_id(config, command));
}

std::filesystem::path resolve_manifest_ref(const Json& config, const std::string& ref) {
  constexpr std::string_view kSynth = "@synth:";
  if (ref.starts_with(kSynth)) {
    const std::string set = ref.substr(kSynth.size());
    bool known = false;
    for (const Json& s : config.at("synth").at("sets")) known = known || s.at("name") == set;
    if (!known) throw ConfigError("reference '" + ref + "' names no synth set");
    return run_dir(config, "synth") / (set + ".jsonl");
  }
  if (ref.starts_with('@')) throw ConfigError("unknown manifest reference '" + ref + "'");
  return ref;
}

std::filesystem::path resolve_checkpoint_ref(const Json& config, const std::string& ref) {
  if (ref == "@train") return run_dir(config, "train") / "checkpoint.bin";
  if (ref.starts_with('@')) throw ConfigError("unknown checkpoint reference '" + ref + "'");
  return ref;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Binaural sound source localization: synthesis, features, training and evaluation", "binloc"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides ov;
  std::string seed_text;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed_text, "override the base seed");
    sub->add_option("--output-dir", ov.output_dir, "override the output root");
    sub->add_option("--threads", ov.threads, "worker threads")->check(CLI::PositiveNumber);
  };
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "render the binaural dataset and its manifests"},
      {"features", "extract feature tensors into a cache"},
      {"train", "train one model"},
      {"eval", "evaluate a checkpoint on the test sets"},
      {"sweep", "train and evaluate every feature set of the comparison table"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!seed_text.empty()) {
      std::size_t used = 0;
      ov.seed = std::stoull(seed_text, &used);
      if (used != seed_text.size() || seed_text.starts_with('-')) throw std::invalid_argument(seed_text);
      ov.has_seed = true;
    }
  } catch (const std::exception&) {
    err << "binloc: error: --seed expects a non-negative integer, got '" << seed_text << "'\n";
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const Json config = load_config(config_path, ov);
    if (command == "synth") cmd_synth(config, out);
    if (command == "features") cmd_features(config, out);
    if (command == "train") cmd_train(config, out);
    if (command == "eval") cmd_eval(config, out);
    if (command == "sweep") return cmd_sweep(config, out, err);
    return 0;
  } catch (const ConfigError& e) {
    err << "binloc: error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "binloc: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace binloc::cli
