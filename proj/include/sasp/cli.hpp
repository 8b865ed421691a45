#pragma once

// Command-line surface: train, eval, inspect, synth, ingest-check.
// Exit codes: 0 ok, 1 usage, 2 data/config, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sasp/config.hpp"
#include "sasp/data.hpp"
#include "sasp/model.hpp"
#include "sasp/train.hpp"

namespace sasp::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumeric = 3 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

using Scalar = float;

template <typename S>
struct LoadedRun {
  RunConfig config;
  SplitData<S> data;
};

// Loads config and data; fills feature dims and class count from the data
// source when the config leaves them unset.
inline LoadedRun<Scalar> load_run(const std::string& config_path) {
  LoadedRun<Scalar> run{load_run_config(config_path), {}};
  RunConfig& rc = run.config;
  if (!rc.feature_file.empty()) {
    const FeatureFile file = load_features(rc.feature_file);
    std::optional<DatasetManifest> manifest;
    if (!rc.manifest.empty()) manifest = load_manifest(rc.manifest);
    auto& b = rc.model.backbone;
    auto adopt = [&](const char* key, std::size_t& field, std::size_t value) {
      if (!rc.is_set(key))
        field = value;
      else if (field != value)
        throw ConfigError(std::string("config ") + key + "=" + std::to_string(field) +
                          " disagrees with data (" + std::to_string(value) + ")");
    };
    adopt("channels", b.channels, file.header.channels);
    adopt("feature_h", b.height, file.header.height);
    adopt("feature_w", b.width, file.header.width);
    adopt("classes", rc.model.classes, file.header.classes);
    rc.validate();
    run.data = datasets_from_features<Scalar>(file, manifest ? &*manifest : nullptr);
  } else {
    const DatasetManifest manifest = ingest_cub(rc.cub_root);
    if (!rc.is_set("classes")) rc.model.classes = manifest.classes;
    if (rc.model.classes != manifest.classes) throw ConfigError("config classes disagrees with dataset");
    rc.validate();
    run.data = datasets_from_images<Scalar>(manifest, rc.model.backbone);
  }
  if (run.data.train.empty()) throw IngestError("no training samples");
  return run;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline int cmd_train(const std::string& config_path, Streams io) {
  auto run = load_run(config_path);
  const RunConfig& rc = run.config;
  std::filesystem::create_directories(rc.output_dir);
  const std::filesystem::path out_dir(rc.output_dir);
  SaspModel<Scalar> model(rc.model, rc.train.seed);
  Trainer<Scalar> trainer(model, rc.train);
  const Dataset<Scalar>* eval = run.data.test.empty() ? nullptr : &run.data.test;
  int code = kOk;
  try {
    trainer.run(run.data.train, eval);
  } catch (const NumericError& e) {
    io.err << "error: " << e.what() << "; saving last finite state\n";
    code = kNumeric;
  }
  save_checkpoint((out_dir / "checkpoint.bin").string(), model);
  std::ostringstream csv;
  trainer.log().write_csv(csv);
  write_text(out_dir / "train_log.csv", csv.str());
  if (code == kOk && !trainer.log().epochs.empty()) {
    const EpochRecord& last = trainer.log().epochs.back();
    io.out << "train_accuracy " << last.train_acc << '\n';
    if (last.eval_acc) io.out << "eval_accuracy " << *last.eval_acc << '\n';
  }
  io.out << "wrote " << (out_dir / "checkpoint.bin").string() << " and " << (out_dir / "train_log.csv").string() << '\n';
  return code;
}

inline bool same_architecture(const SaspConfig& a, const SaspConfig& b) {
  return a.backbone.mode == b.backbone.mode && a.channels() == b.channels() && a.backbone.height == b.backbone.height &&
         a.backbone.width == b.backbone.width && a.classes == b.classes && a.csw_reduction == b.csw_reduction &&
         a.head_hidden1 == b.head_hidden1 && a.head_hidden2 == b.head_hidden2 &&
         (a.backbone.mode != BackboneMode::kTinyCnn ||
          (a.backbone.stage_widths == b.backbone.stage_widths && a.backbone.input_height == b.backbone.input_height &&
           a.backbone.input_width == b.backbone.input_width));
}

inline int cmd_eval(const std::string& config_path, const std::string& checkpoint, Streams io) {
  auto run = load_run(config_path);
  SaspModel<Scalar> model = load_checkpoint<Scalar>(checkpoint);
  if (!same_architecture(model.config(), run.config.model))
    throw ConfigError("checkpoint architecture does not match the config");
  const bool has_test = !run.data.test.empty();
  if (!has_test) io.err << "warning: no test split; evaluating on training samples\n";
  const double acc = evaluate(model, has_test ? run.data.test : run.data.train, run.config.train.batch_size);
  io.out << "accuracy " << acc << '\n';
  return kOk;
}

// Writes alpha.csv for every sample in `sample` (feature file or PPM image)
// and branch_responses.csv for the selected one.
inline int cmd_inspect(const std::string& checkpoint, const std::string& sample, const std::string& out_dir,
                       const std::string& sample_id, Streams io) {
  SaspModel<Scalar> model = load_checkpoint<Scalar>(checkpoint);
  const SaspConfig& cfg = model.config();
  Dataset<Scalar> data;
  if (std::filesystem::path(sample).extension() == ".ppm") {
    if (cfg.backbone.mode != BackboneMode::kTinyCnn) throw ConfigError("image input needs a tiny-cnn checkpoint");
    data.add(std::filesystem::path(sample).stem().string(), 0, preprocess<Scalar>(read_ppm(sample), cfg.backbone));
  } else {
    if (cfg.backbone.mode != BackboneMode::kPrecomputed) throw ConfigError("feature input needs a precomputed checkpoint");
    const FeatureFile file = load_features(sample);
    const Shape expect = cfg.input_shape(1);
    for (const auto& r : file.records) {
      if (!(r.features.shape() == expect))
        throw ConfigError("feature shape " + r.features.shape().str() + " does not match checkpoint " + expect.str());
      data.add(r.sample_id, r.label, r.features.cast<Scalar>());
    }
  }
  if (data.empty()) throw IngestError("no samples in " + sample);
  std::size_t pick = 0;
  if (!sample_id.empty()) {
    auto it = std::find(data.ids.begin(), data.ids.end(), sample_id);
    if (it == data.ids.end()) throw IngestError("sample '" + sample_id + "' not found in " + sample);
    pick = static_cast<std::size_t>(it - data.ids.begin());
  }

  std::filesystem::create_directories(out_dir);
  std::ostringstream alpha_csv;
  alpha_csv << "sample_id,channel,alpha\n";
  char buf[64];
  Tensor<Scalar> picked_features;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tape<Scalar> tape;
    auto outs = model.forward(tape.constant(data.inputs[i]), false, nullptr);
    const Tensor<Scalar>& a = outs.alpha.value();
    for (std::size_t c = 0; c < a.shape().d(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(a.at(0, c)));
      alpha_csv << data.ids[i] << ',' << c << ',' << buf << '\n';
    }
    if (i == pick) picked_features = outs.features.value();
  }
  write_text(std::filesystem::path(out_dir) / "alpha.csv", alpha_csv.str());

  const EpaResponses<Scalar> resp = epa_branch_responses(picked_features, model.epa());
  std::ostringstream branch_csv;
  branch_csv << "branch,channel,y,x,value\n";
  for (const auto& [name, t] : resp.named()) {
    const Shape& s = t->shape();
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t y = 0; y < s.h(); ++y)
        for (std::size_t x = 0; x < s.w(); ++x) {
          std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(t->at(0, c, y, x)));
          branch_csv << name << ',' << c << ',' << y << ',' << x << ',' << buf << '\n';
        }
  }
  write_text(std::filesystem::path(out_dir) / "branch_responses.csv", branch_csv.str());
  io.out << "inspected " << data.size() << " sample(s); branch responses for '" << data.ids[pick] << "'\n";
  return kOk;
}

inline int cmd_synth(const SynthSpec& spec, const std::string& out_dir, Streams io) {
  const SynthResult r = synth_dataset(spec);
  for (const auto& w : r.warnings) io.err << "warning: " << w << '\n';
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  save_features((dir / "features.bin").string(), r.header, r.records);
  save_manifest((dir / "manifest.tsv").string(), r.manifest);
  io.out << "wrote " << r.records.size() << " records (" << r.manifest.count(Split::kTrain) << " train, "
         << r.manifest.count(Split::kTest) << " test) to " << out_dir << '\n';
  return kOk;
}

inline int cmd_ingest_check(const std::string& root, const std::string& manifest_out, Streams io) {
  const DatasetManifest m = ingest_cub(root);
  io.out << "classes " << m.classes << "\ntrain " << m.count(Split::kTrain) << "\ntest " << m.count(Split::kTest) << '\n';
  if (!manifest_out.empty()) save_manifest(manifest_out, m);
  return kOk;
}

inline int run(int argc, const char* const* argv, Streams io) {
  CLI::App app{"Strip-aware spatial perception classifier: train, evaluate and inspect"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, sample, out_dir = ".", sample_id, root, manifest_out;
  auto* train = app.add_subcommand("train", "Train from a key=value config; writes checkpoint and log CSV");
  train->add_option("config", config_path, "Run config file")->required();

  auto* eval = app.add_subcommand("eval", "Print test-split accuracy of a checkpoint");
  eval->add_option("config", config_path, "Run config file")->required();
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();

  auto* inspect = app.add_subcommand("inspect", "Export EPA branch responses and CSW channel weights as CSV");
  inspect->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  inspect->add_option("sample", sample, "Feature file or PPM image")->required();
  inspect->add_option("--out-dir", out_dir, "Directory for the CSV files");
  inspect->add_option("--sample-id", sample_id, "Sample for branch responses (default: first)");

  SynthSpec spec;
  std::string synth_dir = ".";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic feature dataset");
  synth->add_option("--classes", spec.classes, "Class count")->capture_default_str();
  synth->add_option("--per-class", spec.per_class, "Samples per class")->capture_default_str();
  synth->add_option("--channels", spec.channels, "Feature channels")->capture_default_str();
  synth->add_option("--height", spec.height, "Feature height")->capture_default_str();
  synth->add_option("--width", spec.width, "Feature width")->capture_default_str();
  synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  synth->add_option("--noise", spec.noise_std, "Noise standard deviation")->capture_default_str();
  synth->add_option("--out-dir", synth_dir, "Output directory")->capture_default_str();

  auto* ingest = app.add_subcommand("ingest-check", "Validate a CUB-200-2011 directory");
  ingest->add_option("root", root, "Dataset root")->required();
  ingest->add_option("--write-manifest", manifest_out, "Also write the manifest here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    io.err << "usage error: " << e.what() << '\n' << app.help();
    return kUsage;
  }

  try {
    if (*train) return cmd_train(config_path, io);
    if (*eval) return cmd_eval(config_path, checkpoint, io);
    if (*inspect) return cmd_inspect(checkpoint, sample, out_dir, sample_id, io);
    if (*synth) return cmd_synth(spec, synth_dir, io);
    if (*ingest) return cmd_ingest_check(root, manifest_out, io);
  } catch (const NumericError& e) {
    io.err << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args, Streams io) {
  std::vector<const char*> argv{"sasp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), io);
}

}  // namespace sasp::cli
