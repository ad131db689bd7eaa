// SPDX-License-Identifier: Apache-2.0
// hacm: data generation, pre-training, linear probe and mask inspection.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <typeinfo>
#include <vector>

#include "CLI11.hpp"
#include "hacm/checkpoint.hpp"
#include "hacm/config.hpp"
#include "hacm/data.hpp"
#include "hacm/error.hpp"
#include "hacm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hacm;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
};

void add_config_flags(CLI::App* app, ConfigArgs& a) {
  app->add_option("-c,--config", a.file, "key = value config file");
  app->add_option("-s,--set", a.overrides, "override one key (key=value), repeatable");
}

void apply(RunConfig& cfg, const ConfigArgs& a) {
  if (!a.file.empty()) cfg.load(a.file);
  for (const std::string& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
}

fs::path dataset_file(const fs::path& p) { return fs::is_directory(p) ? p / "sequences.bin" : p; }

const char* error_kind(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const HeaderError*>(&e)) return "format/header";
  if (dynamic_cast<const VersionError*>(&e)) return "format/version";
  if (dynamic_cast<const TruncatedError*>(&e)) return "format/truncated";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const GraphError*>(&e)) return "graph";
  return "io";
}

std::string probe_json(const pipeline::ProbeReport& r, bool random_init) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\n  \"encoder\": \"%s\",\n  \"classes\": %zu,\n  \"chance\": %.6f,\n  \"train_samples\": %zu,\n"
                "  \"test_samples\": %zu,\n  \"train_accuracy\": %.6f,\n  \"test_accuracy\": %.6f\n}\n",
                random_init ? "random" : "pretrained", r.classes, r.chance, r.train_samples, r.test_samples,
                r.train_accuracy, r.test_accuracy);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperbolic cross-masking pre-training on skeleton sequences"};
  app.require_subcommand(1);

  // gen-data
  data::SyntheticSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labelled skeleton dataset");
  gen->add_option("--classes", spec.n_classes, "number of classes")->capture_default_str();
  gen->add_option("--per-class", spec.samples_per_class, "train sequences per class")->capture_default_str();
  gen->add_option("--test-per-class", spec.test_per_class, "test sequences per class")->capture_default_str();
  gen->add_option("--frames", spec.frames, "raw frames per sequence")->capture_default_str();
  gen->add_option("--noise", spec.noise_sigma, "coordinate noise sigma (m)")->capture_default_str();
  gen->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // pretrain
  ConfigArgs pre_cfg;
  std::string pre_data, pre_out;
  bool quiet = false;
  auto* pre = app.add_subcommand("pretrain", "Pre-train the encoder/decoder");
  pre->add_option("--data", pre_data, "dataset file or directory")->required();
  pre->add_option("--out", pre_out, "run directory")->required();
  pre->add_flag("-q,--quiet", quiet, "no per-step progress");
  add_config_flags(pre, pre_cfg);

  // probe
  ConfigArgs probe_cfg;
  std::string probe_run, probe_data;
  bool random_init = false;
  auto* prb = app.add_subcommand("probe", "Linear probe on frozen encoder features");
  prb->add_option("--run", probe_run, "run directory written by pretrain")->required();
  prb->add_option("--data", probe_data, "dataset file or directory")->required();
  prb->add_flag("--random-init", random_init, "probe a freshly initialised encoder instead");
  add_config_flags(prb, probe_cfg);

  // inspect-mask
  ConfigArgs insp_cfg;
  std::string insp_data, insp_run, insp_out;
  std::size_t sample = 0;
  auto* insp = app.add_subcommand("inspect-mask", "Dump mask criteria and unmask flags for one sample");
  insp->add_option("--data", insp_data, "dataset file or directory")->required();
  insp->add_option("--sample", sample, "sample index")->required();
  insp->add_option("--run", insp_run, "run directory; uses its config and checkpoint");
  insp->add_option("--out", insp_out, "CSV path (default: stdout)");
  add_config_flags(insp, insp_cfg);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      fs::create_directories(gen_out);
      const auto seqs = data::generate(spec);
      data::save(fs::path(gen_out) / "sequences.bin", seqs);
      std::cout << "wrote " << seqs.size() << " sequences to " << (fs::path(gen_out) / "sequences.bin").string() << "\n";
    } else if (pre->parsed()) {
      RunConfig cfg;
      apply(cfg, pre_cfg);
      const auto seqs = data::load(dataset_file(pre_data));
      pipeline::PretrainOptions opts;
      opts.out_dir = pre_out;
      if (!quiet) {
        opts.on_step = [](const pipeline::LogRow& r) {
          std::printf("step %zu epoch %zu lr %.3g L_r %.5f L_c2 %.5f total %.5f\n", r.step, r.epoch, r.lr,
                      r.loss.l_r, r.loss.l_c2, r.loss.total);
          std::fflush(stdout);
        };
      }
      const auto res = pipeline::pretrain(cfg, seqs, opts);
      std::cout << "finished " << res.log.size() << " steps; checkpoint in " << pre_out << "\n";
    } else if (prb->parsed()) {
      RunConfig cfg;
      const fs::path run(probe_run);
      cfg.load(run / "config.txt");
      apply(cfg, probe_cfg);
      const auto seqs = data::load(dataset_file(probe_data));
      pipeline::Model m = random_init ? pipeline::make_model(cfg) : pipeline::load_model(cfg, run / "checkpoint.bin");
      const auto rep = pipeline::probe(m, seqs);
      const std::string json = probe_json(rep, random_init);
      std::ofstream(run / (random_init ? "probe_random.json" : "probe.json")) << json;
      std::cout << json;
    } else if (insp->parsed()) {
      RunConfig cfg;
      if (!insp_run.empty()) cfg.load(fs::path(insp_run) / "config.txt");
      apply(cfg, insp_cfg);
      const auto seqs = data::load(dataset_file(insp_data));
      pipeline::Model m = insp_run.empty() ? pipeline::make_model(cfg)
                                           : pipeline::load_model(cfg, fs::path(insp_run) / "checkpoint.bin");
      const std::string csv = pipeline::inspect_mask(m, seqs, sample);
      if (insp_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream os(insp_out);
        os << csv;
        if (!os) throw Error("cannot write " + insp_out);
      }
    }
  } catch (const Error& e) {
    std::cerr << "hacm: error (" << error_kind(e) << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "hacm: error (internal): " << e.what() << "\n";
    return 1;
  }
  return 0;
}
