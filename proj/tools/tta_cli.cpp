// tta_cli: dataset generation, corruption, source training, adaptation runs
// and feature export.
//
//   tta_cli synth --count 10000 --seed 1 --out data/clean
//   tta_cli train-source --data data/clean --out source.ckpt
//   tta_cli corrupt --clean data/clean --name gaussian_noise --severity 5 --seed 0 --out data/gn5
//   tta_cli run --config run.cfg [--protocol N-O|N-M] [--seed S] [--method M] [--out DIR]
//   tta_cli export-features --ckpt source.ckpt --data data/gn5 --out features.csv
//
// Exit codes: 0 success, 1 usage, 2 invalid config, 3 missing or bad input
// files, 4 adaptation aborted on a non-finite value.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>

#include "tta/config.hpp"
#include "tta/corruptions.hpp"
#include "tta/experiment.hpp"
#include "tta/synth.hpp"
#include "tta/training.hpp"

namespace {

std::vector<int> parse_channels(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  if (out.empty()) throw tta::ConfigError("--channels needs at least one block width");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time adaptation harness"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "adapt a source checkpoint on a dataset and write a report");
  std::string config_file, protocol, method, out_dir, split;
  std::optional<std::uint64_t> seed;
  run->add_option("--config", config_file, "key = value run configuration")->required()->check(CLI::ExistingFile);
  run->add_option("--protocol", protocol, "N-O or N-M");
  run->add_option("--seed", seed, "overrides the config seed");
  run->add_option("--method", method, "tesla, source_only, entropy_min, pl_hard or bn_stats");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--split", split, "all, val or test");
  bool quiet = false;
  run->add_flag("--quiet", quiet, "no per-batch progress");

  auto* corrupt = app.add_subcommand("corrupt", "write a corrupted copy of a dataset");
  std::string clean_dir, corruption, corrupt_out;
  int severity = 0;
  std::uint64_t corrupt_seed = 0;
  corrupt->add_option("--clean", clean_dir, "clean dataset directory")->required();
  corrupt->add_option("--name", corruption, "corruption name")->required();
  corrupt->add_option("--severity", severity, "1..5")->required();
  corrupt->add_option("--seed", corrupt_seed, "noise seed")->required();
  corrupt->add_option("--out", corrupt_out, "output directory")->required();

  auto* features = app.add_subcommand("export-features", "write encoder features of a dataset as CSV");
  std::string ckpt, feat_data, feat_out;
  features->add_option("--ckpt", ckpt, "model checkpoint")->required();
  features->add_option("--data", feat_data, "dataset directory")->required();
  features->add_option("--out", feat_out, "CSV file")->required();

  auto* synth = app.add_subcommand("synth", "generate the procedural 10-class shape dataset");
  std::size_t synth_count = 10000;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--count", synth_count, "number of images")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* train = app.add_subcommand("train-source", "train a source model with cross-entropy");
  std::string train_data, train_out, channels = "16,32,64";
  tta::TrainOptions topt;
  std::uint64_t init_seed = 0;
  train->add_option("--data", train_data, "clean labeled dataset")->required();
  train->add_option("--out", train_out, "checkpoint file")->required();
  train->add_option("--epochs", topt.epochs)->capture_default_str();
  train->add_option("--batch-size", topt.batch_size)->capture_default_str();
  train->add_option("--lr", topt.learning_rate)->capture_default_str();
  train->add_option("--seed", topt.seed, "shuffling and augmentation seed")->capture_default_str();
  train->add_option("--init-seed", init_seed, "weight initialization seed")->capture_default_str();
  train->add_option("--channels", channels, "block widths, comma separated")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = tta::load_config(config_file);
      if (!protocol.empty()) tta::set_config_value(cfg, "protocol", protocol);
      if (!method.empty()) tta::set_config_value(cfg, "method", method);
      if (!out_dir.empty()) tta::set_config_value(cfg, "out", out_dir);
      if (!split.empty()) tta::set_config_value(cfg, "split", split);
      if (seed) cfg.adapt.seed = *seed;
      // N-O is always a single epoch; let --protocol N-O override an N-M config
      if (cfg.adapt.protocol == tta::Protocol::one_pass) cfg.adapt.epochs = 1;
      tta::ProgressFn progress;
      if (!quiet)
        progress = [](const tta::BatchRecord& b) {
          std::cerr << "epoch " << b.epoch << " batch " << b.batch << " loss " << b.loss_total << '\n';
        };
      const auto outcome = tta::run_experiment(cfg, progress);
      std::cout << outcome.summary.to_text();
    } else if (*corrupt) {
      tta::CorruptionSpec spec{corruption, severity, corrupt_seed};
      spec.validate();
      const auto clean = tta::load_dataset(clean_dir);
      const auto digest = clean.manifest_extra.value("images_sha256", std::string{});
      tta::save_dataset(corrupt_out, tta::build_corrupted_set(clean, spec, digest));
      std::cout << "wrote " << clean.size() << " images to " << corrupt_out << '\n';
    } else if (*features) {
      const auto rows = tta::export_features(ckpt, feat_data, feat_out);
      std::cout << "wrote " << rows << " feature rows to " << feat_out << '\n';
    } else if (*synth) {
      tta::save_dataset(synth_out, tta::make_synthetic_dataset(synth_count, synth_seed));
      std::cout << "wrote " << synth_count << " images to " << synth_out << '\n';
    } else if (*train) {
      const auto data = tta::load_dataset(train_data);
      tta::ArchConfig arch;
      arch.in_channels = data.channels;
      arch.height = data.height;
      arch.width = data.width;
      arch.num_classes = data.num_classes;
      arch.block_channels = parse_channels(channels);
      tta::SplitModel<float> model(arch);
      tta::Rng rng(init_seed);
      model.initialize(rng);
      tta::train_source(model, data, topt, [](const tta::EpochLog& l) {
        std::cerr << "epoch " << l.epoch << " loss " << l.loss << " train error " << l.train_error << "%\n";
      });
      tta::save_checkpoint(train_out, model);
      std::cout << "wrote " << train_out << '\n';
    }
  } catch (const tta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const tta::AdaptationAborted& e) {
    std::cerr << "adaptation aborted: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
