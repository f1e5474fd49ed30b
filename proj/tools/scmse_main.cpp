// Command-line front end: synth / train / enhance / eval / inspect-scm /
// gradcheck. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "scmse/audio.hpp"
#include "scmse/diff/checkpoint.hpp"
#include "scmse/metrics.hpp"
#include "scmse/model/gradsuite.hpp"
#include "scmse/model/pipeline.hpp"
#include "scmse/model/train.hpp"

namespace fs = std::filesystem;
using namespace scmse;

namespace {

void run_synth(const audio::DatasetSpec& spec) {
  audio::synthesize_dataset(spec);
  std::cout << "wrote " << spec.clips << " clips under " << spec.out_dir << "\n";
}

void run_enhance(const std::string& in_path, const std::string& out_path,
                 const std::string& ckpt) {
  const diff::CheckpointMeta meta = diff::peek_checkpoint(ckpt);
  if (meta.stage != model::stage_tag(model::Stage::Joint))
    throw std::runtime_error("checkpoint stage: " + meta.stage + ", need joint");
  const model::ModelConfig cfg = model::parse_config(meta.config_text);
  const audio::AudioClip noisy = audio::read_wav(in_path);

  auto run = [&](auto tag) {
    using T = decltype(tag);
    diff::ParameterStore<T> store;
    model::init_parameters(store, cfg, model::Stage::Joint);
    diff::load_checkpoint_into<T>(ckpt, store, "");
    audio::write_wav(out_path, model::enhance_clip(store, cfg, noisy));
  };
  if (meta.precision == "f64")
    run(double{});
  else
    run(float{});
  std::cout << "enhanced " << in_path << " -> " << out_path << "\n";
}

void run_inspect(const std::string& ckpt, const std::string& out_csv) {
  const diff::CheckpointMeta meta = diff::peek_checkpoint(ckpt);
  const model::ModelConfig cfg = model::parse_config(meta.config_text);
  const int low = cfg.low_bins();

  diff::ParameterStore<double> as_f64;
  diff::AdamState adam;
  if (meta.precision == "f64") {
    diff::load_checkpoint<double>(ckpt, as_f64, adam);
  } else {
    diff::ParameterStore<float> store;
    diff::load_checkpoint<float>(ckpt, store, adam);
    for (const auto& [name, e] : store) as_f64.add(name, e.value.template cast<double>());
  }

  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("inspect-scm: cannot write " + out_csv);
  out.precision(10);
  Index row_index = 0;
  for (const std::string prefix : {"mhan", "dpcrn"}) {
    const std::string name = prefix + ".scm.weight";
    if (!as_f64.has(name)) continue;
    const Tensor<double>& w = as_f64.entry(name).value;
    for (Index r = 0; r < w.dim(0); ++r, ++row_index) {
      const bool learnable = !cfg.high_learn || r >= low;
      out << row_index << "," << (learnable ? 1 : 0);
      for (Index c = 0; c < w.dim(1); ++c) out << "," << w.at(r, c);
      out << "\n";
    }
  }
  std::cout << "wrote " << row_index << " rows to " << out_csv << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage full-band speech enhancement"};
  app.require_subcommand(1);

  audio::DatasetSpec synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  cmd_synth->add_option("--out", synth.out_dir, "output directory")->required();
  cmd_synth->add_option("--clips", synth.clips, "number of clips");
  cmd_synth->add_option("--snr-min", synth.snr_min_db, "lowest mixture SNR (dB)");
  cmd_synth->add_option("--snr-max", synth.snr_max_db, "highest mixture SNR (dB)");
  cmd_synth->add_option("--duration", synth.duration_s, "clip length (s)");
  cmd_synth->add_option("--seed", synth.seed, "dataset seed");

  std::string train_stage, train_data, train_config, train_ckpt, train_init, train_high;
  int64_t train_steps = 0;
  uint64_t train_seed = 1;
  CLI::App* cmd_train = app.add_subcommand("train", "train stage 1 or jointly");
  cmd_train->add_option("--stage", train_stage, "1 or joint")->required();
  cmd_train->add_option("--data", train_data, "dataset directory")->required();
  cmd_train->add_option("--config", train_config, "model config file")->required();
  cmd_train->add_option("--ckpt", train_ckpt, "output checkpoint")->required();
  cmd_train->add_option("--init-ckpt", train_init, "stage-1 checkpoint for joint training");
  cmd_train->add_option("--steps", train_steps, "optimizer steps")->required();
  cmd_train->add_option("--high-learn", train_high, "on|off (overrides config)");
  cmd_train->add_option("--seed", train_seed, "training seed");

  std::string enh_in, enh_out, enh_ckpt;
  CLI::App* cmd_enh = app.add_subcommand("enhance", "run inference on one wav");
  cmd_enh->add_option("--in", enh_in, "input wav")->required();
  cmd_enh->add_option("--out", enh_out, "output wav")->required();
  cmd_enh->add_option("--ckpt", enh_ckpt, "joint checkpoint")->required();

  std::string eval_clean, eval_noisy, eval_enh, eval_report;
  CLI::App* cmd_eval = app.add_subcommand("eval", "score enhanced clips");
  cmd_eval->add_option("--clean", eval_clean, "reference directory")->required();
  cmd_eval->add_option("--noisy", eval_noisy, "noisy directory")->required();
  cmd_eval->add_option("--enhanced", eval_enh, "enhanced directory")->required();
  cmd_eval->add_option("--report", eval_report, "report CSV path")->required();

  std::string ins_ckpt, ins_out;
  CLI::App* cmd_ins = app.add_subcommand("inspect-scm", "dump compression matrices");
  cmd_ins->add_option("--ckpt", ins_ckpt, "checkpoint")->required();
  cmd_ins->add_option("--out", ins_out, "CSV path")->required();

  double gc_tol = 1e-4;
  CLI::App* cmd_gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  cmd_gc->add_option("--tolerance", gc_tol, "relative tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (*cmd_synth) {
      run_synth(synth);
    } else if (*cmd_train) {
      if (train_stage != "1" && train_stage != "joint") {
        std::cerr << "train: --stage must be 1 or joint\n";
        return 1;
      }
      model::TrainOptions opt;
      opt.stage = model::stage_from_tag(train_stage);
      if (opt.stage == model::Stage::Joint && train_init.empty()) {
        std::cerr << "train: joint training requires --init-ckpt with a stage-1 checkpoint\n";
        return 1;
      }
      model::ModelConfig cfg = model::load_config(train_config);
      if (!train_high.empty()) {
        cfg.high_learn = train_high == "on";
        if (train_high != "on" && train_high != "off") {
          std::cerr << "train: --high-learn must be on or off\n";
          return 1;
        }
      }
      opt.data_dir = train_data;
      opt.steps = train_steps;
      opt.seed = train_seed;
      opt.init_ckpt = train_init;
      opt.out_ckpt = train_ckpt;
      if (cfg.precision == "f64")
        model::train<double>(cfg, opt);
      else
        model::train<float>(cfg, opt);
      std::cout << "checkpoint written to " << train_ckpt << "\n";
    } else if (*cmd_enh) {
      run_enhance(enh_in, enh_out, enh_ckpt);
    } else if (*cmd_eval) {
      const metrics::SdrReport report = metrics::evaluate_set(eval_clean, eval_noisy, eval_enh);
      metrics::write_report_csv(eval_report, report);
      std::cout << "mean si-sdr: noisy " << report.mean_noisy << " dB, enhanced "
                << report.mean_enhanced << " dB, delta " << report.mean_delta << " dB\n";
    } else if (*cmd_ins) {
      run_inspect(ins_ckpt, ins_out);
    } else if (*cmd_gc) {
      const bool ok = model::run_gradient_suite(std::cout, gc_tol);
      return ok ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
