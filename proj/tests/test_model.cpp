#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scmse/metrics.hpp"
#include "scmse/model/gradsuite.hpp"
#include "scmse/model/train.hpp"

using namespace scmse;
using diff::ParameterStore;
using diff::Tape;
using diff::Var;
namespace fs = std::filesystem;

namespace {

Tensor<double> randn(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

dsp::ComplexSpectrogram random_spec(Index frames, Index bins, uint64_t seed) {
  Rng rng(seed);
  dsp::ComplexSpectrogram spec;
  spec.data.resize(frames, bins);
  for (Eigen::Index i = 0; i < spec.data.size(); ++i)
    spec.data.data()[i] = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
  return spec;
}

/// Fresh micro-model store + a mask forward on given magnitudes.
struct MicroMhan {
  model::ModelConfig cfg = model::micro_config();
  ParameterStore<double> store;
  MicroMhan() { model::init_mhan_parameters(store, cfg); }

  Tensor<double> mask_of(const Tensor<double>& mags) {
    Tape<double> tape;
    return model::mhan_forward(tape, store, cfg, tape.input(mags, false)).value();
  }
};

std::string temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::create_directories(dir);
  return dir.string();
}

/// Tiny training set in the documented dataset layout.
void write_micro_dataset(const std::string& dir, int clips, double seconds) {
  fs::create_directories(fs::path(dir) / "clean");
  fs::create_directories(fs::path(dir) / "noise");
  std::vector<audio::MixtureRecipe> recipes;
  for (int i = 0; i < clips; ++i) {
    const std::string id = "c" + std::to_string(i);
    audio::write_wav((fs::path(dir) / "clean" / (id + ".wav")).string(),
                     audio::synth_clip(audio::ClipKind::Speechlike, seconds, 1000 + i));
    audio::write_wav((fs::path(dir) / "noise" / (id + ".wav")).string(),
                     audio::synth_clip(i % 2 ? audio::ClipKind::Pink : audio::ClipKind::White,
                                       seconds, 2000 + i));
    recipes.push_back({id, id, 5.0 - i, static_cast<uint64_t>(i)});
  }
  audio::write_recipes((fs::path(dir) / "recipes.csv").string(), recipes);
}

}  // namespace

TEST_CASE("mask stays in the open unit interval and is frame-stationary on equal frames") {
  MicroMhan m;
  const Index frames = 5;
  Tensor<double> zeros({frames, m.cfg.bins()});
  const Tensor<double> mask = m.mask_of(zeros);
  for (Index i = 0; i < mask.numel(); ++i) {
    CHECK(mask[i] > 0.0);
    CHECK(mask[i] < 1.0);
  }
  // identical frames + causal attention with no positional encoding: every
  // frame averages the same value, so rows match frame 0
  for (Index t = 1; t < frames; ++t)
    for (Index j = 0; j < m.cfg.bins(); ++j)
      CHECK(mask.at(t, j) == doctest::Approx(mask.at(0, j)).epsilon(1e-9));
  // deterministic across runs
  const Tensor<double> again = m.mask_of(zeros);
  for (Index i = 0; i < mask.numel(); ++i) CHECK(again[i] == mask[i]);
}

TEST_CASE("mask is strictly causal: later frames cannot touch earlier output") {
  MicroMhan m;
  Tensor<double> mags = randn({6, m.cfg.bins()}, 3, 0.0, 2.0);
  const Tensor<double> base = m.mask_of(mags);
  Tensor<double> poked = mags;
  for (Index j = 0; j < m.cfg.bins(); ++j) poked.at(4, j) += 0.5;
  const Tensor<double> after = m.mask_of(poked);
  for (Index t = 0; t < 4; ++t)
    for (Index j = 0; j < m.cfg.bins(); ++j) CHECK(after.at(t, j) == base.at(t, j));
  bool changed = false;
  for (Index j = 0; j < m.cfg.bins(); ++j) changed = changed || after.at(4, j) != base.at(4, j);
  CHECK(changed);
}

TEST_CASE("mhan rejects the wrong bin count") {
  MicroMhan m;
  Tape<double> tape;
  CHECK_THROWS_WITH_AS(
      model::mhan_forward(tape, m.store, m.cfg, tape.input(randn({3, 9}, 4), false)),
      doctest::Contains("bins"), std::invalid_argument);
}

TEST_CASE("apply_smm scales planes and preserves phase") {
  dsp::ComplexSpectrogram x = random_spec(4, 601, 5);
  x.data(0, 0) = {2.0, 2.0};
  dsp::RealMat mask = dsp::RealMat::Constant(4, 601, 0.5);
  const dsp::ComplexSpectrogram y = model::apply_smm(mask, x);
  CHECK(y.data(0, 0).real() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.data(0, 0).imag() == doctest::Approx(1.0).epsilon(1e-12));
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 601; j += 59)
      if (std::abs(x.data(i, j)) > 0.0)
        CHECK(std::abs(std::arg(y.data(i, j)) - std::arg(x.data(i, j))) < 1e-9);
  // mask of ones is the identity
  const dsp::ComplexSpectrogram id = model::apply_smm(dsp::RealMat::Ones(4, 601), x);
  CHECK(((id.data - x.data).cwiseAbs().maxCoeff()) == 0.0);
  CHECK_THROWS_AS(model::apply_smm(dsp::RealMat::Ones(4, 600), x), std::invalid_argument);
}

TEST_CASE("dpcrn forward keeps the spectrogram geometry") {
  const model::ModelConfig cfg = model::micro_config();
  ParameterStore<double> store;
  model::init_dpcrn_parameters(store, cfg);
  Tape<double> tape;
  model::ComplexPair<double> out = model::dpcrn_forward(
      tape, store, cfg, tape.input(randn({6, cfg.bins()}, 7), false),
      tape.input(randn({6, cfg.bins()}, 8), false), /*training=*/false);
  CHECK(out.re.value().shape() == Shape{6, cfg.bins()});
  CHECK(out.im.value().shape() == Shape{6, cfg.bins()});
  CHECK(out.re.value().all_finite());
}

TEST_CASE("dpcrn inference is causal within 1e-6") {
  const model::ModelConfig cfg = model::micro_config();
  ParameterStore<double> store;
  model::init_dpcrn_parameters(store, cfg);
  const Index frames = 7, poke = 4;
  Tensor<double> re = randn({frames, cfg.bins()}, 9);
  Tensor<double> im = randn({frames, cfg.bins()}, 10);

  auto run = [&](const Tensor<double>& r, const Tensor<double>& i) {
    ParameterStore<double> fresh = store;  // keep running stats untouched
    Tape<double> tape;
    auto out =
        model::dpcrn_forward(tape, fresh, cfg, tape.input(r, false), tape.input(i, false), false);
    return std::pair<Tensor<double>, Tensor<double>>{out.re.value(), out.im.value()};
  };
  const auto base = run(re, im);
  Tensor<double> re2 = re, im2 = im;
  for (Index j = 0; j < cfg.bins(); ++j) {
    re2.at(poke, j) += 0.25;
    im2.at(poke, j) -= 0.25;
  }
  const auto poked = run(re2, im2);
  double max_before = 0.0, max_after = 0.0;
  for (Index t = 0; t < frames; ++t)
    for (Index j = 0; j < cfg.bins(); ++j) {
      const double d = std::abs(poked.first.at(t, j) - base.first.at(t, j)) +
                       std::abs(poked.second.at(t, j) - base.second.at(t, j));
      if (t < poke)
        max_before = std::max(max_before, d);
      else if (t >= poke)
        max_after = std::max(max_after, d);
    }
  CHECK(max_before < 1e-6);
  CHECK(max_after > 1e-6);  // the perturbation does reach its own frame
}

TEST_CASE("zero input stays finite in inference mode") {
  const model::ModelConfig cfg = model::micro_config();
  ParameterStore<double> store;
  model::init_dpcrn_parameters(store, cfg);
  Tape<double> tape;
  const Index frames = 4;
  auto out = model::dpcrn_forward(tape, store, cfg,
                                  tape.input(Tensor<double>({frames, cfg.bins()}), false),
                                  tape.input(Tensor<double>({frames, cfg.bins()}), false), false);
  CHECK(out.re.value().all_finite());
  CHECK(out.im.value().all_finite());
}

TEST_CASE("loss identities") {
  const dsp::ComplexSpectrogram s = random_spec(3, 601, 11);
  CHECK(model::loss_mag(s, s) == 0.0);
  CHECK(model::loss_ri(s, s) == 0.0);
  CHECK(model::loss_stage1(s, s) == 0.0);
  const model::LossBreakdown b = model::loss_stage2(s, s, s);
  CHECK(b.l2 == 0.0);
}

TEST_CASE("single-bin magnitude loss evaluates the cube-root difference") {
  dsp::ComplexSpectrogram est, ref;
  est.data = dsp::ComplexMat::Zero(1, 601);
  ref.data = dsp::ComplexMat::Zero(1, 601);
  ref.data(0, 0) = {8.0, 0.0};  // |S|^(1/3) = 2
  est.data(0, 0) = {0.0, 1.0};  // |S~|^(1/3) = 1
  CHECK(model::loss_mag(est, ref) == doctest::Approx(1.0).epsilon(1e-12));

  // compressed planes: (2-0)^2 + (0-2)^2 = 8
  est.data(0, 0) = {0.0, 8.0};
  CHECK(model::loss_ri(est, ref) == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("losses are nonnegative and loss_ri is symmetric") {
  const dsp::ComplexSpectrogram a = random_spec(2, 601, 12);
  const dsp::ComplexSpectrogram b = random_spec(2, 601, 13);
  CHECK(model::loss_mag(a, b) >= 0.0);
  CHECK(model::loss_ri(a, b) == doctest::Approx(model::loss_ri(b, a)).epsilon(1e-12));
}

TEST_CASE("stage losses compose exactly") {
  const dsp::ComplexSpectrogram mha = random_spec(2, 601, 14);
  const dsp::ComplexSpectrogram dpc = random_spec(2, 601, 15);
  const dsp::ComplexSpectrogram ref = random_spec(2, 601, 16);
  CHECK(model::loss_stage1(mha, ref) == model::loss_mag(mha, ref));
  const model::LossBreakdown b = model::loss_stage2(mha, dpc, ref);
  CHECK(b.l1 == b.l_mag_mha);
  CHECK(std::abs(b.l2 - (b.l_mag_mha + b.l_mag_dpcrn + b.l_ri_dpcrn)) < 1e-9 * b.l2);
}

TEST_CASE("joint loss reaches every trainable parameter") {
  const model::ModelConfig cfg = model::micro_config();
  ParameterStore<double> store;
  model::init_parameters(store, cfg, model::Stage::Joint);
  store.zero_grads();

  Tape<double> tape;
  const Index frames = 5;
  Tensor<double> x_re = randn({frames, cfg.bins()}, 17, 1.0, 2.0);
  Tensor<double> x_im = randn({frames, cfg.bins()}, 18, 1.0, 2.0);
  Tensor<double> x_mag({frames, cfg.bins()});
  for (Index i = 0; i < x_mag.numel(); ++i) x_mag[i] = std::hypot(x_re[i], x_im[i]);

  Var<double> mask = model::mhan_forward(tape, store, cfg, tape.constant(x_mag));
  Var<double> er = diff::mul(mask, tape.constant(x_re));
  Var<double> ei = diff::mul(mask, tape.constant(x_im));
  Var<double> l1 = model::loss_mag_graph(tape, er, ei,
                                         randn({frames, cfg.bins()}, 19, 0.5, 1.5), 1.0 / 3.0);
  auto refined = model::dpcrn_forward(tape, store, cfg, er, ei, true);
  Var<double> l2m = model::loss_mag_graph(tape, refined.re, refined.im,
                                          randn({frames, cfg.bins()}, 20, 0.5, 1.5), 1.0 / 3.0);
  Var<double> l2r =
      model::loss_ri_graph(tape, refined.re, refined.im, randn({frames, cfg.bins()}, 21),
                           randn({frames, cfg.bins()}, 22), 1.0 / 3.0);
  tape.backward(diff::add(l1, diff::add(l2m, l2r)));

  for (const auto& [name, e] : store) {
    if (e.state_only) continue;
    double norm = 0.0;
    for (Index i = 0; i < e.grad.numel(); ++i) norm += std::abs(e.grad[i]);
    INFO(name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("training is deterministic and refuses joint without stage 1") {
  const std::string data = temp_dir("scmse_train_micro");
  write_micro_dataset(data, 2, 0.5);

  model::ModelConfig cfg = model::micro_config();
  cfg.stft.win_len = cfg.stft.fft_len = 1200;  // real front end, tiny widths
  cfg.stft.hop = 600;
  cfg.knee_hz = 1000.0;
  cfg.compressed_bins = 64;
  cfg.mhan_d_model = 64;
  cfg.frames_per_item = 8;
  cfg.precision = "f64";
  cfg.validate();

  model::TrainOptions opt;
  opt.data_dir = data;
  opt.stage = model::Stage::One;
  opt.steps = 3;
  opt.seed = 5;
  opt.out_ckpt = (fs::path(data) / "s1.ckpt").string();
  opt.quiet = true;

  const model::TrainSummary a = model::train<double>(cfg, opt);
  std::ifstream log_a(opt.out_ckpt + ".log.csv");
  std::stringstream text_a;
  text_a << log_a.rdbuf();

  const model::TrainSummary b = model::train<double>(cfg, opt);
  std::ifstream log_b(opt.out_ckpt + ".log.csv");
  std::stringstream text_b;
  text_b << log_b.rdbuf();
  CHECK(a.final_total == b.final_total);  // bitwise in double
  CHECK(text_a.str() == text_b.str());

  // joint without an init checkpoint is refused
  model::TrainOptions joint = opt;
  joint.stage = model::Stage::Joint;
  joint.init_ckpt = "";
  CHECK_THROWS_WITH_AS(model::train<double>(cfg, joint),
                       doctest::Contains("stage-1 checkpoint"), std::runtime_error);

  // and a joint checkpoint is not a valid stage-1 init
  joint.init_ckpt = opt.out_ckpt;
  joint.out_ckpt = (fs::path(data) / "joint.ckpt").string();
  joint.steps = 2;
  CHECK_NOTHROW(model::train<double>(cfg, joint));
  model::TrainOptions bad = joint;
  bad.init_ckpt = joint.out_ckpt;  // joint checkpoint as init
  CHECK_THROWS_WITH_AS(model::train<double>(cfg, bad),
                       doctest::Contains("stage: joint, need 1"), std::runtime_error);
}

TEST_CASE("high-learn keeps identity rows frozen through real training") {
  const std::string data = temp_dir("scmse_train_hl");
  write_micro_dataset(data, 2, 0.5);

  model::ModelConfig cfg = model::micro_config();
  cfg.stft.win_len = cfg.stft.fft_len = 1200;
  cfg.stft.hop = 600;
  cfg.knee_hz = 1000.0;
  cfg.compressed_bins = 64;
  cfg.mhan_d_model = 64;
  cfg.frames_per_item = 8;
  cfg.precision = "f64";
  cfg.high_learn = true;
  cfg.validate();
  const int low = cfg.low_bins();
  CHECK(low == 26);

  ParameterStore<double> reference;
  model::init_mhan_parameters(reference, cfg);

  model::TrainOptions opt;
  opt.data_dir = data;
  opt.stage = model::Stage::One;
  opt.steps = 5;
  opt.seed = 6;
  opt.out_ckpt = (fs::path(data) / "hl.ckpt").string();
  opt.quiet = true;
  model::train<double>(cfg, opt);

  ParameterStore<double> trained;
  diff::AdamState adam;
  diff::load_checkpoint(opt.out_ckpt, trained, adam);
  const auto& w0 = reference.entry("mhan.scm.weight").value;
  const auto& w1 = trained.entry("mhan.scm.weight").value;
  bool low_same = true, high_moved = false;
  for (Index r = 0; r < low; ++r)
    for (Index c = 0; c < cfg.bins(); ++c) low_same = low_same && w0.at(r, c) == w1.at(r, c);
  for (Index r = low; r < cfg.compressed_bins; ++r)
    for (Index c = 0; c < cfg.bins(); ++c) high_moved = high_moved || w0.at(r, c) != w1.at(r, c);
  CHECK(low_same);
  CHECK(high_moved);
}

TEST_CASE("enhance on a joint checkpoint: finiteness, length, zero input") {
  const std::string data = temp_dir("scmse_enhance");
  write_micro_dataset(data, 2, 0.5);

  model::ModelConfig cfg = model::micro_config();
  cfg.stft.win_len = cfg.stft.fft_len = 1200;
  cfg.stft.hop = 600;
  cfg.knee_hz = 1000.0;
  cfg.compressed_bins = 64;
  cfg.mhan_d_model = 64;
  cfg.frames_per_item = 8;
  cfg.precision = "f64";
  cfg.validate();

  model::TrainOptions s1;
  s1.data_dir = data;
  s1.stage = model::Stage::One;
  s1.steps = 2;
  s1.seed = 7;
  s1.out_ckpt = (fs::path(data) / "s1.ckpt").string();
  s1.quiet = true;
  model::train<double>(cfg, s1);
  model::TrainOptions joint = s1;
  joint.stage = model::Stage::Joint;
  joint.init_ckpt = s1.out_ckpt;
  joint.out_ckpt = (fs::path(data) / "joint.ckpt").string();
  model::train<double>(cfg, joint);

  ParameterStore<double> store;
  model::init_parameters(store, cfg, model::Stage::Joint);
  diff::load_checkpoint_into<double>(joint.out_ckpt, store, "");

  const audio::AudioClip noisy = audio::synth_clip(audio::ClipKind::White, 0.53, 8);
  const audio::AudioClip out = model::enhance_clip(store, cfg, noisy);
  CHECK(out.samples.size() == noisy.samples.size());
  for (double s : out.samples) CHECK(std::isfinite(s));

  // zero input maps through the mask to a zero pre-enhanced spectrum, and a
  // fresh refinement stage (zero biases, unit running stats) keeps it zero;
  // trained running statistics may shift silence, so probe the fresh model
  ParameterStore<double> fresh;
  model::init_parameters(fresh, cfg, model::Stage::Joint);
  audio::AudioClip silence;
  silence.samples.assign(24000, 0.0);
  const audio::AudioClip quiet = model::enhance_clip(fresh, cfg, silence);
  double rms = 0.0;
  for (double s : quiet.samples) rms += s * s;
  rms = std::sqrt(rms / quiet.samples.size());
  CHECK(rms <= 1e-3);
}

TEST_CASE("model parameter counts are reported") {
  ParameterStore<float> store;
  model::ModelConfig cfg;  // full width
  model::init_parameters(store, cfg, model::Stage::Joint);
  const int64_t params = store.count_parameters();
  // full-width configuration lands close to five million weights
  CHECK(params > 4'500'000);
  CHECK(params < 5'600'000);
  CHECK(store.count_trainable() < params);  // high-learn freezes identity rows
}
