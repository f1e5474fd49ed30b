#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scmse/dsp.hpp"
#include "scmse/scm.hpp"

namespace scmse::model {

/// Everything the two networks and their training need; serialized as plain
/// `key = value` lines. Defaults are the full-width configuration.
struct ModelConfig {
  dsp::StftConfig stft;
  double gamma = 1.0 / 3.0;

  // spectral compression
  int compressed_bins = 256;  // F_c
  double knee_hz = 5000.0;
  double warp_f_max = 24000.0;

  // mask-estimation network
  int mhan_blocks = 5;
  int mhan_heads = 8;
  int mhan_d_model = 256;  // must equal compressed_bins
  int mhan_ffn_hidden = 1024;

  // refinement network; kernels/strides as (freq, time)
  std::vector<int> dpcrn_channels = {16, 32, 48, 64, 80};
  std::vector<std::pair<int, int>> dpcrn_kernels = {{5, 2}, {3, 2}, {3, 2}, {3, 2}, {2, 1}};
  std::vector<std::pair<int, int>> dpcrn_strides = {{2, 1}, {1, 1}, {1, 1}, {1, 1}, {1, 1}};
  int dpcrn_hidden = 127;

  // training
  bool high_learn = true;
  int batch_size = 2;
  int frames_per_item = 48;
  double warmup_c = 128.0;
  double warmup_steps = 10000.0;
  std::string precision = "f32";
  uint64_t init_seed = 1;

  int bins() const { return stft.bins(); }
  double bin_hz() const { return stft.bin_hz(); }
  int low_bins() const { return scm::bin_of_knee(bin_hz(), knee_hz); }
  scm::WarpParams warp() const { return {knee_hz, warp_f_max}; }

  void validate() const;

  /// Fixed-order `key = value` dump; basis of the config hash.
  std::string canonical() const;
  std::string hash() const;
};

ModelConfig parse_config(const std::string& text);
ModelConfig load_config(const std::string& path);
void save_config(const std::string& path, const ModelConfig& cfg);

/// Reduced-width preset used by the desk-scale tests: F_c=64, B=2, channels
/// [8,8,8,8,8] on the unchanged 1200-point front end. The knee drops to
/// 1 kHz so the identity band still fits under F_c.
ModelConfig reduced_width_config();

/// Tiny bins/width preset for finite-difference checking of the full model.
ModelConfig micro_config();

}  // namespace scmse::model
