#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scmse::audio {

constexpr int kSampleRate = 48000;
constexpr int kMinSamples = 1200;  // one analysis window

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  int64_t length() const { return static_cast<int64_t>(samples.size()); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Validates rate, finiteness and minimum length; throws on violation.
void validate_clip(const AudioClip& clip);

enum class WavFormat { Pcm16, Float32 };

/// Reads a RIFF/WAVE file. Accepts mono PCM16 or IEEE float32 at 48 kHz;
/// PCM16 samples are scaled by 1/32768.
AudioClip read_wav(const std::string& path);

void write_wav(const std::string& path, const AudioClip& clip,
               WavFormat format = WavFormat::Float32);

enum class ClipKind { Speechlike, White, Pink };

ClipKind clip_kind_from_string(const std::string& name);
std::string to_string(ClipKind kind);

/// Deterministic synthetic clip. Speechlike: 3-6 harmonics of a random
/// f0 in [80, 300] Hz under slow amplitude modulation. White: flat spectrum.
/// Pink: -3 dB/octave power slope. Peak amplitude <= 0.9 for all kinds.
AudioClip synth_clip(ClipKind kind, double duration_s, uint64_t seed);

struct Mixture {
  AudioClip noisy;
  AudioClip scaled_noise;  // noisy - scaled_noise is the (jointly scaled) clean target
};

/// Scales noise so that 10*log10(P_clean / P_noise) == snr_db, then adds it
/// to clean. If the sum clips, the whole mixture is rescaled to peak 0.99,
/// which preserves the SNR. Noise is looped or cut (seeded offset) to the
/// clean length first.
Mixture mix_at_snr(const AudioClip& clean, const AudioClip& noise, double snr_db,
                   uint64_t seed = 0);

double signal_power(const std::vector<double>& x);

struct MixtureRecipe {
  std::string clean_id;
  std::string noise_id;
  double snr_db = 0.0;
  uint64_t seed = 0;
};

/// recipes.csv with header clean_id,noise_id,snr_db,seed.
std::vector<MixtureRecipe> read_recipes(const std::string& path);
void write_recipes(const std::string& path, const std::vector<MixtureRecipe>& recipes);

struct DatasetSpec {
  std::string out_dir;
  int clips = 16;
  double snr_min_db = -5.0;
  double snr_max_db = 15.0;
  double duration_s = 1.0;
  uint64_t seed = 1;
};

/// Writes the dataset layout `clean/`, `noise/`, `recipes.csv` plus
/// materialized `noisy/` and `ref/` mixtures (ref is the jointly scaled
/// clean target). Speechlike clean clips against alternating white/pink
/// noise, SNRs spread across [snr_min, snr_max].
void synthesize_dataset(const DatasetSpec& spec);

}  // namespace scmse::audio
