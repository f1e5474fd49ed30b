#include "scmse/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "scmse/rng.hpp"

namespace scmse::audio {

namespace {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail("wav: truncated file");
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string read_tag(std::istream& in) {
  char tag[4];
  in.read(tag, 4);
  if (!in) fail("wav: truncated file");
  return std::string(tag, 4);
}

}  // namespace

void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate)
    fail("clip: sample_rate " + std::to_string(clip.sample_rate) +
         " != " + std::to_string(kSampleRate));
  if (clip.length() < kMinSamples)
    fail("clip: length " + std::to_string(clip.length()) + " shorter than one frame (" +
         std::to_string(kMinSamples) + " samples)");
  for (double s : clip.samples)
    if (!std::isfinite(s)) fail("clip: non-finite sample");
}

AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("wav: cannot open " + path);

  if (read_tag(in) != "RIFF") fail("wav: missing RIFF header in " + path);
  read_le<uint32_t>(in);  // riff size
  if (read_tag(in) != "WAVE") fail("wav: not a WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<char> payload;

  while (in.peek() != EOF) {
    std::string tag = read_tag(in);
    uint32_t size = read_le<uint32_t>(in);
    if (tag == "fmt ") {
      format = read_le<uint16_t>(in);
      channels = read_le<uint16_t>(in);
      rate = read_le<uint32_t>(in);
      read_le<uint32_t>(in);  // byte rate
      read_le<uint16_t>(in);  // block align
      bits = read_le<uint16_t>(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (tag == "data") {
      payload.resize(size);
      in.read(payload.data(), size);
      if (!in) fail("wav: truncated data chunk in " + path);
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }

  if (!have_fmt) fail("wav: missing fmt chunk in " + path);
  if (payload.empty()) fail("wav: missing data chunk in " + path);
  if (channels != 1)
    fail("wav: " + std::to_string(channels) + " channels, only mono supported: " + path);
  if (rate != kSampleRate)
    fail("wav: sample_rate " + std::to_string(rate) + " != " + std::to_string(kSampleRate));

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    size_t n = payload.size() / 2;
    clip.samples.resize(n);
    const int16_t* p = reinterpret_cast<const int16_t*>(payload.data());
    for (size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<double>(p[i]) / 32768.0;
  } else if (format == 3 && bits == 32) {
    size_t n = payload.size() / 4;
    clip.samples.resize(n);
    const float* p = reinterpret_cast<const float*>(payload.data());
    for (size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<double>(p[i]);
  } else {
    fail("wav: unsupported format " + std::to_string(format) + "/" + std::to_string(bits) +
         " bits (want PCM16 or float32): " + path);
  }
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip, WavFormat format) {
  validate_clip(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("wav: cannot write " + path);

  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  const uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
  const uint16_t fmt_code = format == WavFormat::Pcm16 ? 1 : 3;
  const uint32_t bytes = n * (bits / 8);

  out.write("RIFF", 4);
  write_le<uint32_t>(out, 36 + bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<uint32_t>(out, 16);
  write_le<uint16_t>(out, fmt_code);
  write_le<uint16_t>(out, 1);
  write_le<uint32_t>(out, kSampleRate);
  write_le<uint32_t>(out, kSampleRate * (bits / 8u));
  write_le<uint16_t>(out, static_cast<uint16_t>(bits / 8));
  write_le<uint16_t>(out, bits);
  out.write("data", 4);
  write_le<uint32_t>(out, bytes);

  if (format == WavFormat::Pcm16) {
    for (double s : clip.samples) {
      double q = std::round(s * 32768.0);
      q = std::clamp(q, -32768.0, 32767.0);
      write_le<int16_t>(out, static_cast<int16_t>(q));
    }
  } else {
    for (double s : clip.samples) write_le<float>(out, static_cast<float>(s));
  }
  if (!out) fail("wav: write failed for " + path);
}

ClipKind clip_kind_from_string(const std::string& name) {
  if (name == "speechlike") return ClipKind::Speechlike;
  if (name == "white") return ClipKind::White;
  if (name == "pink") return ClipKind::Pink;
  fail("synth: unknown clip kind '" + name + "'");
  return ClipKind::White;
}

std::string to_string(ClipKind kind) {
  switch (kind) {
    case ClipKind::Speechlike: return "speechlike";
    case ClipKind::White: return "white";
    case ClipKind::Pink: return "pink";
  }
  return "?";
}

namespace {

void normalize_peak(std::vector<double>& x, double peak) {
  double mx = 0.0;
  for (double v : x) mx = std::max(mx, std::abs(v));
  if (mx > 0.0) {
    double g = peak / mx;
    for (double& v : x) v *= g;
  }
}

std::vector<double> pink_noise(int64_t n, Rng& rng) {
  // White noise shaped to 1/f power in the frequency domain.
  std::vector<std::complex<double>> spec(static_cast<size_t>(n));
  std::vector<double> white(static_cast<size_t>(n));
  for (auto& v : white) v = rng.normal();

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, white);
  freq[0] = 0.0;
  for (int64_t k = 1; k < n; ++k) {
    int64_t sym = std::min(k, n - k);  // physical frequency index
    freq[static_cast<size_t>(k)] /= std::sqrt(static_cast<double>(sym));
  }
  std::vector<double> out;
  fft.inv(out, freq);
  return out;
}

}  // namespace

AudioClip synth_clip(ClipKind kind, double duration_s, uint64_t seed) {
  if (duration_s < 0.5 || duration_s > 10.0)
    fail("synth: duration " + std::to_string(duration_s) + " outside [0.5, 10] s");
  const int64_t n = static_cast<int64_t>(std::llround(duration_s * kSampleRate));
  Rng rng(seed, "synth/" + to_string(kind));

  AudioClip clip;
  clip.samples.resize(static_cast<size_t>(n));

  switch (kind) {
    case ClipKind::White: {
      for (auto& v : clip.samples) v = rng.uniform(-0.9, 0.9);
      break;
    }
    case ClipKind::Pink: {
      clip.samples = pink_noise(n, rng);
      normalize_peak(clip.samples, 0.85);
      break;
    }
    case ClipKind::Speechlike: {
      const int harmonics = 3 + static_cast<int>(rng.below(4));
      const double f0 = rng.uniform(80.0, 300.0);
      const double am_rate = rng.uniform(1.0, 4.0);
      const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
      std::vector<double> phase(static_cast<size_t>(harmonics));
      for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
      for (int64_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / kSampleRate;
        double am = 0.55 + 0.45 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
        double s = 0.0;
        for (int h = 0; h < harmonics; ++h)
          s += std::sin(2.0 * M_PI * f0 * (h + 1) * t + phase[static_cast<size_t>(h)]) / (h + 1);
        clip.samples[static_cast<size_t>(i)] = am * s;
      }
      normalize_peak(clip.samples, 0.8);
      break;
    }
  }
  return clip;
}

double signal_power(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return x.empty() ? 0.0 : e / static_cast<double>(x.size());
}

Mixture mix_at_snr(const AudioClip& clean, const AudioClip& noise, double snr_db, uint64_t seed) {
  if (snr_db < -5.0 || snr_db > 15.0)
    fail("mix: snr_db " + std::to_string(snr_db) + " outside [-5, 15]");
  const size_t n = clean.samples.size();
  if (n == 0) fail("mix: empty clean signal");
  if (noise.samples.empty()) fail("mix: empty noise signal");

  // Fit noise to the clean length: tile if shorter, then cut from a seeded offset.
  std::vector<double> fitted(n);
  const size_t m = noise.samples.size();
  Rng rng(seed, "mix");
  size_t offset = m > n ? static_cast<size_t>(rng.below(m - n + 1)) : 0;
  for (size_t i = 0; i < n; ++i) fitted[i] = noise.samples[(offset + i) % m];

  const double p_clean = signal_power(clean.samples);
  const double p_noise = signal_power(fitted);
  if (p_clean <= 0.0) fail("mix: silent clean signal");
  if (p_noise <= 0.0) fail("mix: silent noise signal");

  const double gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));

  Mixture mix;
  mix.noisy.samples.resize(n);
  mix.scaled_noise.samples.resize(n);
  double peak = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double sn = gain * fitted[i];
    mix.scaled_noise.samples[i] = sn;
    mix.noisy.samples[i] = clean.samples[i] + sn;
    peak = std::max(peak, std::abs(mix.noisy.samples[i]));
  }
  if (peak > 1.0) {
    double g = 0.99 / peak;  // joint rescale keeps the SNR
    for (size_t i = 0; i < n; ++i) {
      mix.noisy.samples[i] *= g;
      mix.scaled_noise.samples[i] *= g;
    }
  }
  return mix;
}

std::vector<MixtureRecipe> read_recipes(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("recipes: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail("recipes: empty file " + path);
  if (line != "clean_id,noise_id,snr_db,seed")
    fail("recipes: unexpected header '" + line + "' in " + path);
  std::vector<MixtureRecipe> recipes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    MixtureRecipe r;
    std::string snr, seed;
    if (!std::getline(row, r.clean_id, ',') || !std::getline(row, r.noise_id, ',') ||
        !std::getline(row, snr, ',') || !std::getline(row, seed, ','))
      fail("recipes: malformed row '" + line + "'");
    r.snr_db = std::stod(snr);
    r.seed = std::stoull(seed);
    recipes.push_back(std::move(r));
  }
  return recipes;
}

void write_recipes(const std::string& path, const std::vector<MixtureRecipe>& recipes) {
  std::ofstream out(path);
  if (!out) fail("recipes: cannot write " + path);
  out << "clean_id,noise_id,snr_db,seed\n";
  for (const auto& r : recipes)
    out << r.clean_id << "," << r.noise_id << "," << r.snr_db << "," << r.seed << "\n";
}

void synthesize_dataset(const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  if (spec.snr_min_db > spec.snr_max_db) fail("synth: snr_min > snr_max");
  for (const char* sub : {"clean", "noise", "noisy", "ref"})
    fs::create_directories(fs::path(spec.out_dir) / sub);

  Rng rng(spec.seed, "synth-set");
  std::vector<MixtureRecipe> recipes;
  for (int i = 0; i < spec.clips; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "clip_%03d", i);
    const ClipKind noise_kind = i % 2 == 0 ? ClipKind::White : ClipKind::Pink;

    MixtureRecipe r;
    r.clean_id = id;
    r.noise_id = id;
    r.snr_db = spec.clips > 1 ? spec.snr_min_db + (spec.snr_max_db - spec.snr_min_db) * i /
                                                      (spec.clips - 1)
                              : 0.5 * (spec.snr_min_db + spec.snr_max_db);
    r.seed = rng.next_u64();

    const AudioClip clean = synth_clip(ClipKind::Speechlike, spec.duration_s, r.seed ^ 0x5eed);
    const AudioClip noise = synth_clip(noise_kind, spec.duration_s, r.seed ^ 0x0153);
    write_wav((fs::path(spec.out_dir) / "clean" / (r.clean_id + ".wav")).string(), clean);
    write_wav((fs::path(spec.out_dir) / "noise" / (r.noise_id + ".wav")).string(), noise);

    const Mixture mix = mix_at_snr(clean, noise, r.snr_db, r.seed);
    AudioClip ref;
    ref.samples.resize(mix.noisy.samples.size());
    for (size_t k = 0; k < ref.samples.size(); ++k)
      ref.samples[k] = mix.noisy.samples[k] - mix.scaled_noise.samples[k];
    write_wav((fs::path(spec.out_dir) / "noisy" / (r.clean_id + ".wav")).string(), mix.noisy);
    write_wav((fs::path(spec.out_dir) / "ref" / (r.clean_id + ".wav")).string(), ref);
    recipes.push_back(std::move(r));
  }
  write_recipes((fs::path(spec.out_dir) / "recipes.csv").string(), recipes);
}

}  // namespace scmse::audio
