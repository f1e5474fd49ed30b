#include "scmse/model/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "scmse/rng.hpp"

namespace scmse::model {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

/// Accepts plain decimals and fractions like "1/3".
double parse_number(const std::string& s) {
  const auto slash = s.find('/');
  if (slash != std::string::npos)
    return std::stod(trim(s.substr(0, slash))) / std::stod(trim(s.substr(slash + 1)));
  return std::stod(s);
}

bool parse_switch(const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw std::invalid_argument("config: expected on|off, got '" + s + "'");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoi(trim(item)));
  return out;
}

/// "(5,2),(3,2)" -> {{5,2},{3,2}}
std::vector<std::pair<int, int>> parse_pair_list(const std::string& s) {
  std::vector<std::pair<int, int>> out;
  size_t pos = 0;
  while ((pos = s.find('(', pos)) != std::string::npos) {
    const size_t close = s.find(')', pos);
    if (close == std::string::npos) throw std::invalid_argument("config: unbalanced '(' in " + s);
    const std::string body = s.substr(pos + 1, close - pos - 1);
    const size_t comma = body.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument("config: pair needs two entries: (" + body + ")");
    out.emplace_back(std::stoi(trim(body.substr(0, comma))),
                     std::stoi(trim(body.substr(comma + 1))));
    pos = close + 1;
  }
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string fmt_pair_list(const std::vector<std::pair<int, int>>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i)
    os << (i ? "," : "") << "(" << v[i].first << "," << v[i].second << ")";
  return os.str();
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ModelConfig::validate() const {
  stft.validate();
  if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("config: gamma outside (0, 1]");
  if (mhan_d_model != compressed_bins)
    throw std::invalid_argument("config: mhan_d_model must equal compressed_bins (" +
                                std::to_string(mhan_d_model) + " vs " +
                                std::to_string(compressed_bins) + ")");
  if (mhan_d_model % mhan_heads != 0)
    throw std::invalid_argument("config: d_model " + std::to_string(mhan_d_model) +
                                " not divisible by heads " + std::to_string(mhan_heads));
  if (mhan_blocks < 1) throw std::invalid_argument("config: mhan_blocks must be >= 1");
  const int k = low_bins();
  if (!(k < compressed_bins && compressed_bins < bins()))
    throw std::invalid_argument("config: need K < F_c < F, got K=" + std::to_string(k) +
                                " F_c=" + std::to_string(compressed_bins) +
                                " F=" + std::to_string(bins()));
  if (dpcrn_channels.empty() || dpcrn_channels.size() != dpcrn_kernels.size() ||
      dpcrn_channels.size() != dpcrn_strides.size())
    throw std::invalid_argument("config: dpcrn channels/kernels/strides must align");
  if (dpcrn_hidden < 1) throw std::invalid_argument("config: dpcrn_hidden must be >= 1");
  if (batch_size < 1 || frames_per_item < 1)
    throw std::invalid_argument("config: batch_size and frames_per_item must be >= 1");
  if (precision != "f32" && precision != "f64")
    throw std::invalid_argument("config: precision must be f32 or f64");
  warp().validate();
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "win_len = " << stft.win_len << "\n";
  os << "hop = " << stft.hop << "\n";
  os << "fft_len = " << stft.fft_len << "\n";
  os << "gamma = " << fmt_double(gamma) << "\n";
  os << "compressed_bins = " << compressed_bins << "\n";
  os << "knee_hz = " << fmt_double(knee_hz) << "\n";
  os << "warp_f_max = " << fmt_double(warp_f_max) << "\n";
  os << "mhan_blocks = " << mhan_blocks << "\n";
  os << "mhan_heads = " << mhan_heads << "\n";
  os << "mhan_d_model = " << mhan_d_model << "\n";
  os << "mhan_ffn_hidden = " << mhan_ffn_hidden << "\n";
  os << "dpcrn_channels = " << fmt_int_list(dpcrn_channels) << "\n";
  os << "dpcrn_kernels = " << fmt_pair_list(dpcrn_kernels) << "\n";
  os << "dpcrn_strides = " << fmt_pair_list(dpcrn_strides) << "\n";
  os << "dpcrn_hidden = " << dpcrn_hidden << "\n";
  os << "high_learn = " << (high_learn ? "on" : "off") << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "frames_per_item = " << frames_per_item << "\n";
  os << "warmup_c = " << fmt_double(warmup_c) << "\n";
  os << "warmup_steps = " << fmt_double(warmup_steps) << "\n";
  os << "precision = " << precision << "\n";
  os << "init_seed = " << init_seed << "\n";
  return os.str();
}

std::string ModelConfig::hash() const {
  std::ostringstream os;
  os << std::hex << fnv1a64(canonical());
  return os.str();
}

ModelConfig parse_config(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not key = value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "win_len") cfg.stft.win_len = std::stoi(value);
    else if (key == "hop") cfg.stft.hop = std::stoi(value);
    else if (key == "fft_len") cfg.stft.fft_len = std::stoi(value);
    else if (key == "gamma") cfg.gamma = parse_number(value);
    else if (key == "compressed_bins") cfg.compressed_bins = std::stoi(value);
    else if (key == "knee_hz") cfg.knee_hz = parse_number(value);
    else if (key == "warp_f_max") cfg.warp_f_max = parse_number(value);
    else if (key == "mhan_blocks") cfg.mhan_blocks = std::stoi(value);
    else if (key == "mhan_heads") cfg.mhan_heads = std::stoi(value);
    else if (key == "mhan_d_model") cfg.mhan_d_model = std::stoi(value);
    else if (key == "mhan_ffn_hidden") cfg.mhan_ffn_hidden = std::stoi(value);
    else if (key == "dpcrn_channels") cfg.dpcrn_channels = parse_int_list(value);
    else if (key == "dpcrn_kernels") cfg.dpcrn_kernels = parse_pair_list(value);
    else if (key == "dpcrn_strides") cfg.dpcrn_strides = parse_pair_list(value);
    else if (key == "dpcrn_hidden") cfg.dpcrn_hidden = std::stoi(value);
    else if (key == "high_learn") cfg.high_learn = parse_switch(value);
    else if (key == "batch_size") cfg.batch_size = std::stoi(value);
    else if (key == "frames_per_item") cfg.frames_per_item = std::stoi(value);
    else if (key == "warmup_c") cfg.warmup_c = parse_number(value);
    else if (key == "warmup_steps") cfg.warmup_steps = parse_number(value);
    else if (key == "precision") cfg.precision = value;
    else if (key == "init_seed") cfg.init_seed = std::stoull(value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void save_config(const std::string& path, const ModelConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << cfg.canonical();
}

ModelConfig reduced_width_config() {
  ModelConfig cfg;
  cfg.compressed_bins = 64;
  cfg.mhan_d_model = 64;
  cfg.mhan_blocks = 2;
  cfg.mhan_ffn_hidden = 256;
  cfg.knee_hz = 1000.0;
  cfg.dpcrn_channels = {8, 8, 8, 8, 8};
  cfg.validate();
  return cfg;
}

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.stft.win_len = 32;
  cfg.stft.hop = 16;
  cfg.stft.fft_len = 32;  // 17 bins
  cfg.compressed_bins = 8;
  cfg.mhan_d_model = 8;
  cfg.mhan_blocks = 1;
  cfg.mhan_heads = 2;
  cfg.mhan_ffn_hidden = 16;
  // 17 bins over 24 kHz -> 1.5 kHz spacing; knee 4.5 kHz keeps K=4, and the
  // four remaining triangles stay wide enough to cover the coarse bins
  cfg.knee_hz = 4500.0;
  cfg.dpcrn_channels = {3, 4};
  cfg.dpcrn_kernels = {{3, 2}, {2, 1}};
  cfg.dpcrn_strides = {{2, 1}, {1, 1}};
  cfg.dpcrn_hidden = 3;
  cfg.frames_per_item = 4;
  cfg.precision = "f64";
  cfg.validate();
  return cfg;
}

}  // namespace scmse::model
