#pragma once

// `key = value` configuration files. Lines starting with '#' (after optional
// whitespace) and trailing "# ..." are comments. Unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "lemamba/errors.hpp"

namespace lemamba {

enum class StateShare { none, adjacent, full };

inline const char* to_string(StateShare s) {
  switch (s) {
    case StateShare::none: return "none";
    case StateShare::adjacent: return "adjacent";
    case StateShare::full: return "full";
  }
  return "?";
}

struct NetConfig {
  std::int64_t num_scales = 3;
  std::vector<std::int64_t> dims{16, 32, 64};
  std::vector<std::int64_t> blocks_per_scale{2, 2, 2};
  std::int64_t win_h = 4, win_w = 4;
  std::int64_t state_dim = 16;
  std::int64_t spectral_bands = 4;
  std::int64_t pan_bands = 1;
  std::int64_t ratio = 4;
  double lambda = 0.1;
  std::uint64_t seed = 0;
  // none: no states passed, alpha frozen at 0. adjacent: state flows between
  // consecutive blocks. full: adjacent plus encoder-to-decoder skip states.
  StateShare state_share = StateShare::full;

  /// Spatial extents are padded to a multiple of this.
  std::int64_t ladder_multiple() const { return std::int64_t{1} << (num_scales - 1); }

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    if (num_scales < 2) fail("num_scales must be >= 2");
    if (static_cast<std::int64_t>(dims.size()) != num_scales) fail("dims must list one width per scale");
    if (static_cast<std::int64_t>(blocks_per_scale.size()) != num_scales)
      fail("blocks_per_scale must list one count per scale");
    for (auto d : dims)
      if (d < 1) fail("dims must be positive");
    for (auto b : blocks_per_scale)
      if (b < 1) fail("blocks_per_scale entries must be >= 1");
    if (win_h < 1 || win_w < 1) fail("window dims must be >= 1");
    if (state_dim < 1) fail("state_dim must be >= 1");
    if (spectral_bands < 1) fail("spectral_bands must be >= 1");
    if (pan_bands != 1 && pan_bands != 3) fail("pan_bands must be 1 or 3");
    if (ratio != 4 && ratio != 8) fail("ratio must be 4 or 8");
    if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  }
};

struct TrainConfig {
  double lr = 1e-3;
  std::int64_t epochs = 1000;      // schedule horizon; boundaries at 30% and 60%
  std::int64_t max_steps = 0;      // stop after this many optimizer steps; 0 = run all epochs
  std::int64_t batch = 4;
  std::int64_t crop = 32;          // GT crop side for training patches; 0 = full image
  std::int64_t checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  double weight_decay = 1e-6;
  double clip_norm = 1.0;
  std::string data;                // dataset directory holding train/val/test manifests

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    if (!(lr > 0.0)) fail("lr must be positive");
    if (epochs < 1) fail("epochs must be >= 1");
    if (max_steps < 0) fail("max_steps must be >= 0");
    if (batch < 1) fail("batch must be >= 1");
    if (crop < 0) fail("crop must be >= 0");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  }
};

struct DataConfig {
  std::int64_t samples = 64;
  std::int64_t height = 64, width = 64;

  void validate() const {
    if (samples < 1 || height < 1 || width < 1) throw ValidationError("config: samples/height/width must be >= 1");
  }
};

struct Config {
  NetConfig net;
  TrainConfig train;
  DataConfig data;

  void validate() const {
    net.validate();
    train.validate();
    data.validate();
    if (data.height % net.ratio || data.width % net.ratio)
      throw ValidationError("config: height and width must be divisible by ratio");
    if (train.crop % net.ratio) throw ValidationError("config: crop must be divisible by ratio");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ValidationError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

inline std::vector<std::int64_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::int64_t>(key, trim(item)));
  if (out.empty()) throw ValidationError("config: empty list for " + key);
  return out;
}

}  // namespace detail

/// Applies one key to cfg. Throws ValidationError on unknown keys or bad values.
inline void apply_config_key(Config& cfg, const std::string& key, const std::string& v) {
  using detail::parse_number;
  auto& n = cfg.net;
  auto& t = cfg.train;
  if (key == "num_scales") n.num_scales = parse_number<std::int64_t>(key, v);
  else if (key == "dims") n.dims = detail::parse_list(key, v);
  else if (key == "blocks_per_scale") n.blocks_per_scale = detail::parse_list(key, v);
  else if (key == "window") {
    auto w = detail::parse_list(key, v);
    if (w.size() == 1) w.push_back(w[0]);
    if (w.size() != 2) throw ValidationError("config: window takes 'h' or 'h,w'");
    n.win_h = w[0];
    n.win_w = w[1];
  } else if (key == "state_dim") n.state_dim = parse_number<std::int64_t>(key, v);
  else if (key == "spectral_bands") n.spectral_bands = parse_number<std::int64_t>(key, v);
  else if (key == "pan_bands") n.pan_bands = parse_number<std::int64_t>(key, v);
  else if (key == "ratio") n.ratio = parse_number<std::int64_t>(key, v);
  else if (key == "lambda") n.lambda = parse_number<double>(key, v);
  else if (key == "seed") n.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "state_share") {
    if (v == "none") n.state_share = StateShare::none;
    else if (v == "adjacent") n.state_share = StateShare::adjacent;
    else if (v == "full") n.state_share = StateShare::full;
    else throw ValidationError("config: state_share must be none, adjacent or full");
  } else if (key == "lr") t.lr = parse_number<double>(key, v);
  else if (key == "epochs") t.epochs = parse_number<std::int64_t>(key, v);
  else if (key == "max_steps") t.max_steps = parse_number<std::int64_t>(key, v);
  else if (key == "batch") t.batch = parse_number<std::int64_t>(key, v);
  else if (key == "crop") t.crop = parse_number<std::int64_t>(key, v);
  else if (key == "checkpoint_every") t.checkpoint_every = parse_number<std::int64_t>(key, v);
  else if (key == "weight_decay") t.weight_decay = parse_number<double>(key, v);
  else if (key == "clip_norm") t.clip_norm = parse_number<double>(key, v);
  else if (key == "data") t.data = v;
  else if (key == "samples") cfg.data.samples = parse_number<std::int64_t>(key, v);
  else if (key == "height") cfg.data.height = parse_number<std::int64_t>(key, v);
  else if (key == "width") cfg.data.width = parse_number<std::int64_t>(key, v);
  else throw ValidationError("config: unknown key '" + key + "'");
}

inline Config parse_config(std::istream& is, Config cfg = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ValidationError("config line " + std::to_string(lineno) + ": empty key or value");
    apply_config_key(cfg, key, value);
  }
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config " + path.string());
  Config cfg = parse_config(is);
  cfg.validate();
  return cfg;
}

namespace detail {

// Shortest text that parses back to the same double.
inline std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline std::string format_config(const Config& c) {
  using detail::shortest;
  std::ostringstream os;
  auto list = [](const std::vector<std::int64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  os << "num_scales = " << c.net.num_scales << "\n"
     << "dims = " << list(c.net.dims) << "\n"
     << "blocks_per_scale = " << list(c.net.blocks_per_scale) << "\n"
     << "window = " << c.net.win_h << "," << c.net.win_w << "\n"
     << "state_dim = " << c.net.state_dim << "\n"
     << "spectral_bands = " << c.net.spectral_bands << "\n"
     << "pan_bands = " << c.net.pan_bands << "\n"
     << "ratio = " << c.net.ratio << "\n"
     << "lambda = " << shortest(c.net.lambda) << "\n"
     << "seed = " << c.net.seed << "\n"
     << "state_share = " << to_string(c.net.state_share) << "\n"
     << "lr = " << shortest(c.train.lr) << "\n"
     << "epochs = " << c.train.epochs << "\n"
     << "max_steps = " << c.train.max_steps << "\n"
     << "batch = " << c.train.batch << "\n"
     << "crop = " << c.train.crop << "\n"
     << "checkpoint_every = " << c.train.checkpoint_every << "\n"
     << "weight_decay = " << shortest(c.train.weight_decay) << "\n"
     << "clip_norm = " << shortest(c.train.clip_norm) << "\n"
     << "samples = " << c.data.samples << "\n"
     << "height = " << c.data.height << "\n"
     << "width = " << c.data.width << "\n";
  if (!c.train.data.empty()) os << "data = " << c.train.data << "\n";
  return os.str();
}

}  // namespace lemamba
