#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "lemamba/lemamba.hpp"

namespace tu {

namespace fs = std::filesystem;
using lemamba::Rng;
using lemamba::Shape;
using lemamba::Tensor;

inline Tensor rand(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return lemamba::detail::random_tensor(std::move(shape), rng, lo, hi);
}

inline Tensor vals(Shape shape, std::vector<float> v) { return Tensor(std::move(shape), std::move(v)); }

/// Fresh scratch directory under the build tree, private to this process.
inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(LEMAMBA_TEST_TMP) / std::to_string(::getpid()) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int code = -1;
  std::string out;  // stdout + stderr
};

/// Runs the CLI with the given argument string.
inline Run cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + LEMAMBA_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.out = ss.str();
  return r;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Smooth analytic pair shared with the skimage run that produced kSkimageSsim.
inline std::pair<Tensor, Tensor> ssim_pair() {
  const std::int64_t C = 3, H = 24, W = 24;
  std::vector<float> x(C * H * W), y(C * H * W);
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        const double fi = static_cast<double>(i), fj = static_cast<double>(j), fc = static_cast<double>(c);
        x[(c * H + i) * W + j] = static_cast<float>(0.5 + 0.3 * std::sin(0.4 * fi + 0.3 * fj + fc));
        y[(c * H + i) * W + j] = static_cast<float>(0.5 + 0.25 * std::sin(0.4 * fi + 0.35 * fj + fc) +
                                                    0.05 * std::cos(1.3 * fi * fj / 7.0 + fc));
      }
  return {Tensor({C, H, W}, x), Tensor({C, H, W}, y)};
}

// skimage.metrics.structural_similarity(gaussian_weights=True, sigma=1.5,
// use_sample_covariance=False, data_range=1, channel_axis=0)
inline constexpr double kSkimageSsim = 0.7351675764551451;

inline double max_abs(const Tensor& a, const Tensor& b) { return lemamba::detail::max_abs_diff(a, b); }

}  // namespace tu
