// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include "echomae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "echomae/rng.hpp"

namespace echomae {

namespace {

constexpr double kInteriorLevel = 205.0;
constexpr double kBackgroundLevel = 42.0;

void validate(const SyntheticHeartParams& p) {
  if (!(p.contraction > 0.0 && p.contraction <= 1.0)) {
    throw ParameterError("synthetic clip: contraction must be in (0,1]");
  }
  if (p.rx <= 0.0 || p.ry <= 0.0) {
    throw ParameterError("synthetic clip: radius fractions must be positive");
  }
  // full-dilation ellipse must fit inside the frame
  if (p.rx >= 0.5 || p.ry >= 0.5) {
    throw ParameterError("synthetic clip: ellipse exceeds frame at full dilation");
  }
  if (p.beats_per_clip <= 0.0) {
    throw ParameterError("synthetic clip: beats_per_clip must be positive");
  }
  if (p.noise_amplitude < 0.0 || p.noise_amplitude > 0.5) {
    throw ParameterError("synthetic clip: noise amplitude must be in [0,0.5]");
  }
}

}  // namespace

double analytic_ef(const SyntheticHeartParams& params) {
  const double c = params.contraction;
  return 100.0 * (1.0 - c * c);
}

std::pair<VideoClip, double> generate_synthetic_clip(const SyntheticHeartParams& params,
                                                     int frames, int height, int width,
                                                     double fps, std::uint64_t seed) {
  validate(params);
  VideoClip clip = VideoClip::make(frames, height, width, fps);

  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  const double full_sx = params.rx * width;
  const double full_sy = params.ry * height;
  const double c = params.contraction;

  Rng noise(hash_seed(seed, params.speckle_seed));
  const double amp = params.noise_amplitude * 255.0;

  for (int f = 0; f < frames; ++f) {
    // frame 0 is full dilation; the minimum is reached half a beat later
    const double phase = 2.0 * M_PI * params.beats_per_clip * f / frames;
    const double s = c + (1.0 - c) * (0.5 + 0.5 * std::cos(phase));
    const double sx = full_sx * s, sy = full_sy * s;
    const double aa_band = 1.0 / std::min(sx, sy);  // ~1px smoothing at the rim
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double qx = (x - cx) / sx;
        const double qy = (y - cy) / sy;
        const double q = qx * qx + qy * qy;
        // coverage 1 inside, 0 outside, smooth across the rim
        double cov;
        if (q <= 1.0 - aa_band) {
          cov = 1.0;
        } else if (q >= 1.0 + aa_band) {
          cov = 0.0;
        } else {
          cov = (1.0 + aa_band - q) / (2.0 * aa_band);
        }
        const double base = kBackgroundLevel + cov * (kInteriorLevel - kBackgroundLevel);
        const double speckle = amp * noise.uniform(-1.0, 1.0);
        clip.at(f, y, x) = static_cast<std::uint8_t>(
            std::clamp(std::llround(base + speckle), 1ll, 255ll));
      }
    }
  }
  return {std::move(clip), analytic_ef(params)};
}

SyntheticHeartParams random_heart_params(std::uint64_t seed, int index) {
  Rng rng(hash_seed(seed, 0x5e17'0000 + static_cast<std::uint64_t>(index)));
  SyntheticHeartParams p;
  p.rx = rng.uniform(0.26, 0.31);
  p.ry = rng.uniform(0.22, 0.27);
  p.contraction = rng.uniform(0.55, 0.95);
  p.beats_per_clip = 1.0 + rng.below_int(2);  // 1 or 2 beats
  p.noise_amplitude = rng.uniform(0.03, 0.08);
  p.speckle_seed = rng.next_u64();
  return p;
}

LabelTable write_synthetic_corpus(const std::string& dir, const SynthCorpusOptions& opts) {
  if (opts.count < 1) throw ParameterError("synthetic corpus: count must be >= 1");
  std::filesystem::create_directories(dir);

  // seeded 70/15/15 assignment
  std::vector<int> order(static_cast<std::size_t>(opts.count));
  for (int i = 0; i < opts.count; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(hash_seed(opts.seed, 0x59717));
  rng.shuffle(order);
  int n_val = opts.count * 15 / 100;
  int n_test = opts.count * 15 / 100;
  if (opts.count >= 3) {
    n_val = std::max(n_val, 1);
    n_test = std::max(n_test, 1);
  }
  std::vector<Split> split(static_cast<std::size_t>(opts.count), Split::kTrain);
  for (int i = 0; i < n_val; ++i) split[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = Split::kVal;
  for (int i = 0; i < n_test; ++i) {
    split[static_cast<std::size_t>(order[static_cast<std::size_t>(n_val + i)])] = Split::kTest;
  }

  LabelTable table;
  char name[64];
  for (int i = 0; i < opts.count; ++i) {
    const SyntheticHeartParams params = random_heart_params(opts.seed, i);
    auto [clip, ef] = generate_synthetic_clip(params, opts.frames, opts.size, opts.size,
                                              opts.fps, hash_seed(opts.seed, 0xc11b + static_cast<std::uint64_t>(i)));
    std::snprintf(name, sizeof(name), "clip_%05d.eaiv", i);
    save_raw_video(clip, (std::filesystem::path(dir) / name).string());
    table.rows.push_back({name, ef, split[static_cast<std::size_t>(i)]});
  }
  write_label_table(table, (std::filesystem::path(dir) / "labels.csv").string());
  return table;
}

}  // namespace echomae
