// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic pulsating-ventricle clips with an analytic ejection-fraction
// oracle; stands in for scanner data so every pipeline stage is runnable.

#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "echomae/video.hpp"

namespace echomae {

struct SyntheticHeartParams {
  // semi-axes at full dilation, as fractions of frame width/height
  double rx = 0.28;
  double ry = 0.22;
  // systolic axis scale c in (0,1]; both axes contract by c, so
  // ef = 100*(1 - c^2)
  double contraction = 0.8;
  double beats_per_clip = 1.0;
  double noise_amplitude = 0.08;  // speckle amplitude, fraction of full scale
  std::uint64_t speckle_seed = 0;
};

// 100*(A_max - A_min)/A_max with A the analytic ellipse area.
double analytic_ef(const SyntheticHeartParams& params);

// Bright ellipse on a speckle background, axes oscillating sinusoidally
// between full and contracted size over beats_per_clip cycles; frame 0 is
// full dilation. Returns the clip and its analytic EF.
std::pair<VideoClip, double> generate_synthetic_clip(const SyntheticHeartParams& params,
                                                     int frames, int height, int width,
                                                     double fps, std::uint64_t seed);

struct SynthCorpusOptions {
  int count = 10;
  int frames = 32;
  int size = 112;
  double fps = 50.0;
  std::uint64_t seed = 42;
};

// Writes clip_%05d.eaiv files plus labels.csv with a seeded 70/15/15
// TRAIN/VAL/TEST assignment. Returns the label table.
LabelTable write_synthetic_corpus(const std::string& dir, const SynthCorpusOptions& opts);

// Parameter randomization used by the corpus writer, exposed for tests.
SyntheticHeartParams random_heart_params(std::uint64_t seed, int index);

}  // namespace echomae
