// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Video ingestion and the preprocessing protocol: raw container IO, bilinear
// resize, frame-rate standardization, frame sampling, augmentation, pixel
// normalization, and the label table.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "echomae/errors.hpp"
#include "echomae/tensor.hpp"

namespace echomae {

// Grayscale video as a dense frame x height x width sample grid.
// Immutable by convention once built.
struct VideoClip {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 1;
  double fps = 0.0;
  std::vector<std::uint8_t> pixels;  // frame-major, row-major

  static VideoClip make(int frames, int height, int width, double fps);

  std::size_t frame_size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  std::uint8_t at(int f, int y, int x) const {
    return pixels[static_cast<std::size_t>(f) * frame_size() +
                  static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int f, int y, int x) {
    return pixels[static_cast<std::size_t>(f) * frame_size() +
                  static_cast<std::size_t>(y) * width + x];
  }
};

// Raw container: magic "EAIV", little-endian u32 version=1, frames, height,
// width, channels, fps_millis, then the pixel payload. Byte-exact.
void save_raw_video(const VideoClip& clip, const std::string& path);
VideoClip load_raw_video(const std::string& path);

// Per-frame bilinear interpolation with half-pixel alignment; fps unchanged.
VideoClip resize_bilinear(const VideoClip& clip, int out_h, int out_w);

// Nearest-neighbor in time (ties toward the earlier frame); duration is
// preserved within one frame period.
VideoClip standardize_fps(const VideoClip& clip, double target_fps);

enum class SamplingMode { kRate, kEquallySpaced };

struct SamplingSpec {
  int num_frames = 16;
  SamplingMode mode = SamplingMode::kRate;
  int rate = 1;             // stride, rate mode only
  double target_fps = 50.0;
};

// Frame indices selected by the spec; rate mode picks start, start+rate, ...
// and equally-spaced picks round(i*(frames-1)/(num-1)).
std::vector<int> sample_indices(int clip_frames, const SamplingSpec& spec, int start);
VideoClip sample_frames(const VideoClip& clip, const SamplingSpec& spec, int start);

// Horizontal shift with zero padding; used by augment and exposed for tests.
VideoClip translate_horizontal(const VideoClip& clip, int dx);

// Samples 2 distinct transforms from {brightness, contrast, gamma,
// horizontal translation, small rotation} and applies them identically to
// every frame. Deterministic per seed; strength 0 is the identity.
VideoClip augment(const VideoClip& clip, std::uint64_t seed, double strength);

// Plain float tensor data, host-side (not on a tape yet).
struct TensorData {
  Shape shape;
  std::vector<float> values;
};

// (pixel/255 - mean) / stddev, shape [frames, height, width].
TensorData normalize_pixels(const VideoClip& clip, float mean, float stddev);

enum class Split { kTrain, kVal, kTest };
std::string split_name(Split s);

struct LabelRow {
  std::string file_name;
  double ef = 0.0;  // percent in (0,100)
  Split split = Split::kTrain;
};

struct LabelTable {
  std::vector<LabelRow> rows;
  const LabelRow* find(const std::string& file_name) const;
};

// CSV with header exactly "FileName,EF,Split".
LabelTable load_label_table(const std::string& path);
void write_label_table(const LabelTable& table, const std::string& path);

}  // namespace echomae
