// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include "echomae/video.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "echomae/rng.hpp"

namespace echomae {

namespace {

constexpr char kMagic[4] = {'E', 'A', 'I', 'V'};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24);
}

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::llround(v), 0ll, 255ll));
}

// nearest with ties toward the earlier index
int nearest_half_down(double x) {
  return static_cast<int>(std::ceil(x - 0.5));
}

}  // namespace

VideoClip VideoClip::make(int frames, int height, int width, double fps) {
  if (frames < 1 || height < 1 || width < 1) {
    throw ParameterError("VideoClip: non-positive dimension");
  }
  if (fps <= 0.0) throw ParameterError("VideoClip: fps must be positive");
  VideoClip c;
  c.frames = frames;
  c.height = height;
  c.width = width;
  c.channels = 1;
  c.fps = fps;
  c.pixels.assign(static_cast<std::size_t>(frames) * height * width, 0);
  return c;
}

// --- raw container -----------------------------------------------------------

void save_raw_video(const VideoClip& clip, const std::string& path) {
  std::string buf;
  buf.reserve(28 + clip.pixels.size());
  buf.append(kMagic, 4);
  put_u32(buf, 1);  // version
  put_u32(buf, static_cast<std::uint32_t>(clip.frames));
  put_u32(buf, static_cast<std::uint32_t>(clip.height));
  put_u32(buf, static_cast<std::uint32_t>(clip.width));
  put_u32(buf, static_cast<std::uint32_t>(clip.channels));
  put_u32(buf, static_cast<std::uint32_t>(std::llround(clip.fps * 1000.0)));
  buf.append(reinterpret_cast<const char*>(clip.pixels.data()), clip.pixels.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("short write: " + path);
}

VideoClip load_raw_video(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  if (buf.size() < 28) throw FormatError(path + ": truncated header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(path + ": bad magic (want \"EAIV\")");
  }
  const std::uint32_t version = get_u32(buf, 4);
  if (version != 1) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t frames = get_u32(buf, 8);
  const std::uint32_t height = get_u32(buf, 12);
  const std::uint32_t width = get_u32(buf, 16);
  const std::uint32_t channels = get_u32(buf, 20);
  const std::uint32_t fps_millis = get_u32(buf, 24);
  if (frames == 0) throw FormatError(path + ": zero dimension in field frames");
  if (height == 0) throw FormatError(path + ": zero dimension in field height");
  if (width == 0) throw FormatError(path + ": zero dimension in field width");
  if (channels != 1) {
    throw FormatError(path + ": unsupported channels " + std::to_string(channels));
  }
  if (fps_millis == 0) throw FormatError(path + ": zero dimension in field fps_millis");

  const std::size_t want = static_cast<std::size_t>(frames) * height * width * channels;
  if (buf.size() - 28 < want) {
    throw FormatError(path + ": truncated payload: header promises " + std::to_string(want) +
                      " bytes, found " + std::to_string(buf.size() - 28));
  }
  if (buf.size() - 28 > want) {
    throw FormatError(path + ": trailing bytes after payload");
  }

  VideoClip clip = VideoClip::make(static_cast<int>(frames), static_cast<int>(height),
                                   static_cast<int>(width), fps_millis / 1000.0);
  std::memcpy(clip.pixels.data(), buf.data() + 28, want);
  return clip;
}

// --- resize --------------------------------------------------------------------

VideoClip resize_bilinear(const VideoClip& clip, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ParameterError("resize_bilinear: non-positive size");
  VideoClip out = VideoClip::make(clip.frames, out_h, out_w, clip.fps);
  const double sy_scale = static_cast<double>(clip.height) / out_h;
  const double sx_scale = static_cast<double>(clip.width) / out_w;
  for (int f = 0; f < clip.frames; ++f) {
    for (int y = 0; y < out_h; ++y) {
      double sy = (y + 0.5) * sy_scale - 0.5;
      sy = std::clamp(sy, 0.0, static_cast<double>(clip.height - 1));
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, clip.height - 1);
      const double fy = sy - y0;
      for (int x = 0; x < out_w; ++x) {
        double sx = (x + 0.5) * sx_scale - 0.5;
        sx = std::clamp(sx, 0.0, static_cast<double>(clip.width - 1));
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, clip.width - 1);
        const double fx = sx - x0;
        const double v = clip.at(f, y0, x0) * (1 - fy) * (1 - fx) +
                         clip.at(f, y0, x1) * (1 - fy) * fx +
                         clip.at(f, y1, x0) * fy * (1 - fx) +
                         clip.at(f, y1, x1) * fy * fx;
        out.at(f, y, x) = clamp_u8(v);
      }
    }
  }
  return out;
}

// --- frame-rate standardization ---------------------------------------------------

VideoClip standardize_fps(const VideoClip& clip, double target_fps) {
  if (target_fps <= 0.0) throw ParameterError("standardize_fps: target_fps must be positive");
  const int out_frames = std::max(
      1, static_cast<int>(std::llround(clip.frames * target_fps / clip.fps)));
  VideoClip out = VideoClip::make(out_frames, clip.height, clip.width, target_fps);
  const std::size_t fsz = clip.frame_size();
  for (int t = 0; t < out_frames; ++t) {
    int src = nearest_half_down(t * clip.fps / target_fps);
    src = std::clamp(src, 0, clip.frames - 1);
    std::copy_n(clip.pixels.data() + static_cast<std::size_t>(src) * fsz, fsz,
                out.pixels.data() + static_cast<std::size_t>(t) * fsz);
  }
  return out;
}

// --- frame sampling ---------------------------------------------------------------

std::vector<int> sample_indices(int clip_frames, const SamplingSpec& spec, int start) {
  if (spec.num_frames < 1) throw ParameterError("sample_frames: num_frames must be >= 1");
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(spec.num_frames));
  if (spec.mode == SamplingMode::kRate) {
    if (spec.rate < 1) throw ParameterError("sample_frames: rate must be >= 1");
    if (start < 0) throw ParameterError("sample_frames: negative start");
    const long long last = static_cast<long long>(start) +
                           static_cast<long long>(spec.num_frames - 1) * spec.rate;
    if (last >= clip_frames) {
      throw InsufficientFramesError(
          "sample_frames: window needs frame " + std::to_string(last) + " but clip has " +
          std::to_string(clip_frames) + " frames");
    }
    for (int i = 0; i < spec.num_frames; ++i) ids.push_back(start + i * spec.rate);
  } else {
    if (clip_frames < spec.num_frames) {
      throw InsufficientFramesError("sample_frames: equally-spaced needs >= " +
                                    std::to_string(spec.num_frames) + " frames, clip has " +
                                    std::to_string(clip_frames));
    }
    if (spec.num_frames == 1) {
      ids.push_back(0);
    } else {
      for (int i = 0; i < spec.num_frames; ++i) {
        ids.push_back(static_cast<int>(std::llround(
            static_cast<double>(i) * (clip_frames - 1) / (spec.num_frames - 1))));
      }
    }
  }
  return ids;
}

VideoClip sample_frames(const VideoClip& clip, const SamplingSpec& spec, int start) {
  const std::vector<int> ids = sample_indices(clip.frames, spec, start);
  VideoClip out = VideoClip::make(spec.num_frames, clip.height, clip.width, clip.fps);
  const std::size_t fsz = clip.frame_size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(clip.pixels.data() + static_cast<std::size_t>(ids[i]) * fsz, fsz,
                out.pixels.data() + i * fsz);
  }
  return out;
}

// --- augmentation -------------------------------------------------------------------

VideoClip translate_horizontal(const VideoClip& clip, int dx) {
  if (dx == 0) return clip;
  VideoClip out = VideoClip::make(clip.frames, clip.height, clip.width, clip.fps);
  for (int f = 0; f < clip.frames; ++f) {
    for (int y = 0; y < clip.height; ++y) {
      for (int x = 0; x < clip.width; ++x) {
        const int sx = x - dx;
        out.at(f, y, x) = (sx >= 0 && sx < clip.width) ? clip.at(f, y, sx) : 0;
      }
    }
  }
  return out;
}

namespace {

VideoClip apply_brightness(const VideoClip& clip, double delta) {
  VideoClip out = clip;
  for (auto& p : out.pixels) p = clamp_u8(p + delta);
  return out;
}

VideoClip apply_contrast(const VideoClip& clip, double factor) {
  VideoClip out = clip;
  for (auto& p : out.pixels) p = clamp_u8(128.0 + factor * (p - 128.0));
  return out;
}

VideoClip apply_gamma(const VideoClip& clip, double g) {
  std::uint8_t lut[256];
  for (int i = 0; i < 256; ++i) {
    lut[i] = clamp_u8(255.0 * std::pow(i / 255.0, g));
  }
  VideoClip out = clip;
  for (auto& p : out.pixels) p = lut[p];
  return out;
}

VideoClip apply_rotation(const VideoClip& clip, double degrees) {
  if (degrees == 0.0) return clip;
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (clip.height - 1) / 2.0, cx = (clip.width - 1) / 2.0;
  VideoClip out = VideoClip::make(clip.frames, clip.height, clip.width, clip.fps);
  for (int f = 0; f < clip.frames; ++f) {
    for (int y = 0; y < clip.height; ++y) {
      for (int x = 0; x < clip.width; ++x) {
        // inverse mapping, bilinear sample, zero outside
        const double dy = y - cy, dx = x - cx;
        const double sy = cy + (c * dy + s * dx);
        const double sx = cx + (-s * dy + c * dx);
        if (sy < 0 || sy > clip.height - 1 || sx < 0 || sx > clip.width - 1) continue;
        const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
        const int y1 = std::min(y0 + 1, clip.height - 1);
        const int x1 = std::min(x0 + 1, clip.width - 1);
        const double fy = sy - y0, fx = sx - x0;
        const double v = clip.at(f, y0, x0) * (1 - fy) * (1 - fx) +
                         clip.at(f, y0, x1) * (1 - fy) * fx +
                         clip.at(f, y1, x0) * fy * (1 - fx) +
                         clip.at(f, y1, x1) * fy * fx;
        out.at(f, y, x) = clamp_u8(v);
      }
    }
  }
  return out;
}

}  // namespace

VideoClip augment(const VideoClip& clip, std::uint64_t seed, double strength) {
  if (strength < 0.0 || strength > 1.0) {
    throw ParameterError("augment: strength must be in [0,1]");
  }
  Rng rng(hash_seed(seed, 0xa06'3e17));
  // sample 2 distinct transforms out of 5
  int first = rng.below_int(5);
  int second = rng.below_int(4);
  if (second >= first) second += 1;

  VideoClip out = clip;
  for (int pick : {first, second}) {
    switch (pick) {
      case 0: out = apply_brightness(out, strength * rng.uniform(-64.0, 64.0)); break;
      case 1: out = apply_contrast(out, 1.0 + strength * rng.uniform(-0.4, 0.4)); break;
      case 2: out = apply_gamma(out, std::exp(strength * rng.uniform(-0.4, 0.4))); break;
      case 3: {
        const int dx = static_cast<int>(std::llround(strength * rng.uniform(-0.15, 0.15) * clip.width));
        out = translate_horizontal(out, dx);
        break;
      }
      default: out = apply_rotation(out, strength * rng.uniform(-10.0, 10.0)); break;
    }
  }
  return out;
}

// --- normalization -----------------------------------------------------------------

TensorData normalize_pixels(const VideoClip& clip, float mean, float stddev) {
  if (stddev <= 0.0f) throw ParameterError("normalize_pixels: std must be positive");
  TensorData out;
  out.shape = {clip.frames, clip.height, clip.width};
  out.values.resize(clip.pixels.size());
  for (std::size_t i = 0; i < clip.pixels.size(); ++i) {
    out.values[i] = (clip.pixels[i] / 255.0f - mean) / stddev;
  }
  return out;
}

// --- label table --------------------------------------------------------------------

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "TRAIN";
    case Split::kVal: return "VAL";
    default: return "TEST";
  }
}

namespace {

Split parse_split(const std::string& tok, int line_no) {
  if (tok == "TRAIN") return Split::kTrain;
  if (tok == "VAL") return Split::kVal;
  if (tok == "TEST") return Split::kTest;
  throw ValidationError("labels row " + std::to_string(line_no) + ": unknown split token \"" +
                        tok + "\"");
}

}  // namespace

const LabelRow* LabelTable::find(const std::string& file_name) const {
  for (const auto& r : rows) {
    if (r.file_name == file_name) return &r;
  }
  return nullptr;
}

LabelTable load_label_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "FileName,EF,Split") {
    throw FormatError(path + ": header must be exactly \"FileName,EF,Split\", got \"" + line +
                      "\"");
  }

  LabelTable table;
  std::vector<int> bad_ef_rows;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw FormatError(path + ": row " + std::to_string(line_no) + ": expected 3 columns");
    }
    LabelRow row;
    row.file_name = line.substr(0, c1);
    const std::string ef_tok = line.substr(c1 + 1, c2 - c1 - 1);
    try {
      std::size_t pos = 0;
      row.ef = std::stod(ef_tok, &pos);
      if (pos != ef_tok.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(path + ": row " + std::to_string(line_no) + ": bad EF value \"" +
                        ef_tok + "\"");
    }
    row.split = parse_split(line.substr(c2 + 1), line_no);
    if (!(row.ef > 0.0 && row.ef < 100.0)) bad_ef_rows.push_back(line_no);
    if (table.find(row.file_name) != nullptr) {
      throw ValidationError(path + ": duplicate file name \"" + row.file_name + "\" at row " +
                            std::to_string(line_no));
    }
    table.rows.push_back(std::move(row));
  }
  if (!bad_ef_rows.empty()) {
    std::string msg = path + ": EF outside (0,100) at rows";
    for (int r : bad_ef_rows) msg += " " + std::to_string(r);
    throw ValidationError(msg);
  }
  return table;
}

void write_label_table(const LabelTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "FileName,EF,Split\n";
  char buf[64];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%.10g", r.ef);
    f << r.file_name << "," << buf << "," << split_name(r.split) << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

}  // namespace echomae
