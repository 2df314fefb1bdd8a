// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Video vision transformer: tubelet embedding, learnable positional and
// temporal embeddings, optional class token, pre-norm encoder blocks, and
// the dense regression head that outputs the ejection-fraction estimate.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "echomae/tensor.hpp"
#include "echomae/video.hpp"

namespace echomae {

enum class ArchSize { kBase, kLarge, kToy };
enum class InitMode { kZeros, kRandom };

std::string arch_name(ArchSize a);

struct ModelConfig {
  ArchSize arch_size = ArchSize::kBase;
  int image_size = 112;   // square input
  int num_frames = 32;
  int patch_size = 16;    // square patch
  int tubelet_depth = 2;  // frames per tubelet
  int embed_dim = 768;
  int depth = 12;
  int heads = 12;
  int mlp_ratio = 4;
  bool use_class_token = false;
  int recon_frames = 32;  // decoder target frames
  SamplingSpec sampling;

  // BASE = (768, 12, 12), LARGE = (1024, 24, 16), TOY = (64, 2, 4)
  static ModelConfig preset(ArchSize arch);

  int tubelet_dim() const { return patch_size * patch_size * tubelet_depth; }
  void validate() const;  // throws ConfigError naming the offending pair
};

struct TokenGrid {
  int t = 0, h = 0, w = 0;
  int n_tokens = 0;
};

TokenGrid token_grid(const ModelConfig& config);

struct TokenSequence {
  DiffTensor tokens;  // [n_tokens (+1 with class token), embed_dim]
  TokenGrid grid;
  bool has_class_token = false;
};

struct EncoderOutput {
  DiffTensor latent;  // row count equals input token count
};

// token(tau, y, x) += pos[y*w + x] + temporal[tau]; the class token, when
// given, is prepended and receives no positional addition.
TokenSequence add_embeddings(Tape& tape, const TokenSequence& seq, DiffTensor pos_table,
                             DiffTensor temporal_table,
                             std::optional<DiffTensor> class_token = std::nullopt);

class VivitModel {
 public:
  VivitModel(const ModelConfig& config, InitMode init, std::uint64_t seed = 0);

  // video is [num_frames, image, image]; tokens come out time-major then
  // row-major spatial
  TokenSequence tubelet_embed(Tape& tape, DiffTensor video);
  TokenSequence embed_with_positions(Tape& tape, DiffTensor video);
  EncoderOutput encoder_forward(Tape& tape, const TokenSequence& seq);
  // pooled latent (class token or token mean) through the dense layer;
  // raw scalar in EF percent units
  DiffTensor regression_head(Tape& tape, const EncoderOutput& out);
  DiffTensor forward_ef(Tape& tape, DiffTensor video);  // [1,1]

  const ModelConfig& config() const { return config_; }
  const TokenGrid& grid() const { return grid_; }

  std::vector<Variable*> parameters();          // registration order
  std::vector<Variable*> encoder_parameters();  // embeddings + encoder, no head
  Variable* find(const std::string& name);

  std::int64_t parameter_total() const;
  // closed-form count implied by the config; guards architecture drift
  static std::int64_t param_count(const ModelConfig& config);

 private:
  struct Block {
    Variable *ln1_gain, *ln1_bias;
    Variable *qkv_w, *qkv_b;
    Variable *proj_w, *proj_b;
    Variable *ln2_gain, *ln2_bias;
    Variable *fc1_w, *fc1_b;
    Variable *fc2_w, *fc2_b;
  };

  Variable* adopt(const std::string& name, Shape shape);
  DiffTensor block_forward(Tape& tape, DiffTensor x, const Block& blk);

  ModelConfig config_;
  TokenGrid grid_;
  std::vector<std::unique_ptr<Variable>> store_;
  Variable* embed_w_ = nullptr;
  Variable* embed_b_ = nullptr;
  Variable* pos_ = nullptr;
  Variable* temporal_ = nullptr;
  Variable* cls_ = nullptr;  // only with use_class_token
  std::vector<Block> blocks_;
  Variable* head_w_ = nullptr;
  Variable* head_b_ = nullptr;
  std::vector<int> tubelet_perm_;  // flat pixel index per (token, coord)
};

// Truncated-normal initialization shared with the decoder.
void init_trunc_normal(Variable& v, float sigma, std::uint64_t seed);

}  // namespace echomae
