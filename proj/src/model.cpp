// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include "echomae/model.hpp"

#include <cmath>

#include "echomae/rng.hpp"

namespace echomae {

std::string arch_name(ArchSize a) {
  switch (a) {
    case ArchSize::kBase: return "BASE";
    case ArchSize::kLarge: return "LARGE";
    default: return "TOY";
  }
}

ModelConfig ModelConfig::preset(ArchSize arch) {
  ModelConfig c;
  c.arch_size = arch;
  switch (arch) {
    case ArchSize::kBase:
      c.embed_dim = 768;
      c.depth = 12;
      c.heads = 12;
      break;
    case ArchSize::kLarge:
      c.embed_dim = 1024;
      c.depth = 24;
      c.heads = 16;
      break;
    case ArchSize::kToy:
      c.embed_dim = 64;
      c.depth = 2;
      c.heads = 4;
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  if (image_size < 1 || num_frames < 1 || patch_size < 1 || tubelet_depth < 1) {
    throw ConfigError("model config: non-positive dimension");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("model config: image_size " + std::to_string(image_size) +
                      " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (num_frames % tubelet_depth != 0) {
    throw ConfigError("model config: num_frames " + std::to_string(num_frames) +
                      " not divisible by tubelet_depth " + std::to_string(tubelet_depth));
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("model config: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (depth < 1 || mlp_ratio < 1) throw ConfigError("model config: depth/mlp_ratio must be >= 1");
  if (recon_frames < 1 || recon_frames > num_frames) {
    throw ConfigError("model config: recon_frames " + std::to_string(recon_frames) +
                      " must be in [1, num_frames=" + std::to_string(num_frames) + "]");
  }
}

TokenGrid token_grid(const ModelConfig& config) {
  config.validate();
  TokenGrid g;
  g.h = config.image_size / config.patch_size;
  g.w = g.h;
  g.t = config.num_frames / config.tubelet_depth;
  g.n_tokens = g.t * g.h * g.w;
  return g;
}

void init_trunc_normal(Variable& v, float sigma, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& x : v.value) x = rng.truncated_normal(sigma);
}

// --- construction -----------------------------------------------------------

Variable* VivitModel::adopt(const std::string& name, Shape shape) {
  store_.push_back(std::make_unique<Variable>(name, std::move(shape)));
  return store_.back().get();
}

VivitModel::VivitModel(const ModelConfig& config, InitMode init, std::uint64_t seed)
    : config_(config), grid_(token_grid(config)) {
  const int D = config_.embed_dim;
  const int tsize = config_.tubelet_dim();
  const int hw = grid_.h * grid_.w;

  embed_w_ = adopt("embed.proj.weight", {tsize, D});
  embed_b_ = adopt("embed.proj.bias", {D});
  pos_ = adopt("embed.pos", {hw, D});
  temporal_ = adopt("embed.temporal", {grid_.t, D});
  if (config_.use_class_token) cls_ = adopt("embed.cls", {1, D});

  blocks_.reserve(static_cast<std::size_t>(config_.depth));
  for (int i = 0; i < config_.depth; ++i) {
    const std::string p = "enc.block" + std::to_string(i) + ".";
    Block b;
    b.ln1_gain = adopt(p + "ln1.gain", {D});
    b.ln1_bias = adopt(p + "ln1.bias", {D});
    b.qkv_w = adopt(p + "attn.qkv.weight", {D, 3 * D});
    b.qkv_b = adopt(p + "attn.qkv.bias", {3 * D});
    b.proj_w = adopt(p + "attn.proj.weight", {D, D});
    b.proj_b = adopt(p + "attn.proj.bias", {D});
    b.ln2_gain = adopt(p + "ln2.gain", {D});
    b.ln2_bias = adopt(p + "ln2.bias", {D});
    b.fc1_w = adopt(p + "mlp.fc1.weight", {D, config_.mlp_ratio * D});
    b.fc1_b = adopt(p + "mlp.fc1.bias", {config_.mlp_ratio * D});
    b.fc2_w = adopt(p + "mlp.fc2.weight", {config_.mlp_ratio * D, D});
    b.fc2_b = adopt(p + "mlp.fc2.bias", {D});
    blocks_.push_back(b);
  }
  head_w_ = adopt("head.weight", {D, 1});
  head_b_ = adopt("head.bias", {1});

  // layer-norm gains start at one in either init mode
  for (auto& blk : blocks_) {
    std::fill(blk.ln1_gain->value.begin(), blk.ln1_gain->value.end(), 1.0f);
    std::fill(blk.ln2_gain->value.begin(), blk.ln2_gain->value.end(), 1.0f);
  }
  if (init == InitMode::kRandom) {
    std::uint64_t i = 0;
    for (auto& v : store_) {
      ++i;
      const std::string& n = v->name;
      const bool is_proj = n.ends_with(".weight") || n == "embed.pos" ||
                           n == "embed.temporal" || n == "embed.cls";
      if (is_proj) init_trunc_normal(*v, 0.02f, hash_seed(seed, i));
    }
  }

  // tubelet gather order: token (tau, gy, gx), coord (dt, py, px)
  const int P = config_.patch_size, td = config_.tubelet_depth;
  const int H = config_.image_size, W = config_.image_size;
  tubelet_perm_.reserve(static_cast<std::size_t>(grid_.n_tokens) * tsize);
  for (int tau = 0; tau < grid_.t; ++tau) {
    for (int gy = 0; gy < grid_.h; ++gy) {
      for (int gx = 0; gx < grid_.w; ++gx) {
        for (int dt = 0; dt < td; ++dt) {
          for (int py = 0; py < P; ++py) {
            for (int px = 0; px < P; ++px) {
              const int f = tau * td + dt;
              const int y = gy * P + py;
              const int x = gx * P + px;
              tubelet_perm_.push_back((f * H + y) * W + x);
            }
          }
        }
      }
    }
  }
}

std::vector<Variable*> VivitModel::parameters() {
  std::vector<Variable*> out;
  out.reserve(store_.size());
  for (auto& v : store_) out.push_back(v.get());
  return out;
}

std::vector<Variable*> VivitModel::encoder_parameters() {
  std::vector<Variable*> out;
  for (auto& v : store_) {
    if (!v->name.starts_with("head.")) out.push_back(v.get());
  }
  return out;
}

Variable* VivitModel::find(const std::string& name) {
  for (auto& v : store_) {
    if (v->name == name) return v.get();
  }
  return nullptr;
}

std::int64_t VivitModel::parameter_total() const {
  std::int64_t total = 0;
  for (const auto& v : store_) total += v->size();
  return total;
}

std::int64_t VivitModel::param_count(const ModelConfig& config) {
  const TokenGrid g = token_grid(config);
  const std::int64_t D = config.embed_dim;
  const std::int64_t tsize = config.tubelet_dim();
  const std::int64_t hw = g.h * g.w;
  const std::int64_t r = config.mlp_ratio;
  // embed.proj + tables (+ class token)
  std::int64_t total = tsize * D + D + hw * D + g.t * D + (config.use_class_token ? D : 0);
  // per block: 2 layer norms, qkv, output proj, 2-layer MLP
  const std::int64_t block = 2 * D + (D * 3 * D + 3 * D) + (D * D + D) + 2 * D +
                             (D * r * D + r * D) + (r * D * D + D);
  total += config.depth * block;
  total += D + 1;  // head
  return total;
}

// --- forward ------------------------------------------------------------------

TokenSequence VivitModel::tubelet_embed(Tape& tape, DiffTensor video) {
  const Shape want{config_.num_frames, config_.image_size, config_.image_size};
  if (video.shape() != want) {
    throw ConfigError("tubelet_embed: video shape " + shape_str(video.shape()) +
                      " does not match config " + shape_str(want));
  }
  const int tsize = config_.tubelet_dim();
  auto flat = reshape(video, {config_.num_frames * config_.image_size * config_.image_size, 1});
  auto gathered = gather_rows(flat, tubelet_perm_);
  auto tubelets = reshape(gathered, {grid_.n_tokens, tsize});
  auto tokens = add_rowvec(matmul(tubelets, tape.leaf(*embed_w_)), tape.leaf(*embed_b_));
  return TokenSequence{tokens, grid_, false};
}

TokenSequence add_embeddings(Tape& tape, const TokenSequence& seq, DiffTensor pos_table,
                             DiffTensor temporal_table, std::optional<DiffTensor> class_token) {
  const TokenGrid& g = seq.grid;
  if (seq.has_class_token) {
    throw ContractError("add_embeddings: sequence already has a class token");
  }
  if (pos_table.shape().size() != 2 || pos_table.shape()[0] != g.h * g.w) {
    throw ConfigError("add_embeddings: positional table " + shape_str(pos_table.shape()) +
                      " must have " + std::to_string(g.h * g.w) + " rows");
  }
  if (temporal_table.shape().size() != 2 || temporal_table.shape()[0] != g.t) {
    throw ConfigError("add_embeddings: temporal table " + shape_str(temporal_table.shape()) +
                      " must have " + std::to_string(g.t) + " rows");
  }
  std::vector<int> spatial_ids, temporal_ids;
  spatial_ids.reserve(static_cast<std::size_t>(g.n_tokens));
  temporal_ids.reserve(static_cast<std::size_t>(g.n_tokens));
  for (int tau = 0; tau < g.t; ++tau) {
    for (int s = 0; s < g.h * g.w; ++s) {
      spatial_ids.push_back(s);
      temporal_ids.push_back(tau);
    }
  }
  auto pos_full = add(gather_rows(pos_table, spatial_ids),
                      gather_rows(temporal_table, temporal_ids));
  auto tokens = add(seq.tokens, pos_full);
  TokenSequence out{tokens, g, false};
  if (class_token.has_value()) {
    out.tokens = concat_rows(*class_token, tokens);
    out.has_class_token = true;
  }
  return out;
}

TokenSequence VivitModel::embed_with_positions(Tape& tape, DiffTensor video) {
  TokenSequence seq = tubelet_embed(tape, video);
  std::optional<DiffTensor> cls;
  if (cls_) cls = tape.leaf(*cls_);
  return add_embeddings(tape, seq, tape.leaf(*pos_), tape.leaf(*temporal_), cls);
}

DiffTensor VivitModel::block_forward(Tape& tape, DiffTensor x, const Block& blk) {
  const int D = config_.embed_dim;
  const int dh = D / config_.heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  auto normed = layer_norm(x, tape.leaf(*blk.ln1_gain), tape.leaf(*blk.ln1_bias));
  auto qkv = add_rowvec(matmul(normed, tape.leaf(*blk.qkv_w)), tape.leaf(*blk.qkv_b));
  auto proj_w = tape.leaf(*blk.proj_w);

  // concat-of-heads followed by the output projection, expressed as a sum of
  // per-head projections through the matching row block of proj_w
  DiffTensor attn_out;
  for (int h = 0; h < config_.heads; ++h) {
    std::vector<int> qi(static_cast<std::size_t>(dh)), ki(qi), vi(qi), rows(qi);
    for (int j = 0; j < dh; ++j) {
      qi[static_cast<std::size_t>(j)] = h * dh + j;
      ki[static_cast<std::size_t>(j)] = D + h * dh + j;
      vi[static_cast<std::size_t>(j)] = 2 * D + h * dh + j;
      rows[static_cast<std::size_t>(j)] = h * dh + j;
    }
    auto q = gather_cols(qkv, qi);
    auto k = gather_cols(qkv, ki);
    auto v = gather_cols(qkv, vi);
    auto weights = softmax_lastdim(scale(matmul(q, transpose(k)), att_scale));
    auto head = matmul(matmul(weights, v), gather_rows(proj_w, rows));
    attn_out = h == 0 ? head : add(attn_out, head);
  }
  x = add(x, add_rowvec(attn_out, tape.leaf(*blk.proj_b)));

  auto m = layer_norm(x, tape.leaf(*blk.ln2_gain), tape.leaf(*blk.ln2_bias));
  m = gelu(add_rowvec(matmul(m, tape.leaf(*blk.fc1_w)), tape.leaf(*blk.fc1_b)));
  m = add_rowvec(matmul(m, tape.leaf(*blk.fc2_w)), tape.leaf(*blk.fc2_b));
  return add(x, m);
}

EncoderOutput VivitModel::encoder_forward(Tape& tape, const TokenSequence& seq) {
  DiffTensor x = seq.tokens;
  for (const Block& blk : blocks_) x = block_forward(tape, x, blk);
  return EncoderOutput{x};
}

DiffTensor VivitModel::regression_head(Tape& tape, const EncoderOutput& out) {
  DiffTensor pooled = config_.use_class_token ? gather_rows(out.latent, {0})
                                              : mean_rows(out.latent);
  return add_rowvec(matmul(pooled, tape.leaf(*head_w_)), tape.leaf(*head_b_));
}

DiffTensor VivitModel::forward_ef(Tape& tape, DiffTensor video) {
  TokenSequence seq = embed_with_positions(tape, video);
  EncoderOutput enc = encoder_forward(tape, seq);
  return regression_head(tape, enc);
}

}  // namespace echomae
