// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "echomae/checkpoint.hpp"
#include "echomae/gradcheck.hpp"
#include "echomae/model.hpp"
#include "echomae/rng.hpp"

using namespace echomae;
namespace fs = std::filesystem;

namespace {

// 8-token model small enough for exhaustive finite differences
ModelConfig tiny_config(int embed = 16, int depth = 2, int heads = 4) {
  ModelConfig c = ModelConfig::preset(ArchSize::kToy);
  c.embed_dim = embed;
  c.depth = depth;
  c.heads = heads;
  c.image_size = 32;
  c.patch_size = 16;
  c.num_frames = 4;
  c.tubelet_depth = 2;
  c.recon_frames = 4;
  return c;
}

std::vector<float> randu(Rng& rng, std::int64_t n, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

fs::path tmp_dir() {
  auto p = fs::temp_directory_path() / "echomae_model_tests";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("token_grid: hyperparameter-table arithmetic") {
  ModelConfig a = ModelConfig::preset(ArchSize::kBase);
  a.image_size = 112;
  a.patch_size = 16;
  a.num_frames = 32;
  a.tubelet_depth = 2;
  TokenGrid ga = token_grid(a);
  CHECK(ga.t == 16);
  CHECK(ga.h == 7);
  CHECK(ga.w == 7);
  CHECK(ga.n_tokens == 784);

  ModelConfig b = ModelConfig::preset(ArchSize::kLarge);
  b.image_size = 224;
  b.patch_size = 16;
  b.num_frames = 16;
  b.tubelet_depth = 2;
  b.recon_frames = 8;
  TokenGrid gb = token_grid(b);
  CHECK(gb.t == 8);
  CHECK(gb.h == 14);
  CHECK(gb.n_tokens == 1568);

  ModelConfig c = ModelConfig::preset(ArchSize::kToy);
  c.image_size = 16;
  c.patch_size = 16;
  c.num_frames = 1;
  c.tubelet_depth = 1;
  c.recon_frames = 1;
  TokenGrid gc = token_grid(c);
  CHECK(gc.t == 1);
  CHECK(gc.n_tokens == 1);
}

TEST_CASE("token_grid: divisibility violation names the offending pair") {
  ModelConfig c = ModelConfig::preset(ArchSize::kToy);
  c.image_size = 100;
  c.patch_size = 16;
  bool threw = false;
  try {
    token_grid(c);
  } catch (const ConfigError& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("100") != std::string::npos);
    CHECK(msg.find("16") != std::string::npos);
  }
  CHECK(threw);

  ModelConfig d = ModelConfig::preset(ArchSize::kToy);
  d.num_frames = 7;
  d.tubelet_depth = 2;
  CHECK_THROWS_AS(token_grid(d), ConfigError);
}

TEST_CASE("tubelet_embed: shape, zero case, hand matmul on a single tubelet") {
  ModelConfig cfg = tiny_config();
  VivitModel zeros(cfg, InitMode::kZeros);
  Tape tape;
  std::vector<float> video(static_cast<std::size_t>(cfg.num_frames) * 32 * 32, 0.0f);
  auto seq = zeros.tubelet_embed(tape, tape.input({cfg.num_frames, 32, 32}, video));
  CHECK(seq.tokens.shape() == Shape{8, cfg.embed_dim});
  for (float v : seq.tokens.value()) CHECK(v == 0.0f);

  // single-tubelet config: the one token is flatten(video) . W + b
  ModelConfig one = tiny_config(8, 1, 2);
  one.image_size = 16;
  one.patch_size = 16;
  one.num_frames = 2;
  one.tubelet_depth = 2;
  one.recon_frames = 2;
  VivitModel m(one, InitMode::kRandom, 3);
  Rng rng(5);
  std::vector<float> vid = randu(rng, 2 * 16 * 16);
  Tape t2;
  auto out = m.tubelet_embed(t2, t2.input({2, 16, 16}, vid));
  REQUIRE(out.tokens.shape() == Shape{1, 8});
  const Variable* W = m.find("embed.proj.weight");
  const Variable* B = m.find("embed.proj.bias");
  for (int j = 0; j < 8; ++j) {
    double acc = B->value[static_cast<std::size_t>(j)];
    for (int i = 0; i < 512; ++i) {
      acc += static_cast<double>(vid[static_cast<std::size_t>(i)]) *
             W->value[static_cast<std::size_t>(i) * 8 + j];
    }
    CHECK(out.tokens.value()[static_cast<std::size_t>(j)] ==
          doctest::Approx(acc).epsilon(1e-5));
  }

  Tape t3;
  CHECK_THROWS_AS(m.tubelet_embed(t3, t3.full({4, 16, 16}, 0.0f)), ConfigError);
}

TEST_CASE("add_embeddings: zero tables, class token, positional decomposition") {
  ModelConfig cfg = tiny_config();
  const TokenGrid g = token_grid(cfg);
  Rng rng(11);
  Tape tape;
  const std::vector<float> tok = randu(rng, g.n_tokens * cfg.embed_dim);
  TokenSequence seq{tape.input({g.n_tokens, cfg.embed_dim}, tok), g, false};

  auto zp = tape.full({g.h * g.w, cfg.embed_dim}, 0.0f);
  auto zt = tape.full({g.t, cfg.embed_dim}, 0.0f);
  TokenSequence same = add_embeddings(tape, seq, zp, zt);
  CHECK(std::vector<float>(same.tokens.value().begin(), same.tokens.value().end()) == tok);

  auto cls = tape.full({1, cfg.embed_dim}, 0.5f);
  TokenSequence with_cls = add_embeddings(tape, seq, zp, zt, cls);
  CHECK(with_cls.tokens.shape()[0] == g.n_tokens + 1);
  CHECK(with_cls.has_class_token);
  CHECK(with_cls.tokens.value()[0] == 0.5f);

  // equal input tokens at one time index: outputs differ by exactly the
  // difference of their positional rows
  auto pos = tape.input({g.h * g.w, cfg.embed_dim}, randu(rng, g.h * g.w * cfg.embed_dim));
  auto tmp = tape.input({g.t, cfg.embed_dim}, randu(rng, g.t * cfg.embed_dim));
  std::vector<float> equal_tokens(static_cast<std::size_t>(g.n_tokens * cfg.embed_dim));
  for (int r = 0; r < g.n_tokens; ++r) {
    for (int j = 0; j < cfg.embed_dim; ++j) {
      equal_tokens[static_cast<std::size_t>(r * cfg.embed_dim + j)] =
          tok[static_cast<std::size_t>(j)];
    }
  }
  TokenSequence eq{tape.input({g.n_tokens, cfg.embed_dim}, equal_tokens), g, false};
  TokenSequence out = add_embeddings(tape, eq, pos, tmp);
  // tokens 0 and 1 share time index 0; spatial rows 0 and 1
  for (int j = 0; j < cfg.embed_dim; ++j) {
    const float diff = out.tokens.value()[static_cast<std::size_t>(j)] -
                       out.tokens.value()[static_cast<std::size_t>(cfg.embed_dim + j)];
    const float want = pos.value()[static_cast<std::size_t>(j)] -
                       pos.value()[static_cast<std::size_t>(cfg.embed_dim + j)];
    CHECK(diff == doctest::Approx(want).epsilon(1e-5));
  }

  auto bad_pos = tape.full({g.h * g.w + 1, cfg.embed_dim}, 0.0f);
  CHECK_THROWS_AS(add_embeddings(tape, seq, bad_pos, zt), ConfigError);
}

TEST_CASE("encoder_forward: zeroed output projections give the identity map") {
  ModelConfig cfg = tiny_config();
  VivitModel m(cfg, InitMode::kRandom, 17);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "enc.block" + std::to_string(i) + ".";
    for (const char* n : {"attn.proj.weight", "attn.proj.bias", "mlp.fc2.weight", "mlp.fc2.bias"}) {
      Variable* v = m.find(p + n);
      REQUIRE(v != nullptr);
      std::fill(v->value.begin(), v->value.end(), 0.0f);
    }
  }
  Rng rng(23);
  Tape tape;
  const TokenGrid g = token_grid(cfg);
  const std::vector<float> tok = randu(rng, g.n_tokens * cfg.embed_dim);
  TokenSequence seq{tape.input({g.n_tokens, cfg.embed_dim}, tok), g, false};
  EncoderOutput out = m.encoder_forward(tape, seq);
  CHECK(std::vector<float>(out.latent.value().begin(), out.latent.value().end()) == tok);
}

TEST_CASE("encoder_forward: permutation equivariance of a 1-block encoder") {
  ModelConfig cfg = tiny_config(16, 1, 4);
  VivitModel m(cfg, InitMode::kRandom, 29);
  const TokenGrid g = token_grid(cfg);
  REQUIRE(g.n_tokens == 8);
  Rng rng(31);
  const std::vector<float> tok = randu(rng, g.n_tokens * cfg.embed_dim);
  std::vector<int> perm{3, 1, 7, 0, 5, 2, 6, 4};

  Tape t1;
  TokenSequence seq{t1.input({8, cfg.embed_dim}, tok), g, false};
  auto base = m.encoder_forward(t1, seq).latent;

  Tape t2;
  auto permuted_in = gather_rows(t2.input({8, cfg.embed_dim}, tok), perm);
  auto permuted_out = m.encoder_forward(t2, TokenSequence{permuted_in, g, false}).latent;

  for (int r = 0; r < 8; ++r) {
    for (int j = 0; j < cfg.embed_dim; ++j) {
      CHECK(permuted_out.value()[static_cast<std::size_t>(r * cfg.embed_dim + j)] ==
            doctest::Approx(base.value()[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)] *
                                                                  cfg.embed_dim + j)])
                .epsilon(1e-4));
    }
  }
}

TEST_CASE("regression_head: bias, one-hot selection, mean pooling by hand") {
  ModelConfig cfg = tiny_config(4, 1, 2);
  VivitModel m(cfg, InitMode::kZeros);
  m.find("head.bias")->value[0] = 3.5f;
  Tape tape;
  EncoderOutput latent{tape.input({2, 4}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8})};
  CHECK(m.regression_head(tape, latent).scalar() == doctest::Approx(3.5));

  Variable* w = m.find("head.weight");
  w->value = {0, 0, 1, 0};
  m.find("head.bias")->value[0] = 0.0f;
  EncoderOutput single{tape.input({1, 4}, std::vector<float>{10, 20, 30, 40})};
  CHECK(m.regression_head(tape, single).scalar() == doctest::Approx(30.0));

  w->value = {0.5f, -1.0f, 2.0f, 0.25f};
  m.find("head.bias")->value[0] = 1.0f;
  // mean of the two rows is [3,4,5,6]; dot + bias = 1.5-4+10+1.5+1 = 10
  CHECK(m.regression_head(tape, latent).scalar() == doctest::Approx(10.0));
}

TEST_CASE("class token pooling selects row 0") {
  ModelConfig cfg = tiny_config(4, 1, 2);
  cfg.use_class_token = true;
  VivitModel m(cfg, InitMode::kZeros);
  m.find("head.weight")->value = {1, 1, 1, 1};
  Tape tape;
  EncoderOutput latent{tape.input({2, 4}, std::vector<float>{1, 2, 3, 4, 100, 100, 100, 100})};
  CHECK(m.regression_head(tape, latent).scalar() == doctest::Approx(10.0));
}

TEST_CASE("end-to-end gradient: toy-scale model passes finite differences") {
  ModelConfig cfg = tiny_config(16, 2, 4);
  VivitModel m(cfg, InitMode::kRandom, 41);
  Variable video("video", {cfg.num_frames, cfg.image_size, cfg.image_size});
  Rng rng(43);
  for (auto& v : video.value) v = static_cast<float>(rng.uniform(-1, 1));

  auto fwd = [&](Tape& t) {
    auto pred = m.forward_ef(t, t.leaf(video));
    return mse_loss(pred, t.input({1, 1}, std::vector<float>{42.0f}));
  };
  std::vector<Variable*> vars = m.parameters();
  vars.push_back(&video);
  GradCheckOptions opts;
  opts.max_probes = 5;
  auto rep = gradcheck(fwd, vars, opts);
  INFO("max_abs ", rep.max_abs_err, " max_rel ", rep.max_rel_err, " checked ", rep.checked);
  CHECK(rep.ok);
}

TEST_CASE("param_count: closed form matches allocation for all sizes") {
  for (ArchSize arch : {ArchSize::kToy, ArchSize::kBase, ArchSize::kLarge}) {
    ModelConfig cfg = ModelConfig::preset(arch);
    cfg.image_size = 112;
    cfg.num_frames = 32;
    cfg.recon_frames = 32;
    VivitModel m(cfg, InitMode::kZeros);
    CHECK(m.parameter_total() == VivitModel::param_count(cfg));
  }
  ModelConfig with_cls = tiny_config();
  with_cls.use_class_token = true;
  VivitModel m(with_cls, InitMode::kZeros);
  CHECK(m.parameter_total() == VivitModel::param_count(with_cls));
}

TEST_CASE("checkpoint: save-load-save is byte identical") {
  ModelConfig cfg = tiny_config();
  VivitModel m(cfg, InitMode::kRandom, 51);
  const auto p1 = (tmp_dir() / "a.eaiw").string();
  const auto p2 = (tmp_dir() / "b.eaiw").string();
  auto params = m.parameters();
  save_checkpoint(p1, params);

  VivitModel m2(cfg, InitMode::kZeros);
  auto params2 = m2.parameters();
  restore_variables(params2, load_checkpoint_file(p1), RestorePolicy::kExact);
  save_checkpoint(p2, params2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK(!b1.empty());
}

TEST_CASE("checkpoint: loading into a different architecture is a schema error") {
  ModelConfig small = tiny_config(16, 2, 4);
  ModelConfig large = tiny_config(32, 3, 4);
  VivitModel a(small, InitMode::kRandom, 1);
  VivitModel b(large, InitMode::kZeros);
  const auto path = (tmp_dir() / "arch.eaiw").string();
  auto pa = a.parameters();
  save_checkpoint(path, pa);
  auto pb = b.parameters();
  bool threw = false;
  try {
    restore_variables(pb, load_checkpoint_file(path), RestorePolicy::kExact);
  } catch (const SchemaError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("enc.block2") != std::string::npos);  // missing block
  }
  CHECK(threw);
}

TEST_CASE("checkpoint: tampering one payload byte changes exactly one value") {
  ModelConfig cfg = tiny_config(8, 1, 2);
  VivitModel m(cfg, InitMode::kRandom, 61);
  const auto path = (tmp_dir() / "fuzz.eaiw").string();
  auto params = m.parameters();
  save_checkpoint(path, params);

  // flip one bit somewhere inside the first tensor's float payload
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    // header(12) + name len(2) + "embed.proj.weight"(17) + ndim(1) + dims(8)
    const std::size_t off = 12 + 2 + 17 + 1 + 8 + 10;
    f.seekg(static_cast<std::streamoff>(off));
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x10);
    f.seekp(static_cast<std::streamoff>(off));
    f.write(&c, 1);
  }
  auto tensors = load_checkpoint_file(path);
  int diffs = 0;
  for (const auto& t : tensors) {
    const Variable* v = m.find(t.name);
    REQUIRE(v != nullptr);
    REQUIRE(t.values.size() == v->value.size());
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      std::uint32_t a, b;
      std::memcpy(&a, &t.values[i], 4);
      std::memcpy(&b, &v->value[i], 4);
      if (a != b) ++diffs;
    }
  }
  CHECK(diffs == 1);
}
