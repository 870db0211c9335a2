#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "stylemetric/encoder.hpp"
#include "stylemetric/losses.hpp"
#include "stylemetric/util.hpp"

using namespace stylemetric;

namespace {

EncoderDims toy_dims() {
  EncoderDims d;
  d.token_dim = 6;
  d.filters_per_width = 3;
  d.filter_widths = {2, 3};
  d.text_dim = 8;
  d.time_dim = 3;
  d.ctx_dim = 5;
  d.embed_dim = 8;
  d.heads = 2;
  d.max_len = 12;
  d.num_contexts = 4;
  return d;
}

EpisodeSet random_set(const EncoderDims& dims, std::size_t length, int label,
                      std::mt19937_64& rng) {
  EpisodeSet set;
  set.author_label = label;
  for (std::size_t i = 0; i < length; ++i) {
    Episode ep;
    std::string text;
    for (std::size_t c = 0; c < 1 + bounded_draw(rng, dims.max_len - 1); ++c) {
      text.push_back(static_cast<char>('a' + bounded_draw(rng, 26)));
    }
    ep.tokens = tokenize_bytes(text, dims.max_len);
    ep.day_of_week = static_cast<int>(bounded_draw(rng, 7));
    ep.context_id = static_cast<int>(bounded_draw(rng, dims.num_contexts));
    set.episodes.push_back(std::move(ep));
  }
  return set;
}

}  // namespace

TEST_CASE("tokenize_bytes maps bytes, special tokens and padding") {
  auto ids = tokenize_bytes("ab", 8);
  CHECK(ids.size() == 8);
  CHECK(ids[0] == 97);
  CHECK(ids[1] == 98);
  for (std::size_t i = 2; i < 8; ++i) CHECK(ids[i] == kPadToken);

  auto link = tokenize_bytes("[LINK]", 4);
  CHECK(link[0] == special_token_id("[LINK]"));
  CHECK(link[1] == kPadToken);

  auto empty = tokenize_bytes("", 5);
  CHECK(empty == std::vector<std::size_t>(5, kPadToken));

  // Truncation to max_len.
  CHECK(tokenize_bytes("abcdef", 3).size() == 3);

  // Multi-word special literal.
  auto pgp = tokenize_bytes("x[PGP PUBKEY]y", 6);
  CHECK(pgp[0] == 'x');
  CHECK(pgp[1] == special_token_id("[PGP PUBKEY]"));
  CHECK(pgp[2] == 'y');
}

TEST_CASE("encode_text contracts") {
  EncoderDims dims = toy_dims();
  EncoderParams params = EncoderParams::init(dims, 0);
  EncodeContext ctx;  // eval mode

  // All-pad input goes through the pad-embedding path deterministically.
  auto pad_tokens = tokenize_bytes("", dims.max_len);
  Tensor v1 = encode_text(pad_tokens, params, ctx);
  Tensor v2 = encode_text(pad_tokens, params, ctx);
  CHECK(v1.shape() == std::vector<std::size_t>{dims.text_dim});
  CHECK(v1.data() == v2.data());

  // Output shape is d_txt regardless of input length, including inputs
  // shorter than the widest filter.
  for (const char* text : {"q", "ab", "hello world this is long"}) {
    CHECK(encode_text(tokenize_bytes(text, dims.max_len), params, ctx).shape() ==
          std::vector<std::size_t>{dims.text_dim});
  }

  // Token order matters once filter widths exceed 1.
  auto fwd = tokenize_bytes("abcdef", dims.max_len);
  auto rev = tokenize_bytes("fedcba", dims.max_len);
  CHECK(encode_text(fwd, params, ctx).data() != encode_text(rev, params, ctx).data());
}

TEST_CASE("embed_time is a checked row lookup") {
  EncoderParams params = EncoderParams::init(toy_dims(), 1);
  Tensor day0 = embed_time(0, params);
  const auto& table = params.time_table.data();
  for (std::size_t j = 0; j < params.dims.time_dim; ++j) CHECK(day0.at(j) == table[j]);
  CHECK(embed_time(3, params).data() == embed_time(3, params).data());
  CHECK_THROWS_AS(embed_time(7, params), std::runtime_error);
  CHECK_THROWS_AS(embed_time(-1, params), std::runtime_error);
}

TEST_CASE("embed_context lookup and metapath initialization contract") {
  EncoderParams params = EncoderParams::init(toy_dims(), 2);
  Tensor row0 = embed_context(0, params);
  for (std::size_t j = 0; j < params.dims.ctx_dim; ++j) {
    CHECK(row0.at(j) == params.ctx_table.data()[j]);
  }
  CHECK_THROWS_AS(embed_context(4, params), std::runtime_error);

  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < 4; ++i) {
    rows.push_back(std::vector<double>(params.dims.ctx_dim, 0.25 * (i + 1)));
  }
  params.init_context_rows(rows);
  Tensor seeded = embed_context(2, params);
  for (std::size_t j = 0; j < params.dims.ctx_dim; ++j) CHECK(seeded.at(j) == 0.75);

  rows[0].pop_back();
  CHECK_THROWS_AS(params.init_context_rows(rows), std::runtime_error);
}

TEST_CASE("episode set of identical episodes matches the single-episode output") {
  EncoderDims dims = toy_dims();
  EncoderParams params = EncoderParams::init(dims, 3);
  EncodeContext ctx;
  std::mt19937_64 rng(4);
  EpisodeSet one = random_set(dims, 1, 0, rng);
  EpisodeSet five = one;
  for (int i = 0; i < 4; ++i) five.episodes.push_back(one.episodes[0]);

  Tensor z1 = encode_episode_set(one, params, ctx);
  Tensor z5 = encode_episode_set(five, params, ctx);
  CHECK(z1.shape() == std::vector<std::size_t>{dims.embed_dim});
  for (std::size_t j = 0; j < dims.embed_dim; ++j) {
    CHECK(z5.at(j) == doctest::Approx(z1.at(j)).epsilon(1e-12));
  }
}

TEST_CASE("episode permutation leaves z unchanged") {
  EncoderDims dims = toy_dims();
  EncoderParams params = EncoderParams::init(dims, 5);
  EncodeContext ctx;
  std::mt19937_64 rng(6);
  EpisodeSet set = random_set(dims, 5, 0, rng);
  Tensor z = encode_episode_set(set, params, ctx);

  std::mt19937_64 shuffle_rng(7);
  for (int round = 0; round < 3; ++round) {
    EpisodeSet permuted = set;
    std::shuffle(permuted.episodes.begin(), permuted.episodes.end(), shuffle_rng);
    Tensor zp = encode_episode_set(permuted, params, ctx);
    for (std::size_t j = 0; j < dims.embed_dim; ++j) {
      CHECK(std::abs(zp.at(j) - z.at(j)) <= 1e-12);
    }
  }
}

TEST_CASE("dropout in train mode is seeded and disabled at eval") {
  EncoderDims dims = toy_dims();
  EncoderParams params = EncoderParams::init(dims, 8);
  std::mt19937_64 rng(9);
  EpisodeSet set = random_set(dims, 3, 0, rng);

  std::mt19937_64 d1(42), d2(42);
  EncodeContext t1{TrainMode::Train, &d1}, t2{TrainMode::Train, &d2};
  CHECK(encode_episode_set(set, params, t1).data() ==
        encode_episode_set(set, params, t2).data());

  EncodeContext e1, e2;
  CHECK(encode_episode_set(set, params, e1).data() ==
        encode_episode_set(set, params, e2).data());
}

TEST_CASE("end-to-end encoder gradient passes the finite difference check") {
  EncoderDims dims = toy_dims();
  for (std::uint64_t seed : {0u, 1u}) {
    EncoderParams params = EncoderParams::init(dims, seed);
    std::mt19937_64 rng(derive_seed(seed, 21));
    std::vector<EpisodeSet> sets;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      sets.push_back(random_set(dims, 2, i % 2, rng));
      labels.push_back(i % 2);
    }
    std::mt19937_64 head_rng(derive_seed(seed, 22));
    ClassifierHead head = ClassifierHead::init(2, dims.embed_dim, head_rng);
    LossConfig cfg;

    auto loss_fn = [&] {
      EncodeContext ctx;  // eval mode keeps the loss deterministic
      std::vector<Tensor> zs;
      for (const auto& s : sets) zs.push_back(encode_episode_set(s, params, ctx));
      return nbc_softmax_combined(stack_rows(zs), labels, head, cfg);
    };
    std::vector<Tensor> all_params;
    for (auto& [name, t] : params.named_tensors()) all_params.push_back(t);
    all_params.push_back(head.weights);

    INFO("seed " << seed);
    CHECK(finite_difference_check(loss_fn, all_params, 1e-5, 25, seed) <= 1e-4);
  }
}
