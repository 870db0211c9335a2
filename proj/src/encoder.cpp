#include "stylemetric/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stylemetric/util.hpp"

namespace stylemetric {

const std::vector<std::string>& special_token_literals() {
  static const std::vector<std::string> literals = {
      "[QUOTE]", "[PGP PUBKEY]", "[PGP SIGNATURE]", "[PGP ENCMSG]", "[LINK]", "[IMAGE]",
  };
  return literals;
}

std::size_t special_token_id(const std::string& literal) {
  const auto& lits = special_token_literals();
  for (std::size_t i = 0; i < lits.size(); ++i) {
    if (lits[i] == literal) return 256 + i;
  }
  throw std::runtime_error("unknown special token: " + literal);
}

std::vector<std::size_t> tokenize_bytes(const std::string& text, std::size_t max_len) {
  if (max_len == 0) throw std::runtime_error("tokenize_bytes: max_len must be positive");
  std::vector<std::size_t> ids;
  ids.reserve(max_len);
  const auto& lits = special_token_literals();
  std::size_t pos = 0;
  while (pos < text.size() && ids.size() < max_len) {
    bool matched = false;
    for (std::size_t s = 0; s < lits.size(); ++s) {
      if (text.compare(pos, lits[s].size(), lits[s]) == 0) {
        ids.push_back(256 + s);
        pos += lits[s].size();
        matched = true;
        break;
      }
    }
    if (!matched) {
      ids.push_back(static_cast<unsigned char>(text[pos]));
      ++pos;
    }
  }
  ids.resize(max_len, kPadToken);
  return ids;
}

// ---------------------------------------------------------------------------
// Parameter init
// ---------------------------------------------------------------------------

namespace {

Tensor glorot(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  double fan = 0;
  for (auto d : shape) fan += static_cast<double>(d);
  return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / fan), true);
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderDims& dims, std::uint64_t seed) {
  if (dims.episode_dim() != dims.text_dim + dims.time_dim + dims.ctx_dim) {
    throw std::runtime_error("encoder dims: d_e bookkeeping is broken");
  }
  if (dims.heads == 0 || dims.episode_dim() % dims.heads != 0) {
    throw std::runtime_error("encoder dims: heads must divide d_e = " +
                             std::to_string(dims.episode_dim()));
  }
  if (dims.num_contexts == 0) throw std::runtime_error("encoder dims: no contexts");
  std::mt19937_64 rng(derive_seed(seed, 0xe4c0d3));

  EncoderParams p;
  p.dims = dims;
  const std::size_t de = dims.episode_dim();
  p.token_table = Tensor::randn({kVocabSize, dims.token_dim}, rng, 0.1, true);
  for (std::size_t w : dims.filter_widths) {
    p.conv_filters.push_back(glorot({w * dims.token_dim, dims.filters_per_width}, rng));
  }
  p.text_proj_w = glorot({dims.pooled_dim(), dims.text_dim}, rng);
  p.text_proj_b = Tensor::zeros({dims.text_dim}, true);
  p.time_table = Tensor::randn({7, dims.time_dim}, rng, 0.1, true);
  p.ctx_table = Tensor::randn({dims.num_contexts, dims.ctx_dim}, rng, 0.1, true);
  p.attn_q = glorot({de, de}, rng);
  p.attn_k = glorot({de, de}, rng);
  p.attn_v = glorot({de, de}, rng);
  p.attn_o = glorot({de, de}, rng);
  p.ff_w1 = glorot({de, 2 * de}, rng);
  p.ff_b1 = Tensor::zeros({2 * de}, true);
  p.ff_w2 = glorot({2 * de, de}, rng);
  p.ff_b2 = Tensor::zeros({de}, true);
  p.out_proj = glorot({de, dims.embed_dim}, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named_shared_tensors() const {
  std::vector<std::pair<std::string, Tensor>> named;
  named.emplace_back("enc/token_table", token_table);
  for (std::size_t i = 0; i < conv_filters.size(); ++i) {
    named.emplace_back("enc/conv_w" + std::to_string(dims.filter_widths[i]),
                       conv_filters[i]);
  }
  named.emplace_back("enc/text_proj_w", text_proj_w);
  named.emplace_back("enc/text_proj_b", text_proj_b);
  named.emplace_back("enc/time_table", time_table);
  named.emplace_back("enc/attn_q", attn_q);
  named.emplace_back("enc/attn_k", attn_k);
  named.emplace_back("enc/attn_v", attn_v);
  named.emplace_back("enc/attn_o", attn_o);
  named.emplace_back("enc/ff_w1", ff_w1);
  named.emplace_back("enc/ff_b1", ff_b1);
  named.emplace_back("enc/ff_w2", ff_w2);
  named.emplace_back("enc/ff_b2", ff_b2);
  named.emplace_back("enc/out_proj", out_proj);
  return named;
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named_tensors() const {
  auto named = named_shared_tensors();
  named.emplace_back("enc/ctx_table", ctx_table);
  return named;
}

void EncoderParams::init_context_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.size() != dims.num_contexts) {
    throw std::runtime_error("context init: " + std::to_string(rows.size()) + " rows for " +
                             std::to_string(dims.num_contexts) + " contexts");
  }
  auto& data = ctx_table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dims.ctx_dim) {
      throw std::runtime_error("context init: row " + std::to_string(i) + " has dim " +
                               std::to_string(rows[i].size()) + ", expected " +
                               std::to_string(dims.ctx_dim));
    }
    std::copy(rows[i].begin(), rows[i].end(), data.begin() + i * dims.ctx_dim);
  }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

Tensor encode_text(const std::vector<std::size_t>& tokens, const EncoderParams& params,
                   EncodeContext& ctx) {
  const auto& dims = params.dims;
  std::vector<std::size_t> ids = tokens;
  const std::size_t max_width =
      *std::max_element(dims.filter_widths.begin(), dims.filter_widths.end());
  if (ids.size() < max_width) ids.resize(max_width, kPadToken);

  Tensor seq = embedding_lookup(params.token_table, ids);
  std::vector<Tensor> pooled;
  for (std::size_t i = 0; i < dims.filter_widths.size(); ++i) {
    Tensor windows = unfold(seq, dims.filter_widths[i]);
    Tensor fmap = tanh_op(matmul(windows, params.conv_filters[i]));
    pooled.push_back(max_over_rows(fmap));
  }
  Tensor features = concat1d(pooled);
  if (ctx.mode == TrainMode::Train) {
    if (!ctx.rng) throw std::runtime_error("encode_text: train mode needs an rng");
    features = dropout(features, dims.dropout_rate, ctx.mode, *ctx.rng);
  }
  Tensor projected = matmul(reshape(features, {1, dims.pooled_dim()}), params.text_proj_w);
  return add(reshape(projected, {dims.text_dim}), params.text_proj_b);
}

Tensor embed_time(int day_of_week, const EncoderParams& params) {
  if (day_of_week < 0 || day_of_week > 6) {
    throw std::runtime_error("embed_time: day " + std::to_string(day_of_week) +
                             " out of range [0, 6]");
  }
  Tensor row = embedding_lookup(params.time_table, {static_cast<std::size_t>(day_of_week)});
  return reshape(row, {params.dims.time_dim});
}

Tensor embed_context(int context_id, const EncoderParams& params) {
  if (context_id < 0 || static_cast<std::size_t>(context_id) >= params.dims.num_contexts) {
    throw std::runtime_error("embed_context: id " + std::to_string(context_id) +
                             " out of range for " +
                             std::to_string(params.dims.num_contexts) + " contexts");
  }
  Tensor row = embedding_lookup(params.ctx_table, {static_cast<std::size_t>(context_id)});
  return reshape(row, {params.dims.ctx_dim});
}

Tensor encode_episode_set(const EpisodeSet& set, const EncoderParams& params,
                          EncodeContext& ctx) {
  if (set.episodes.empty()) throw std::runtime_error("encode_episode_set: empty set");
  const auto& dims = params.dims;
  const std::size_t de = dims.episode_dim();

  std::vector<Tensor> rows;
  rows.reserve(set.episodes.size());
  for (const auto& ep : set.episodes) {
    Tensor txt = encode_text(ep.tokens, params, ctx);
    Tensor time = embed_time(ep.day_of_week, params);
    Tensor forum = embed_context(ep.context_id, params);
    rows.push_back(concat1d({txt, time, forum}));
  }
  Tensor x = stack_rows(rows);  // L x d_e

  // One self-attention block, no positional encoding.
  Tensor q = matmul(x, params.attn_q);
  Tensor k = matmul(x, params.attn_k);
  Tensor v = matmul(x, params.attn_v);
  const std::size_t dh = de / dims.heads;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < dims.heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores =
        scale(matmul(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  Tensor attended = add(x, matmul(concat_cols(heads), params.attn_o));

  Tensor hidden = tanh_op(add_rowwise(matmul(attended, params.ff_w1), params.ff_b1));
  Tensor transformed =
      add(attended, add_rowwise(matmul(hidden, params.ff_w2), params.ff_b2));

  Tensor pooled =
      masked_mean_rows(transformed, std::vector<double>(set.episodes.size(), 1.0));
  Tensor z = matmul(reshape(pooled, {1, de}), params.out_proj);
  return reshape(z, {dims.embed_dim});
}

}  // namespace stylemetric
