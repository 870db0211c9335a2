#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stylemetric/tensor.hpp"

namespace stylemetric {

// ---------------------------------------------------------------------------
// Byte tokenizer. Vocabulary: 256 raw bytes, 6 reserved special tokens, pad.
// ---------------------------------------------------------------------------

constexpr std::size_t kNumSpecialTokens = 6;
constexpr std::size_t kPadToken = 256 + kNumSpecialTokens;  // 262
constexpr std::size_t kVocabSize = kPadToken + 1;           // 263

/// The special-token literals, in id order (id = 256 + index).
const std::vector<std::string>& special_token_literals();
std::size_t special_token_id(const std::string& literal);

/// Bytes of `text` with special-token literals collapsed to their reserved
/// ids, truncated or padded to exactly max_len.
std::vector<std::size_t> tokenize_bytes(const std::string& text, std::size_t max_len);

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct Episode {
  std::vector<std::size_t> tokens;  // length max_len
  int day_of_week = 0;              // 0..6, 0 = Monday
  int context_id = 0;               // row of the context table
};

struct EpisodeSet {
  std::vector<Episode> episodes;  // exactly L
  int author_label = -1;
};

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncoderDims {
  std::size_t token_dim = 32;                    // d_t
  std::size_t filters_per_width = 16;            // f_n
  std::vector<std::size_t> filter_widths = {2, 3, 4, 5};
  std::size_t text_dim = 64;                     // d_txt
  std::size_t time_dim = 8;                      // d_time
  std::size_t ctx_dim = 32;                      // d_ctx
  std::size_t embed_dim = 64;                    // E
  std::size_t heads = 2;
  std::size_t max_len = 256;
  std::size_t num_contexts = 1;
  double dropout_rate = 0.5;

  std::size_t episode_dim() const { return text_dim + time_dim + ctx_dim; }  // d_e
  std::size_t pooled_dim() const { return filter_widths.size() * filters_per_width; }
};

struct EncoderParams {
  EncoderDims dims;
  Tensor token_table;                 // |V| x d_t
  std::vector<Tensor> conv_filters;   // per width: (w * d_t) x f_n
  Tensor text_proj_w;                 // pooled_dim x d_txt
  Tensor text_proj_b;                 // d_txt
  Tensor time_table;                  // 7 x d_time
  Tensor ctx_table;                   // num_contexts x d_ctx
  Tensor attn_q, attn_k, attn_v, attn_o;  // d_e x d_e
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;      // d_e x 2d_e, 2d_e, 2d_e x d_e, d_e
  Tensor out_proj;                    // d_e x E

  static EncoderParams init(const EncoderDims& dims, std::uint64_t seed);

  /// All parameter tensors with stable names, for optimizers and checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  /// Everything except the context table, which multitask training owns
  /// per market.
  std::vector<std::pair<std::string, Tensor>> named_shared_tensors() const;

  /// Seed context rows from externally trained embeddings (one vector per
  /// context id); dimensions must match d_ctx.
  void init_context_rows(const std::vector<std::vector<double>>& rows);
};

/// Per-call state for encoding: train/eval switch and the dropout stream.
struct EncodeContext {
  TrainMode mode = TrainMode::Eval;
  std::mt19937_64* rng = nullptr;  // required in train mode
};

Tensor encode_text(const std::vector<std::size_t>& tokens, const EncoderParams& params,
                   EncodeContext& ctx);
Tensor embed_time(int day_of_week, const EncoderParams& params);
Tensor embed_context(int context_id, const EncoderParams& params);
/// z = project(mean(self_attention(episode vectors))); no positional encoding,
/// so z is invariant to episode order.
Tensor encode_episode_set(const EpisodeSet& set, const EncoderParams& params,
                          EncodeContext& ctx);

}  // namespace stylemetric
