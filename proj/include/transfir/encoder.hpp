#pragma once

// Interaction-chain encoder: per-component transforms fused into one token
// per interaction, a pre-norm transformer over each chain, and attention
// pooling guided by the query relation.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transfir/chain.hpp"
#include "transfir/numerics.hpp"

namespace transfir::encoder {

using numerics::Tape;
using numerics::Tensor;

struct Affine {
    Tensor weight;  // in×out
    Tensor bias;    // out

    static Affine init(std::size_t in, std::size_t out, std::mt19937_64& rng);
    Tensor operator()(Tape& tape, const Tensor& x) const { return numerics::linear(tape, x, weight, bias); }
    void collect(const std::string& prefix, numerics::ParamList& out) const;
};

struct TransformerLayer {
    Tensor norm1_gain, norm1_shift;
    Affine query, key, value, output;
    Tensor norm2_gain, norm2_shift;
    Affine ffn_in, ffn_out;

    static TransformerLayer init(std::size_t d, std::size_t ffn_width, std::mt19937_64& rng);
    void collect(const std::string& prefix, numerics::ParamList& out) const;
};

struct EncoderParams {
    Affine phi_entity, phi_relation, phi_time;
    Affine fuse;  // 4d -> d, followed by tanh
    std::vector<TransformerLayer> layers;
    std::size_t heads = 4;
    Tensor attn_w;        // d×1
    Tensor attn_states;   // W_h, d×d
    Tensor attn_query;    // W_q, d×d

    static EncoderParams init(std::size_t d, std::size_t layers, std::size_t heads, std::mt19937_64& rng);
    std::size_t dim() const { return attn_states.rows(); }
    void collect(const std::string& prefix, numerics::ParamList& out) const;
};

// Sinusoidal code of a positive time gap: entries 2j, 2j+1 are
// sin/cos(gap / 10000^(2j/d)).
Tensor embed_time_gap(std::size_t gap, std::size_t d);
// One row per gap.
Tensor time_gap_codes(std::span<const std::size_t> gaps, std::size_t d);

// tanh(fuse([φ_e(h_s) ‖ φ_r(h_r) ‖ φ_e(h_o) ‖ φ_τ(h_Δt)])) for each item.
Tensor fuse_tokens(Tape& tape, const EncoderParams& params, const Tensor& entities, const Tensor& relations,
                   std::span<const chain::ChainItem> items);
Tensor fuse_token(Tape& tape, const EncoderParams& params, const Tensor& entities, const Tensor& relations,
                  const chain::ChainItem& item);

// Transformer stack over token rows; attention never crosses segment borders.
Tensor encode_segments(Tape& tape, const EncoderParams& params, const Tensor& tokens,
                       std::span<const std::size_t> offsets);
// Single chain of n >= 1 tokens.
Tensor encode_chain(Tape& tape, const EncoderParams& params, const Tensor& tokens);

// Attention weights α (N×1) of each state within its segment given one query
// relation row per segment (S×d).
Tensor relation_attention_weights(Tape& tape, const EncoderParams& params, const Tensor& states,
                                  std::span<const std::size_t> offsets, const Tensor& query_relations);

struct PooledChains {
    Tensor reps;              // S×d, zero rows for empty chains
    std::vector<bool> empty;  // chain had no interactions
};

PooledChains relation_guided_attention(Tape& tape, const EncoderParams& params, const Tensor& states,
                                       std::span<const std::size_t> offsets, const Tensor& query_relations);
// One chain: states n×d (n may be 0), query relation 1×d.
PooledChains relation_guided_attention(Tape& tape, const EncoderParams& params, const Tensor& states,
                                       const Tensor& query_relation);

// Full chain encoding for a batch: tokens, transformer, pooling.
PooledChains encode_chains(Tape& tape, const EncoderParams& params, const Tensor& entities, const Tensor& relations,
                           std::span<const chain::InteractionChain> chains);

}  // namespace transfir::encoder
