#include "transfir/encoder.hpp"

#include <cmath>

#include "transfir/error.hpp"

namespace transfir::encoder {

namespace ops = numerics;

Affine Affine::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    return {numerics::xavier_uniform(in, out, rng), Tensor::zeros({out}, true)};
}

void Affine::collect(const std::string& prefix, numerics::ParamList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

TransformerLayer TransformerLayer::init(std::size_t d, std::size_t ffn_width, std::mt19937_64& rng) {
    TransformerLayer l;
    l.norm1_gain = Tensor::full({d}, 1.0, true);
    l.norm1_shift = Tensor::zeros({d}, true);
    l.query = Affine::init(d, d, rng);
    l.key = Affine::init(d, d, rng);
    l.value = Affine::init(d, d, rng);
    l.output = Affine::init(d, d, rng);
    l.norm2_gain = Tensor::full({d}, 1.0, true);
    l.norm2_shift = Tensor::zeros({d}, true);
    l.ffn_in = Affine::init(d, ffn_width, rng);
    l.ffn_out = Affine::init(ffn_width, d, rng);
    return l;
}

void TransformerLayer::collect(const std::string& prefix, numerics::ParamList& out) const {
    out.emplace_back(prefix + ".norm1.gain", norm1_gain);
    out.emplace_back(prefix + ".norm1.shift", norm1_shift);
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
    out.emplace_back(prefix + ".norm2.gain", norm2_gain);
    out.emplace_back(prefix + ".norm2.shift", norm2_shift);
    ffn_in.collect(prefix + ".ffn_in", out);
    ffn_out.collect(prefix + ".ffn_out", out);
}

EncoderParams EncoderParams::init(std::size_t d, std::size_t layers, std::size_t heads, std::mt19937_64& rng) {
    if (layers > 4) throw ConfigError("encoder supports at most 4 transformer layers");
    if (heads == 0 || d % heads != 0) {
        throw ConfigError(std::to_string(heads) + " attention heads do not divide d=" + std::to_string(d));
    }
    EncoderParams p;
    p.phi_entity = Affine::init(d, d, rng);
    p.phi_relation = Affine::init(d, d, rng);
    p.phi_time = Affine::init(d, d, rng);
    p.fuse = Affine::init(4 * d, d, rng);
    for (std::size_t i = 0; i < layers; ++i) p.layers.push_back(TransformerLayer::init(d, 4 * d, rng));
    p.heads = heads;
    p.attn_w = numerics::xavier_uniform(d, 1, rng);
    p.attn_states = numerics::xavier_uniform(d, d, rng);
    p.attn_query = numerics::xavier_uniform(d, d, rng);
    return p;
}

void EncoderParams::collect(const std::string& prefix, numerics::ParamList& out) const {
    phi_entity.collect(prefix + ".phi_entity", out);
    phi_relation.collect(prefix + ".phi_relation", out);
    phi_time.collect(prefix + ".phi_time", out);
    fuse.collect(prefix + ".fuse", out);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    out.emplace_back(prefix + ".attn.w", attn_w);
    out.emplace_back(prefix + ".attn.states", attn_states);
    out.emplace_back(prefix + ".attn.query", attn_query);
}

Tensor embed_time_gap(std::size_t gap, std::size_t d) { return time_gap_codes(std::span(&gap, 1), d); }

Tensor time_gap_codes(std::span<const std::size_t> gaps, std::size_t d) {
    std::vector<double> values(gaps.size() * d);
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        if (gaps[i] == 0) throw ContractError("time gap must be at least 1");
        const auto gap = static_cast<double>(gaps[i]);
        for (std::size_t j = 0; 2 * j < d; ++j) {
            const double angle = gap / std::pow(10000.0, static_cast<double>(2 * j) / static_cast<double>(d));
            values[i * d + 2 * j] = std::sin(angle);
            if (2 * j + 1 < d) values[i * d + 2 * j + 1] = std::cos(angle);
        }
    }
    return Tensor::from({gaps.size(), d}, std::move(values));
}

Tensor fuse_tokens(Tape& tape, const EncoderParams& params, const Tensor& entities, const Tensor& relations,
                   std::span<const chain::ChainItem> items) {
    std::vector<std::size_t> subjects, rels, objects, gaps;
    for (const auto& it : items) {
        subjects.push_back(it.subject);
        rels.push_back(it.relation);
        objects.push_back(it.object);
        gaps.push_back(it.gap);
    }
    const std::size_t d = params.dim();
    // Entity rows enter as constants: the table is frozen.
    const Tensor frozen = entities.requires_grad() ? entities.detach() : entities;
    const Tensor hs = params.phi_entity(tape, ops::gather_rows(tape, frozen, subjects));
    const Tensor hr = params.phi_relation(tape, ops::gather_rows(tape, relations, rels));
    const Tensor ho = params.phi_entity(tape, ops::gather_rows(tape, frozen, objects));
    const Tensor ht = params.phi_time(tape, time_gap_codes(gaps, d));
    return ops::tanh(tape, params.fuse(tape, ops::concat_cols(tape, {hs, hr, ho, ht})));
}

Tensor fuse_token(Tape& tape, const EncoderParams& params, const Tensor& entities, const Tensor& relations,
                  const chain::ChainItem& item) {
    return fuse_tokens(tape, params, entities, relations, std::span(&item, 1));
}

Tensor encode_segments(Tape& tape, const EncoderParams& params, const Tensor& tokens,
                       std::span<const std::size_t> offsets) {
    Tensor x = tokens;
    for (const auto& layer : params.layers) {
        const Tensor a = ops::layer_norm(tape, x, layer.norm1_gain, layer.norm1_shift);
        const Tensor attended = ops::segment_attention(tape, layer.query(tape, a), layer.key(tape, a),
                                                       layer.value(tape, a), offsets, params.heads);
        x = ops::add(tape, x, layer.output(tape, attended));
        const Tensor b = ops::layer_norm(tape, x, layer.norm2_gain, layer.norm2_shift);
        x = ops::add(tape, x, layer.ffn_out(tape, ops::relu(tape, layer.ffn_in(tape, b))));
    }
    return x;
}

Tensor encode_chain(Tape& tape, const EncoderParams& params, const Tensor& tokens) {
    if (tokens.rows() == 0) throw ContractError("encode_chain needs at least one token");
    const std::size_t offsets[] = {0, tokens.rows()};
    return encode_segments(tape, params, tokens, offsets);
}

Tensor relation_attention_weights(Tape& tape, const EncoderParams& params, const Tensor& states,
                                  std::span<const std::size_t> offsets, const Tensor& query_relations) {
    if (query_relations.rows() + 1 != offsets.size()) {
        throw ShapeError("one query relation row is needed per segment");
    }
    std::vector<std::size_t> owner(states.rows());
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
        for (std::size_t i = offsets[s]; i < offsets[s + 1] && i < owner.size(); ++i) owner[i] = s;
    const Tensor per_token = ops::gather_rows(tape, query_relations, owner);
    const Tensor hidden = ops::tanh(tape, ops::add(tape, ops::matmul(tape, states, params.attn_states),
                                                   ops::matmul(tape, per_token, params.attn_query)));
    return ops::segment_softmax(tape, ops::matmul(tape, hidden, params.attn_w), offsets);
}

PooledChains relation_guided_attention(Tape& tape, const EncoderParams& params, const Tensor& states,
                                       std::span<const std::size_t> offsets, const Tensor& query_relations) {
    PooledChains out;
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) out.empty.push_back(offsets[s] == offsets[s + 1]);
    if (states.rows() == 0) {
        out.reps = Tensor::zeros({offsets.size() - 1, params.dim()});
        return out;
    }
    const Tensor alpha = relation_attention_weights(tape, params, states, offsets, query_relations);
    out.reps = ops::segment_weighted_sum(tape, alpha, states, offsets);
    return out;
}

PooledChains relation_guided_attention(Tape& tape, const EncoderParams& params, const Tensor& states,
                                       const Tensor& query_relation) {
    const std::size_t offsets[] = {0, states.rows()};
    return relation_guided_attention(tape, params, states, offsets, query_relation);
}

PooledChains encode_chains(Tape& tape, const EncoderParams& params, const Tensor& entities, const Tensor& relations,
                           std::span<const chain::InteractionChain> chains) {
    std::vector<chain::ChainItem> items;
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> query_rel;
    for (const auto& c : chains) {
        items.insert(items.end(), c.items.begin(), c.items.end());
        offsets.push_back(items.size());
        query_rel.push_back(c.query.relation);
    }
    const Tensor q_rows = ops::gather_rows(tape, relations, query_rel);
    if (items.empty()) {
        return relation_guided_attention(tape, params, Tensor::zeros({0, params.dim()}), offsets, q_rows);
    }
    const Tensor tokens = fuse_tokens(tape, params, entities, relations, items);
    const Tensor states = encode_segments(tape, params, tokens, offsets);
    return relation_guided_attention(tape, params, states, offsets, q_rows);
}

}  // namespace transfir::encoder
