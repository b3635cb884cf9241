#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "transfir/encoder.hpp"
#include "transfir/error.hpp"
#include "transfir/model.hpp"
#include "transfir/scorer.hpp"
#include "transfir/transfer.hpp"

using namespace transfir;
using numerics::Tape;
using numerics::Tensor;
using transfir::testing::random_tensor;

TEST(Encoder, TimeGapCodes) {
    const auto code = encoder::embed_time_gap(1, 4);
    EXPECT_NEAR(code.at(0), std::sin(1.0), 1e-15);
    EXPECT_NEAR(code.at(1), std::cos(1.0), 1e-15);
    EXPECT_NEAR(code.at(2), std::sin(0.01), 1e-15);
    EXPECT_NEAR(code.at(3), std::cos(0.01), 1e-15);
    EXPECT_THROW(encoder::embed_time_gap(0, 4), ContractError);
}

TEST(Encoder, HeadsMustDivideWidth) {
    std::mt19937_64 rng(1);
    EXPECT_THROW(encoder::EncoderParams::init(6, 1, 4, rng), ConfigError);
    EXPECT_THROW(encoder::EncoderParams::init(8, 5, 2, rng), ConfigError);
}

TEST(Encoder, EmptyChainGivesZeroRowAndFlag) {
    std::mt19937_64 rng(2);
    const auto p = encoder::EncoderParams::init(4, 1, 2, rng);
    const auto ent = random_tensor({3, 4}, rng, false);
    const auto rel = random_tensor({2, 4}, rng, false);
    std::vector<chain::InteractionChain> chains(2);
    chains[0].query = {0, 1, 5};
    chains[1].query = {1, 0, 5};
    chains[1].items.push_back({1, 0, 2, 3, chain::Direction::QueryIsSubject, 2});
    Tape tape(false);
    const auto pooled = encoder::encode_chains(tape, p, ent, rel, chains);
    EXPECT_EQ(pooled.empty, (std::vector<bool>{true, false}));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(pooled.reps.at(0, j), 0.0);
    double norm = 0;
    for (std::size_t j = 0; j < 4; ++j) norm += std::abs(pooled.reps.at(1, j));
    EXPECT_GT(norm, 0.0);
}

TEST(Encoder, BatchedEqualsPerChain) {
    std::mt19937_64 rng(3);
    const auto p = encoder::EncoderParams::init(8, 2, 2, rng);
    const auto ent = random_tensor({5, 8}, rng, false);
    const auto rel = random_tensor({4, 8}, rng, false);
    std::vector<chain::InteractionChain> chains(3);
    for (std::size_t c = 0; c < 3; ++c) {
        chains[c].query = {c, c, 9};
        for (std::size_t i = 0; i <= c; ++i)
            chains[c].items.push_back({c, i, (c + i) % 5, 9 - i - 1, chain::Direction::QueryIsSubject, i + 1});
    }
    Tape tape(false);
    const auto batched = encoder::encode_chains(tape, p, ent, rel, chains);
    for (std::size_t c = 0; c < 3; ++c) {
        const auto single = encoder::encode_chains(tape, p, ent, rel, std::span(&chains[c], 1));
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(batched.reps.at(c, j), single.reps.at(0, j), 1e-12);
    }
}

TEST(Encoder, AttentionWeightsSumToOnePerChain) {
    std::mt19937_64 rng(4);
    const auto p = encoder::EncoderParams::init(4, 0, 1, rng);
    const auto states = random_tensor({5, 4}, rng, false);
    const auto qrel = random_tensor({2, 4}, rng, false);
    const std::size_t offsets[] = {0, 2, 5};
    Tape tape(false);
    const auto a = encoder::relation_attention_weights(tape, p, states, offsets, qrel);
    EXPECT_NEAR(a.at(0) + a.at(1), 1.0, 1e-12);
    EXPECT_NEAR(a.at(2) + a.at(3) + a.at(4), 1.0, 1e-12);
}

TEST(Transfer, ClusterPoolIsGroupedMean) {
    const auto reps = Tensor::matrix({{1, 1}, {3, 5}, {100, 100}, {2, 0}});
    const std::vector<bool> empty{false, false, true, false};
    const data::EntityId queries[] = {0, 1, 2, 0};
    const codebook::AssignmentMap pi{0, 0, 1, 1};
    const auto previous = Tensor::matrix({{9, 9}, {7, 8}, {5, 6}});
    Tape tape(false);
    const auto protos = transfer::cluster_pool(tape, reps, empty, queries, pi, 3, previous);
    // Cluster 0 pools query rows 0, 1, 3 (each query counts once); clusters 1 and 2 carry over.
    EXPECT_NEAR(protos.values.at(0, 0), 2.0, 1e-12);
    EXPECT_NEAR(protos.values.at(0, 1), 2.0, 1e-12);
    EXPECT_EQ(protos.values.at(1, 0), 7.0);
    EXPECT_EQ(protos.values.at(2, 1), 6.0);
    EXPECT_EQ(protos.populated, (std::vector<bool>{true, false, false}));
}

TEST(Transfer, GateFormula) {
    std::mt19937_64 rng(5);
    const auto params = transfer::TransferParams::init(2, rng);
    const auto h = Tensor::matrix({{0.5, -1}});
    const auto c = Tensor::matrix({{2, 3}});
    Tape tape(false);
    const auto out = transfer::apply_transfer(tape, h, transfer::transfer_gate(tape, params, h, c), c);
    for (std::size_t j = 0; j < 2; ++j) {
        double z = params.bias.at(j);
        const double x[] = {0.5, -1, 2, 3};
        for (std::size_t i = 0; i < 4; ++i) z += x[i] * params.weight.at(i, j);
        const double gate = 1.0 / (1.0 + std::exp(-z));
        EXPECT_NEAR(out.at(0, j), h.at(0, j) + gate * c.at(0, j), 1e-12);
    }
}

TEST(Transfer, ZeroPrototypesLeaveEmbeddings) {
    std::mt19937_64 rng(6);
    const auto params = transfer::TransferParams::init(3, rng);
    const auto emb = random_tensor({4, 3}, rng, false);
    Tape tape(false);
    const auto out = transfer::transfer_all(tape, params, emb, Tensor::zeros({2, 3}), {0, 1, 1, 0});
    for (std::size_t i = 0; i < emb.size(); ++i) EXPECT_EQ(out.at(i), emb.at(i));
}

TEST(Transfer, NonQueryScopeKeepsQueryRows) {
    std::mt19937_64 rng(7);
    const auto params = transfer::TransferParams::init(3, rng);
    const auto emb = random_tensor({4, 3}, rng, false);
    const auto protos = random_tensor({2, 3}, rng, false);
    const data::EntityId queries[] = {2};
    Tape tape(false);
    const auto out = transfer::transfer_all(tape, params, emb, protos, {0, 1, 1, 0},
                                            transfer::TransferScope::NonQueryEntities, queries);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out.at(2, j), emb.at(2, j));
    EXPECT_NE(out.at(1, 0), emb.at(1, 0));
}

TEST(Scorer, ScoresAreDecoderDotCandidates) {
    std::mt19937_64 rng(8);
    const auto params = scorer::ScorerParams::init(4, 3, 3, rng);
    const auto q = random_tensor({2, 4}, rng, false);
    const auto r = random_tensor({2, 4}, rng, false);
    const auto cand = random_tensor({5, 4}, rng, false);
    Tape tape(false);
    const auto dec = scorer::decode(tape, params, q, r);
    const auto scores = scorer::score_all(tape, params, q, r, cand);
    ASSERT_EQ(scores.shape(), (numerics::Shape{2, 5}));
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t e = 0; e < 5; ++e) {
            double dot = 0;
            for (std::size_t j = 0; j < 4; ++j) dot += dec.at(s, j) * cand.at(e, j);
            EXPECT_NEAR(scores.at(s, e), dot, 1e-12);
        }
    EXPECT_NEAR(scorer::probability(0.0), 0.5, 1e-15);
    EXPECT_THROW(scorer::ScorerParams::init(4, 3, 2, rng), ConfigError);
}

namespace {

model::Model toy_model(const Tensor& emb, std::uint64_t seed = 0) {
    model::Hyperparams hp;
    hp.codebook_size = 2;
    hp.chain_length = 3;
    hp.window = 3;
    hp.layers = 1;
    hp.heads = 2;
    hp.channels = 3;
    hp.seed = seed;
    return model::Model::init(hp, 2, emb);
}

}  // namespace

TEST(Forward, JointLossGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(9);
    const auto g = data::add_inverse_relations(transfir::testing::toy_graph());
    const auto emb = random_tensor({5, 8}, rng, false);
    auto m = toy_model(emb);
    const chain::HistoryIndex history(g);
    std::vector<data::EntityId> answers;
    const auto queries = model::snapshot_queries(g, 3, &answers);
    // Prototypes carried from snapshot 2 make the carry-over path live.
    auto carried = model::PrototypeState::zeros(2, 8);
    {
        Tape tape(false);
        std::vector<data::EntityId> a2;
        const auto q2 = model::snapshot_queries(g, 2, &a2);
        model::forward_snapshot(tape, m, history, emb, q2, a2, carried);
    }
    const numerics::ScalarFn loss = [&](Tape& tape) {
        auto state = carried;
        const auto out = model::forward_snapshot(tape, m, history, emb, queries, answers, state);
        // The commitment term holds the codewords fixed, so its value is
        // removed; the remaining function has the same gradient.
        const auto vq = numerics::sub(tape, out.vq_loss, Tensor::scalar(m.hp.beta * out.commit_value));
        return numerics::add(tape, out.lp_loss, numerics::scale(tape, vq, m.hp.lambda));
    };
    for (const auto& [name, p] : m.params.parameters()) {
        EXPECT_LT(numerics::finite_diff_check(loss, p), 1e-3) << name;
    }
}

TEST(Forward, LambdaZeroLeavesCodewordsWithoutGradient) {
    std::mt19937_64 rng(10);
    const auto g = data::add_inverse_relations(transfir::testing::toy_graph());
    const auto emb = random_tensor({5, 8}, rng, false);
    auto m = toy_model(emb);
    const chain::HistoryIndex history(g);
    std::vector<data::EntityId> answers;
    const auto queries = model::snapshot_queries(g, 3, &answers);
    auto state = model::PrototypeState::zeros(2, 8);
    Tape tape;
    const auto out = model::forward_snapshot(tape, m, history, emb, queries, answers, state);
    tape.backward(numerics::add(tape, out.lp_loss, numerics::scale(tape, out.vq_loss, 0.0)));
    for (double v : m.params.codebook.codewords.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, OutputsAndStateUpdate) {
    std::mt19937_64 rng(11);
    const auto g = data::add_inverse_relations(transfir::testing::toy_graph());
    const auto emb = random_tensor({5, 8}, rng, false);
    const auto m = toy_model(emb);
    const chain::HistoryIndex history(g);
    std::vector<data::EntityId> answers;
    const auto queries = model::snapshot_queries(g, 2, &answers);
    ASSERT_EQ(queries.size(), 4u);  // two facts, both directions
    auto state = model::PrototypeState::zeros(2, 8);
    Tape tape(false);
    const auto out = model::forward_snapshot(tape, m, history, emb, queries, answers, state);
    EXPECT_EQ(out.logits.shape(), (numerics::Shape{4, 5}));
    EXPECT_EQ(out.transferred.shape(), (numerics::Shape{5, 8}));
    EXPECT_TRUE(std::isfinite(out.lp_loss.item()));
    EXPECT_TRUE(std::equal(state.values.values().begin(), state.values.values().end(),
                           out.prototypes.values().begin()));
    EXPECT_THROW(model::forward_snapshot(tape, m, history, random_tensor({4, 8}, rng, false), queries, answers, state),
                 ShapeError);
}

TEST(Hyperparams, TextRoundTripAndValidation) {
    model::Hyperparams hp;
    hp.codebook_size = 8;
    hp.learning_rate = 0.0123456789;
    hp.scope = transfer::TransferScope::NonQueryEntities;
    const auto back = model::Hyperparams::from_text(hp.to_text());
    EXPECT_EQ(back.to_text(), hp.to_text());
    EXPECT_THROW(hp.set("nonsense", "1"), ConfigError);
    EXPECT_THROW(hp.set("codebook_size", "-3"), ConfigError);
    hp.kernel_width = 4;
    EXPECT_THROW(hp.validate(), ConfigError);
}

TEST(Model, DimMustMatchEmbeddings) {
    std::mt19937_64 rng(12);
    model::Hyperparams hp;
    hp.codebook_size = 2;
    hp.dim = 16;
    EXPECT_THROW(model::Model::init(hp, 2, random_tensor({5, 8}, rng, false)), ConfigError);
}
