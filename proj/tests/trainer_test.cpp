#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "transfir/checkpoint.hpp"
#include "transfir/error.hpp"
#include "transfir/eval.hpp"
#include "transfir/trainer.hpp"

using namespace transfir;
using numerics::Tensor;
using transfir::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

model::Hyperparams toy_hp() {
    model::Hyperparams hp;
    hp.codebook_size = 2;
    hp.chain_length = 3;
    hp.window = 3;
    hp.layers = 1;
    hp.heads = 2;
    hp.channels = 3;
    hp.learning_rate = 1e-2;
    hp.epochs = 3;
    return hp;
}

struct Toy {
    data::TemporalKG graph = transfir::testing::toy_graph();
    data::TemporalKG augmented = data::add_inverse_relations(graph);
    chain::HistoryIndex history{augmented};
    Tensor embeddings;
    data::Split split{{0, 2}, {2, 3}, {3, 4}};

    Toy() {
        std::mt19937_64 rng(21);
        embeddings = random_tensor({5, 8}, rng, false);
    }
    trainer::TrainingData data() const { return {augmented, history, embeddings, split}; }
};

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("transfir_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Adam, FirstStepClosedForm) {
    auto w = Tensor::scalar(0.0, true);
    trainer::Adam opt({{"w", w}}, 0.1);
    w.grad_buffer()[0] = 1.0;
    opt.step();
    // m̂ = 1, v̂ = 1 → step = lr / (1 + eps)
    EXPECT_NEAR(w.item(), -0.1 / (1.0 + 1e-8), 1e-15);
    EXPECT_FALSE(w.has_grad());
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
    auto w = Tensor::from({2}, {1.0, -2.0}, true);
    trainer::Adam opt({{"w", w}}, 0.1);
    w.zero_grad();
    opt.step();
    EXPECT_EQ(w.at(0), 1.0);
    EXPECT_EQ(w.at(1), -2.0);
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MissingGradientIsContractError) {
    auto w = Tensor::scalar(0.0, true);
    trainer::Adam opt({{"w", w}}, 0.1);
    EXPECT_THROW(opt.step(), ContractError);
}

TEST(Clip, ScalesToMaxNorm) {
    auto a = Tensor::from({2}, {0, 0}, true);
    auto b = Tensor::scalar(0, true);
    a.grad_buffer()[0] = 3;
    b.grad_buffer()[0] = 4;
    const numerics::ParamList params{{"a", a}, {"b", b}};
    EXPECT_DOUBLE_EQ(trainer::clip_grad_norm(params, 1.0), 5.0);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
    EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

TEST(TrainTimestamp, EmptySnapshotIsNoOp) {
    Toy toy;
    const data::TemporalKG sparse(data::Vocab::numbered(5, 2), {{0, 0, 1, 0}, {1, 1, 2, 2}});
    const auto aug = data::add_inverse_relations(sparse);
    const chain::HistoryIndex history(aug);
    auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    trainer::Adam opt(m.params.parameters(), 1e-2);
    auto state = model::PrototypeState::zeros(2, 8);
    const auto before = checkpoint::serialize(m);
    const auto losses = trainer::train_timestamp(m, opt, {aug, history, toy.embeddings, toy.split}, 1, state);
    EXPECT_EQ(losses.queries, 0u);
    EXPECT_EQ(losses.total, 0.0);
    EXPECT_EQ(checkpoint::serialize(m), before);
    EXPECT_EQ(opt.steps(), 0u);
}

TEST(TrainTimestamp, LossDecreasesOnRepeatedData) {
    Toy toy;
    auto hp = toy_hp();
    auto m = model::Model::init(hp, 2, toy.embeddings);
    trainer::Adam opt(m.params.parameters(), hp.learning_rate);
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step) {
        auto state = model::PrototypeState::zeros(2, 8);
        losses.push_back(trainer::train_timestamp(m, opt, toy.data(), 3, state).lp);
    }
    EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(TrainTimestamp, DivergenceNamesTimestamp) {
    Toy toy;
    auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    trainer::Adam opt(m.params.parameters(), 1e-2);
    m.params.scorer.proj_bias.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    auto state = model::PrototypeState::zeros(2, 8);
    try {
        trainer::train_timestamp(m, opt, toy.data(), 3, state);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("timestamp 3"), std::string::npos) << e.what();
    }
}

TEST(TrainEpoch, VisitsTrainingSnapshotsInOrder) {
    Toy toy;
    auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    trainer::Adam opt(m.params.parameters(), 1e-2);
    const auto report = trainer::train_epoch(m, opt, toy.data(), 1);
    EXPECT_EQ(report.visited, (std::vector<data::Timestamp>{0, 1}));
    EXPECT_EQ(report.steps, 2u);
    EXPECT_EQ(opt.steps(), 2u);
}

TEST(TrainEpoch, EntityTableUntouched) {
    Toy toy;
    const std::vector<double> before(toy.embeddings.values().begin(), toy.embeddings.values().end());
    auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    trainer::Adam opt(m.params.parameters(), 1e-2);
    trainer::train_epoch(m, opt, toy.data(), 1);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), toy.embeddings.values().begin()));
    EXPECT_FALSE(toy.embeddings.has_grad());
}

TEST(Train, DeterministicUnderSeed) {
    Toy toy;
    auto run = [&] {
        auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
        trainer::Adam opt(m.params.parameters(), 1e-2);
        trainer::train(m, opt, toy.data());
        return checkpoint::serialize(m, &opt);
    };
    EXPECT_EQ(run(), run());
}

TEST(Train, ParametersRegisteredOnce) {
    Toy toy;
    const auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    const auto params = m.params.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_TRUE(params[i].second.requires_grad()) << params[i].first;
        EXPECT_FALSE(params[i].second.same_storage(toy.embeddings));
        for (std::size_t j = i + 1; j < params.size(); ++j) {
            EXPECT_FALSE(params[i].second.same_storage(params[j].second)) << params[i].first;
            EXPECT_NE(params[i].first, params[j].first);
        }
    }
}

TEST(Checkpoint, RoundTripIsExact) {
    Toy toy;
    auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    trainer::Adam opt(m.params.parameters(), 1e-2);
    trainer::train_epoch(m, opt, toy.data(), 1);
    const auto path = temp_file("roundtrip.ckpt");
    checkpoint::save_checkpoint(path, m, &opt);
    auto back = checkpoint::load_checkpoint(path);
    fs::remove(path);
    ASSERT_TRUE(back.optimizer.has_value());
    auto restored = checkpoint::restore_optimizer(back);
    EXPECT_EQ(checkpoint::serialize(back.model, &restored), checkpoint::serialize(m, &opt));
    EXPECT_EQ(back.model.hp.to_text(), m.hp.to_text());
}

TEST(Checkpoint, MetricsIdenticalAfterReload) {
    Toy toy;
    auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    trainer::Adam opt(m.params.parameters(), 1e-2);
    trainer::train_epoch(m, opt, toy.data(), 1);
    const auto back = checkpoint::deserialize(checkpoint::serialize(m));
    const eval::EvalMode vanilla{};
    const auto a = eval::evaluate(m, toy.augmented, toy.embeddings, {2, 4}, vanilla);
    const auto b = eval::evaluate(back.model, toy.augmented, toy.embeddings, {2, 4}, vanilla);
    EXPECT_EQ(a.to_kv(), b.to_kv());
}

TEST(Checkpoint, TruncationAndCorruption) {
    Toy toy;
    const auto m = model::Model::init(toy_hp(), 2, toy.embeddings);
    const auto bytes = checkpoint::serialize(m);
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{17}, bytes.size() / 2, bytes.size() - 1})
        EXPECT_THROW(checkpoint::deserialize(bytes.substr(0, cut)), IntegrityError) << cut;
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    EXPECT_THROW(checkpoint::deserialize(flipped), IntegrityError);
}

TEST(Checkpoint, VersionMismatch) {
    Toy toy;
    auto bytes = checkpoint::serialize(model::Model::init(toy_hp(), 2, toy.embeddings));
    bytes[4] = 2;
    EXPECT_THROW(checkpoint::deserialize(bytes), IncompatibleError);
}

TEST(Checkpoint, MissingFile) {
    EXPECT_THROW(checkpoint::load_checkpoint(temp_file("does_not_exist.ckpt")), IoError);
}
