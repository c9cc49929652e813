#include <catch_amalgamated.hpp>

#include <filesystem>

#include "spinterp/corpus.hpp"
#include "spinterp/nn/checkpoint.hpp"
#include "spinterp/trainer.hpp"

using namespace spinterp;
using Catch::Approx;

namespace {

TrainConfig small_config(int epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 8;
    c.lr = 2e-3;
    c.seed = 11;
    c.model.latent_dim = 8;
    c.model.attention = {16, 2, 1, 32};
    c.model.decoder_layers = 1;
    return c;
}

const Corpus& small_corpus() {
    static const Corpus c = build_corpus(builtin_descriptor(), 20, 5);
    return c;
}

}  // namespace

TEST_CASE("splits are 80/10/10 and seeded") {
    const auto s = assign_splits(2000, 3);
    int counts[3] = {0, 0, 0};
    for (auto x : s) ++counts[static_cast<int>(x)];
    CHECK(counts[0] == 1600);
    CHECK(counts[1] == 200);
    CHECK(counts[2] == 200);
    CHECK(assign_splits(2000, 3) == s);
    CHECK_FALSE(assign_splits(2000, 4) == s);
    CHECK_THROWS_AS(build_corpus(builtin_descriptor(), 9, 1), ValidationError);
}

TEST_CASE("corpus container round trip and corruption") {
    const Corpus& c = small_corpus();
    const std::string bytes = encode_corpus(c);
    const Corpus back = decode_corpus(bytes);
    CHECK(back.items.size() == c.items.size());
    CHECK(encode_corpus(back) == bytes);
    for (std::size_t i = 0; i < c.items.size(); ++i) {
        CHECK(back.items[i].record == c.items[i].record);
        CHECK(back.items[i].spectrogram == c.items[i].spectrogram);
    }
    CHECK_THROWS_AS(decode_corpus(bytes.substr(0, 100)), ParseError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_corpus(bad), ParseError);
}

TEST_CASE("corpus is reproducible from its seed") {
    CHECK(encode_corpus(build_corpus(builtin_descriptor(), 20, 5)) == encode_corpus(small_corpus()));
}

TEST_CASE("beta warm-up schedule") {
    TrainConfig c;
    c.model.beta = 0.01;
    c.warmup_fraction = 0.25;
    CHECK(beta_at(c, 0, 100) == 0.0);
    CHECK(beta_at(c, 10, 100) == Approx(0.004));
    CHECK(beta_at(c, 25, 100) == Approx(0.01));
    CHECK(beta_at(c, 99, 100) == Approx(0.01));
    c.warmup_fraction = 0;
    CHECK(beta_at(c, 0, 100) == 0.01);
}

TEST_CASE("training reduces the loss and records history") {
    const auto r = train(small_corpus(), small_config(6));
    REQUIRE(r.history.size() == 6u);
    CHECK(r.history.back().train.total < r.history.front().train.total);
    CHECK(r.best_epoch >= 1);
    const auto csv = history_csv(r.history);
    CHECK(csv.rfind("epoch,beta,lr,train_total", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("training is deterministic and resume continues exactly") {
    // Schedules depend on the total epoch count, so keep them flat here.
    auto cfg = small_config(4);
    cfg.ema_decay = 0.9;
    cfg.warmup_fraction = 0;
    const auto full = train(small_corpus(), cfg);
    const auto again = train(small_corpus(), cfg);
    CHECK(nn::encode_checkpoint(full.checkpoint) == nn::encode_checkpoint(again.checkpoint));

    auto half = cfg;
    half.epochs = 2;
    const auto first = train(small_corpus(), half);
    const auto resumed_ck = nn::decode_checkpoint(nn::encode_checkpoint(first.checkpoint));
    const auto resumed = train(small_corpus(), cfg, &resumed_ck);
    REQUIRE(resumed.history.size() == 4u);
    for (int e = 0; e < 4; ++e) {
        CHECK(resumed.history[e].train.total == full.history[e].train.total);
        CHECK(resumed.history[e].train_running == full.history[e].train_running);
    }
    CHECK(resumed.checkpoint.tensors == full.checkpoint.tensors);
}

TEST_CASE("resume rejects a checkpoint for another descriptor") {
    auto cfg = small_config(1);
    auto r = train(small_corpus(), cfg);
    r.checkpoint.descriptor_hash ^= 1;
    CHECK_THROWS_AS(train(small_corpus(), cfg, &r.checkpoint), DescriptorMismatch);
}

TEST_CASE("invalid training configuration") {
    auto cfg = small_config(1);
    cfg.lr = 0;
    CHECK_THROWS_AS(train(small_corpus(), cfg), ValidationError);
    cfg = small_config(1);
    cfg.ema_decay = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("reconstruction metrics are bounded") {
    const auto r = train(small_corpus(), small_config(1));
    const SpinVae m = SpinVae::from_checkpoint(r.checkpoint, builtin_descriptor());
    const auto met = evaluate_reconstruction(m, small_corpus(), Split::Train);
    CHECK(met.items == 16);
    CHECK(met.categorical_accuracy >= 0.0);
    CHECK(met.categorical_accuracy <= 1.0);
    CHECK(met.numerical_within_one >= 0.0);
    CHECK(met.numerical_within_one <= 1.0);
    CHECK(met.audio_mse > 0.0);
}
