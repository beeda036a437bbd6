#include <catch_amalgamated.hpp>

#include "../common/test_helpers.hpp"

using namespace intactvae;
using Catch::Approx;

namespace {

struct ToySplits {
    Dataset train, val;
};

ToySplits toy_data(int n_train, int n_val, uint64_t seed) {
    testutil::LinearGaussianToy toy;
    Rng r(seed);
    return {toy.sample(n_train, r), toy.sample(n_val, r)};
}

IntactVaeModel fresh_model(uint64_t seed, NetPreset preset = NetPreset::small) {
    Rng init_rng(derive_seed(seed, Stream::init, 0));
    return init_model(init_rng, ModelDims{1, 1, 1}, preset, 1.0);
}

}  // namespace

TEST_CASE("max_epochs zero returns the initial model untouched") {
    const auto data = toy_data(50, 50, 1);
    const IntactVaeModel m0 = fresh_model(2);
    TrainConfig cfg;
    cfg.max_epochs = 0;
    cfg.seed = 2;
    const auto [model, hist] = train(m0, data.train, data.val, cfg);
    CHECK(hist.stop_reason == "max_epochs");
    CHECK(hist.best_epoch == 0);
    CHECK(hist.train_loss.empty());
    for (size_t li = 0; li < m0.prior_net.layers.size(); ++li)
        REQUIRE(model.prior_net.layers[li].weight.data == m0.prior_net.layers[li].weight.data);
}

TEST_CASE("presets map to the documented hidden layouts") {
    CHECK(hidden_layout(NetPreset::paper) == std::vector<int>{200, 200, 200});
    CHECK(hidden_layout(NetPreset::small) == std::vector<int>{64, 64});
    const IntactVaeModel paper = fresh_model(3, NetPreset::paper);
    REQUIRE(paper.prior_net.layers.size() == 4);
    CHECK(paper.prior_net.layers[0].weight.cols == 200);
    const IntactVaeModel small = fresh_model(3, NetPreset::small);
    REQUIRE(small.prior_net.layers.size() == 3);
    CHECK(small.prior_net.layers[0].weight.cols == 64);
}

TEST_CASE("same seed twice gives a bit-identical history and model") {
    const auto data = toy_data(120, 60, 4);
    TrainConfig cfg;
    cfg.max_epochs = 25;
    cfg.batch_size = 40;
    cfg.eval_every = 5;
    cfg.seed = 99;
    const IntactVaeModel m0 = fresh_model(99);
    const auto [ma, ha] = train(m0, data.train, data.val, cfg);
    const auto [mb, hb] = train(m0, data.train, data.val, cfg);
    REQUIRE(ha.train_loss == hb.train_loss);
    REQUIRE(ha.val_elbo == hb.val_elbo);
    REQUIRE(ha.best_epoch == hb.best_epoch);
    REQUIRE(ha.stop_reason == hb.stop_reason);
    for (size_t li = 0; li < ma.encoder_net.layers.size(); ++li)
        REQUIRE(ma.encoder_net.layers[li].weight.data == mb.encoder_net.layers[li].weight.data);
}

TEST_CASE("the returned model is exactly the best-epoch snapshot") {
    const auto data = toy_data(150, 80, 5);
    TrainConfig cfg;
    cfg.max_epochs = 40;
    cfg.batch_size = 50;
    cfg.eval_every = 5;
    cfg.lr = 1e-3;
    cfg.seed = 123;
    const IntactVaeModel m0 = fresh_model(123);
    const auto [best, hist] = train(m0, data.train, data.val, cfg);
    REQUIRE(hist.best_epoch > 0);

    // replay: running max_epochs = best_epoch must land on the same params
    TrainConfig replay = cfg;
    replay.max_epochs = hist.best_epoch;
    const auto [replayed, rhist] = train(m0, data.train, data.val, replay);
    (void)rhist;
    for (size_t li = 0; li < best.decoder_net.layers.size(); ++li) {
        REQUIRE(replayed.decoder_net.layers[li].weight.data ==
                best.decoder_net.layers[li].weight.data);
        REQUIRE(replayed.prior_net.layers[li].weight.data ==
                best.prior_net.layers[li].weight.data);
    }
}

TEST_CASE("early stopping waits for `patience` consecutive non-improvements") {
    const auto data = toy_data(100, 60, 6);
    TrainConfig cfg;
    cfg.max_epochs = 300;
    cfg.batch_size = 50;
    cfg.eval_every = 1;
    cfg.patience = 7;
    cfg.lr = 2e-3;
    cfg.seed = 31;
    const IntactVaeModel m0 = fresh_model(31);
    const auto [model, hist] = train(m0, data.train, data.val, cfg);
    (void)model;
    if (hist.stop_reason == "early_stop") {
        // the recorded series must end with exactly `patience` evaluations
        // that failed to improve on the best value seen before them
        const size_t n = hist.val_elbo.size();
        REQUIRE(n >= static_cast<size_t>(cfg.patience) + 1);
        double best = -1e300;
        size_t last_improve = 0;
        for (size_t i = 0; i < n; ++i) {
            if (hist.val_elbo[i] >= best + cfg.improvement_eps) {
                best = hist.val_elbo[i];
                last_improve = i;
            }
        }
        CHECK(n - 1 - last_improve == static_cast<size_t>(cfg.patience));
    }
}

TEST_CASE("training fits the linear-gaussian toy close to its likelihood ceiling") {
    testutil::LinearGaussianToy toy;
    Rng r(2024);
    const Dataset train_set = toy.sample(1000, r);
    const Dataset val_set = toy.sample(1000, r);
    TrainConfig cfg;
    cfg.max_epochs = 1500;
    cfg.batch_size = 100;
    cfg.eval_every = 5;
    cfg.patience = 30;
    cfg.lr = 1e-3;
    cfg.seed = 7;
    const IntactVaeModel m0 = fresh_model(7);
    const auto [best, hist] = train(m0, train_set, val_set, cfg);
    (void)best;
    const double target = toy.mean_log_marginal(val_set);
    const double reached = hist.best_val_elbo - 0.5 * kLog2Pi;
    INFO("validation bound " << reached << " vs closed-form " << target);
    CHECK(reached <= target + 0.02 * std::abs(target));
    CHECK(reached >= target - 0.05 * std::abs(target));
}

TEST_CASE("smoothed training loss is non-increasing on the toy") {
    // The recorded loss is a Monte Carlo estimate, so "non-increasing" is
    // asserted up to three standard errors of the window means, with the
    // noise level read off the windows themselves.
    testutil::LinearGaussianToy toy;
    Rng r(11);
    const Dataset train_set = toy.sample(1000, r);
    const Dataset val_set = toy.sample(100, r);
    TrainConfig cfg;
    cfg.max_epochs = 500;
    cfg.batch_size = 100;
    cfg.eval_every = 100;
    cfg.patience = 100;
    cfg.seed = 8;
    const IntactVaeModel m0 = fresh_model(8);
    const auto [model, hist] = train(m0, train_set, val_set, cfg);
    (void)model;
    REQUIRE(hist.train_loss.size() == 500);
    auto window = [&](int w) {
        Vec e(10);
        for (int i = 0; i < 10; ++i) e[static_cast<size_t>(i)] = hist.train_loss[static_cast<size_t>(w * 10 + i)];
        return std::pair<double, double>{mean(e), std::sqrt(variance(e) / 10.0)};
    };
    auto [first, first_se] = window(0);
    double prev = first, prev_se = first_se;
    for (int w = 1; w < 50; ++w) {
        const auto [m10, se] = window(w);
        CHECK(m10 <= prev + 3.0 * (se + prev_se));
        prev = m10;
        prev_se = se;
    }
    // and the sequence genuinely descends overall
    CHECK(prev < first - 10.0 * (first_se + prev_se));
}

TEST_CASE("non-finite losses abort with epoch and batch context") {
    auto data = toy_data(60, 40, 21);
    data.train.y(5, 0) = 1e300;  // overflows the squared reconstruction
    const IntactVaeModel m0 = fresh_model(21);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.batch_size = 20;
    cfg.seed = 21;
    try {
        (void)train(m0, data.train, data.val, cfg);
        FAIL("expected an exception");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
        CHECK(msg.find("row") != std::string::npos);
    }
}

TEST_CASE("empty splits are config errors") {
    const auto data = toy_data(30, 30, 12);
    const IntactVaeModel m0 = fresh_model(12);
    TrainConfig cfg;
    Dataset empty;
    empty.x = Tensor2(0, 1);
    empty.y = Tensor2(0, 1);
    CHECK_THROWS(train(m0, empty, data.val, cfg));
    CHECK_THROWS(train(m0, data.train, empty, cfg));
    cfg.lr = 0.0;
    CHECK_THROWS(train(m0, data.train, data.val, cfg));
}

TEST_CASE("history serialization round-trips through csv and json") {
    const auto data = toy_data(60, 40, 13);
    TrainConfig cfg;
    cfg.max_epochs = 8;
    cfg.batch_size = 30;
    cfg.eval_every = 2;
    cfg.seed = 5;
    const IntactVaeModel m0 = fresh_model(5);
    const auto [model, hist] = train(m0, data.train, data.val, cfg);
    (void)model;
    write_history_json(hist, "hist_test.json");
    write_history_csv(hist, "hist_test.csv");
    std::ifstream jf("hist_test.json");
    nlohmann::json j;
    jf >> j;
    CHECK(j["best_epoch"].get<int>() == hist.best_epoch);
    CHECK(j["train_loss"].size() == hist.train_loss.size());
    std::ifstream cf("hist_test.csv");
    std::string line;
    std::getline(cf, line);
    CHECK(line == "epoch,train_loss,val_elbo");
    int rows = 0;
    while (std::getline(cf, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 8);
    std::remove("hist_test.json");
    std::remove("hist_test.csv");
}
