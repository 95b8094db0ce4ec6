#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "sparseshift/architectures.hpp"
#include "sparseshift/imp.hpp"
#include "sparseshift/serialize.hpp"

using namespace sparseshift;

namespace {

ModelGraph linear_model(std::vector<float> w, std::size_t in) {
    const std::size_t out = w.size() / in;
    return ModelBuilder("linear", {in}, out).linear(Tensor({out, in}, std::move(w))).build();
}

Dataset regression(std::vector<float> x, std::vector<float> y) {
    Dataset d;
    d.num_classes = 1;
    const std::size_t n = x.size();
    d.train.images = Tensor({n, 1}, std::move(x));
    d.train.labels.assign(n, 0);
    d.train.targets = Tensor({n, 1}, std::move(y));
    return d;
}

TrainConfig plain_sgd(double lr, std::size_t epochs, std::size_t batch) {
    TrainConfig c;
    c.learning_rate = lr;
    c.epochs = epochs;
    c.batch_size = batch;
    c.momentum = 0.0;
    c.weight_decay = 0.0;
    c.rewind_epoch = 0;
    c.loss = Loss::MeanSquared;
    return c;
}

ModelGraph small_cnn(std::uint64_t seed, std::size_t classes = 8) {
    VggConfig c;
    c.name = "small";
    c.input_shape = {1, 32, 32};
    c.num_classes = classes;
    c.layout = {8, 0, 16, 0, 16, 0};
    c.head_avgpool = 2;
    c.seed = seed;
    return make_vgg(c);
}

Dataset small_synthetic(std::size_t train, std::size_t test, std::uint64_t seed = 1) {
    SyntheticConfig s;
    s.train_count = train;
    s.test_count = test;
    s.seed = seed;
    return make_synthetic(s);
}

} // namespace

TEST(TrainConfig, ValidatesInvariants) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.portfolio_depth = 0;
    EXPECT_THROW(c.validate(), Error);
    c = TrainConfig{};
    c.rewind_epoch = c.epochs;
    EXPECT_THROW(c.validate(), Error);
    c = TrainConfig{};
    c.gamma = 0.0;
    EXPECT_THROW(c.validate(), Error);
    c.gamma = 1.5;
    EXPECT_THROW(c.validate(), Error);
    c.gamma = 1.0;
    EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, MilestonesDecayLearningRate) {
    TrainConfig c;
    c.learning_rate = 0.1;
    c.gamma = 0.1;
    c.milestone_steps = {3, 6};
    EXPECT_DOUBLE_EQ(c.lr_at(0), 0.1);
    EXPECT_DOUBLE_EQ(c.lr_at(2), 0.1);
    EXPECT_NEAR(c.lr_at(3), 0.01, 1e-15);
    EXPECT_NEAR(c.lr_at(7), 0.001, 1e-15);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
    std::mt19937_64 rng(3);
    ModelGraph m = oracle::random_cnn(rng);
    Dataset d;
    d.num_classes = 5;
    d.train.images = oracle::random_tensor({4, m.meta.input_shape[0], m.meta.input_shape[1], m.meta.input_shape[2]}, rng);
    d.train.labels = {0, 1, 2, 3};
    TrainConfig c;
    c.epochs = 0;
    c.rewind_epoch = 0;
    TrainResult r = train(m, d, c, SparsityMask::ones(m));
    EXPECT_EQ(serialize(r.model), serialize(m));
    EXPECT_TRUE(r.log.empty());
}

TEST(Train, LinearSquaredLossStepMatchesHandGradient) {
    // L = (1/N) sum (w x - x)^2 at w = 0 over x in {0.5, 1}: dL/dw = -(0.25 + 1) = -1.25
    ModelGraph m = linear_model({0.0f}, 1);
    Dataset d = regression({0.5f, 1.0f}, {0.5f, 1.0f});
    TrainResult r = train(m, d, plain_sgd(0.5, 1, 2), SparsityMask::ones(m));
    EXPECT_NEAR(r.model.get<Linear>(0).weight[0], 0.625f, 1e-6);
    EXPECT_NEAR(r.log.at(0).loss, (0.25 + 1.0) / 2.0, 1e-9);
}

TEST(Train, MomentumAndWeightDecayFollowHeavyBallUpdate) {
    ModelGraph m = linear_model({0.2f}, 1);
    Dataset d = regression({1.0f}, {1.0f});
    TrainConfig c = plain_sgd(0.1, 3, 1);
    c.momentum = 0.9;
    c.weight_decay = 0.05;
    TrainResult r = train(m, d, c, SparsityMask::ones(m));

    double w = 0.2, buf = 0.0;
    for (int step = 0; step < 3; ++step) {
        const double g = 2.0 * (w - 1.0) + 0.05 * w;
        buf = step == 0 ? g : 0.9 * buf + g;
        w -= 0.1 * buf;
    }
    EXPECT_NEAR(r.model.get<Linear>(0).weight[0], w, 1e-6);
}

TEST(Train, DivergenceReportsEpoch) {
    ModelGraph m = linear_model({0.0f}, 1);
    Dataset d = regression({0.5f, 1.0f}, {0.5f, 1.0f});
    try {
        train(m, d, plain_sgd(1e6, 50, 2), SparsityMask::ones(m));
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_LT(e.epoch(), 50u);
        EXPECT_GT(e.epoch(), 0u);
    }
}

TEST(Train, AnalyticGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(11);
    ModelBuilder b("grad", {2, 6, 6}, 3);
    b.conv(oracle::random_tensor({3, 2, 3, 3}, rng), oracle::random_tensor({3}, rng), 1, 1);
    b.add(oracle::random_batchnorm(3, rng));
    b.relu();
    b.maxpool(2, 2);
    b.conv(oracle::random_tensor({4, 3, 3, 3}, rng), std::nullopt, 1, 0);
    b.avgpool(1, 1);
    b.flatten();
    b.linear(oracle::random_tensor({3, 4}, rng), oracle::random_tensor({3}, rng));
    ModelGraph m = b.build();

    Split batch;
    batch.images = oracle::random_tensor({4, 2, 6, 6}, rng);
    batch.labels = {0, 2, 1, 2};

    detail::Engine engine(m);
    engine.forward_backward(batch, Loss::CrossEntropy);
    std::vector<std::vector<std::vector<float>>> analytic(m.size());
    for (std::size_t j = 0; j < m.size(); ++j) {
        analytic[j].resize(detail::parameters_of(m.nodes[j].layer).size());
        for (std::size_t p = 0; p < analytic[j].size(); ++p) analytic[j][p] = engine.gradient(j, p);
    }

    std::size_t checked = 0;
    for (std::size_t j = 0; j < m.size(); ++j) {
        auto params = detail::parameters_of(m.nodes[j].layer);
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::size_t i = 0; i < params[p]->size(); i += 3) {
                float& w = (*params[p])[i];
                const float saved = w;
                const float h = 1e-3f;
                w = saved + h;
                const double up = engine.forward_backward(batch, Loss::CrossEntropy);
                w = saved - h;
                const double down = engine.forward_backward(batch, Loss::CrossEntropy);
                w = saved;
                const double numeric = (up - down) / (2.0 * h);
                EXPECT_NEAR(analytic[j][p][i], numeric, 2e-3 + 2e-2 * std::fabs(numeric)) << "node " << j << " param " << p << " index " << i;
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 30u);
}

TEST(Train, MaskedWeightsStayExactlyZero) {
    ModelGraph m = small_cnn(5);
    Dataset d = small_synthetic(64, 0);
    SparsityMask mask = SparsityMask::ones(m);
    std::mt19937_64 rng(9);
    for (auto& [_, t] : mask.tensors)
        for (auto& k : t.keep) k = rng() % 3 != 0;
    TrainConfig c;
    c.epochs = 2;
    c.rewind_epoch = 1;
    c.batch_size = 16;
    TrainResult r = train(m, d, c, mask);
    for (const auto& [node, t] : mask.tensors) {
        const Tensor& w = prunable_weight(r.model, node);
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!t.keep[i]) ASSERT_EQ(w[i], 0.0f);
        }
    }
    for (const auto& ck : r.checkpoints) {
        for (const auto& [node, t] : mask.tensors) {
            const Tensor& w = prunable_weight(ck.weights, node);
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (!t.keep[i]) ASSERT_EQ(w[i], 0.0f);
            }
        }
    }
}

TEST(Train, CheckpointsIncludeRewindEpochAndFinal) {
    ModelGraph m = small_cnn(5);
    Dataset d = small_synthetic(32, 0);
    TrainConfig c;
    c.epochs = 3;
    c.rewind_epoch = 1;
    c.batch_size = 16;
    TrainResult r = train(m, d, c, SparsityMask::ones(m));
    ASSERT_EQ(r.checkpoints.size(), 2u);
    EXPECT_EQ(r.checkpoints[0].epoch, 1u);
    EXPECT_EQ(r.checkpoints[1].epoch, 3u);
    EXPECT_EQ(serialize(r.checkpoints[1].weights), serialize(r.model));
    EXPECT_NE(serialize(r.checkpoints[0].weights), serialize(r.model));
    ASSERT_EQ(r.log.size(), 3u);
    EXPECT_EQ(r.log.back().epoch, 3u);
}

TEST(Train, DeterministicPerSeed) {
    ModelGraph m = small_cnn(5);
    Dataset d = small_synthetic(48, 0);
    TrainConfig c;
    c.epochs = 2;
    c.rewind_epoch = 1;
    c.batch_size = 16;
    c.seed = 42;
    const Bytes a = serialize(train(m, d, c, SparsityMask::ones(m)).model);
    const Bytes b = serialize(train(m, d, c, SparsityMask::ones(m)).model);
    c.seed = 43;
    const Bytes other = serialize(train(m, d, c, SparsityMask::ones(m)).model);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, other);
}

TEST(Train, SequentialGraphsOnly) {
    ModelGraph res = make_toy_resnet({});
    Dataset d;
    d.train.images = Tensor({1, 3, 16, 16});
    d.train.labels = {0};
    TrainConfig c;
    c.epochs = 1;
    c.rewind_epoch = 0;
    EXPECT_THROW(train(res, d, c, SparsityMask::ones(res)), StructureError);
}

TEST(Dataset, SplitsAreDisjointAndBalanced) {
    Dataset d = small_synthetic(128, 64);
    EXPECT_EQ(d.train.size(), 128u);
    EXPECT_EQ(d.test.size(), 64u);
    EXPECT_EQ(d.sample_shape(), (Shape{1, 32, 32}));
    std::vector<std::size_t> per_class(8, 0);
    for (auto l : d.train.labels) ++per_class.at(l);
    for (auto n : per_class) EXPECT_EQ(n, 16u);
    for (std::size_t i = 0; i < d.test.size(); ++i)
        for (std::size_t j = 0; j < d.train.size(); ++j)
            ASSERT_FALSE(std::equal(d.test.images.slice(i).begin(), d.test.images.slice(i).end(),
                                    d.train.images.slice(j).begin()));
}

TEST(Dataset, SaveLoadRoundTrip) {
    Dataset d = small_synthetic(16, 8, 4);
    const auto dir = std::filesystem::temp_directory_path() / "sparseshift_dataset_rt";
    std::filesystem::remove_all(dir);
    save_dataset(d, dir);
    Dataset back = load_dataset(dir);
    EXPECT_TRUE(bit_equal(back.train.images, d.train.images));
    EXPECT_TRUE(bit_equal(back.test.images, d.test.images));
    EXPECT_EQ(back.train.labels, d.train.labels);
    EXPECT_EQ(back.test.labels, d.test.labels);
    EXPECT_EQ(back.num_classes, 8u);

    io::write_file(dir / "test_labels.u32", Bytes(7, 0));
    EXPECT_THROW(load_dataset(dir), FormatError);
    std::filesystem::remove_all(dir);
}

namespace {

// Fourier magnitude at each class's grating frequency, normalised per image.
std::vector<double> spectral_features(std::span<const float> img, std::size_t s) {
    std::vector<double> f(8);
    for (std::size_t cls = 0; cls < 8; ++cls) {
        const double period = cls < 4 ? 3.0 : 6.0;
        const double angle = static_cast<double>(cls % 4) * std::numbers::pi / 4.0;
        const double kx = 2.0 * std::numbers::pi / period * std::cos(angle);
        const double ky = 2.0 * std::numbers::pi / period * std::sin(angle);
        std::complex<double> acc = 0.0;
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) acc += static_cast<double>(img[y * s + x]) * std::polar(1.0, -(kx * x + ky * y));
        f[cls] = std::abs(acc);
    }
    const double norm = std::accumulate(f.begin(), f.end(), 0.0);
    for (auto& v : f) v /= norm;
    return f;
}

} // namespace

TEST(Dataset, LogisticRegressionBaselineSeparatesClasses) {
    Dataset d = small_synthetic(512, 256, 7);
    auto feats = [](const Split& s) {
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < s.size(); ++i) out.push_back(spectral_features(s.images.slice(i), 32));
        return out;
    };
    const auto xtr = feats(d.train), xte = feats(d.test);
    const std::size_t F = 8, K = 8;
    std::vector<double> W(K * (F + 1), 0.0);
    auto logits = [&](const std::vector<double>& x) {
        std::vector<double> z(K);
        for (std::size_t k = 0; k < K; ++k) {
            z[k] = W[k * (F + 1) + F];
            for (std::size_t f = 0; f < F; ++f) z[k] += W[k * (F + 1) + f] * x[f] * 8.0;
        }
        return z;
    };
    for (int it = 0; it < 400; ++it) {
        std::vector<double> g(W.size(), 0.0);
        for (std::size_t i = 0; i < xtr.size(); ++i) {
            auto z = logits(xtr[i]);
            const double mx = *std::max_element(z.begin(), z.end());
            double sum = 0.0;
            for (auto& v : z) sum += (v = std::exp(v - mx));
            for (std::size_t k = 0; k < K; ++k) {
                const double diff = z[k] / sum - (k == d.train.labels[i] ? 1.0 : 0.0);
                for (std::size_t f = 0; f < F; ++f) g[k * (F + 1) + f] += diff * xtr[i][f] * 8.0;
                g[k * (F + 1) + F] += diff;
            }
        }
        for (std::size_t i = 0; i < W.size(); ++i) W[i] -= 1.0 * g[i] / static_cast<double>(xtr.size());
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < xte.size(); ++i) {
        auto z = logits(xte[i]);
        if (static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == d.test.labels[i]) ++correct;
    }
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(xte.size()), 0.90);
}

TEST(Train, ToyCnnFitsSyntheticTextures) {
    Dataset d = small_synthetic(256, 128, 2);
    ModelGraph m = small_cnn(3);
    TrainConfig c;
    c.epochs = 20;
    c.rewind_epoch = 1;
    c.batch_size = 32;
    c.learning_rate = 0.05;
    c.milestone_steps = {15};
    c.evaluate_each_epoch = false;
    TrainResult r = train(m, d, c, SparsityMask::ones(m));
    EXPECT_GT(evaluate_accuracy(r.model, d.train), 0.95);
}

TEST(RankAndMask, KeepsLargestMagnitudes) {
    ModelGraph m = linear_model({1, -3, 2, -4}, 4);
    RankResult r = rank_and_mask(m, SparsityMask::ones(m), 0.5);
    EXPECT_EQ(r.mask.tensors.at(0).keep, (std::vector<std::uint8_t>{0, 1, 0, 1}));
    EXPECT_TRUE(r.collapsed_nodes.empty());
}

TEST(RankAndMask, RepeatedHalvingMatchesSortOracle) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> w(8);
        for (auto& v : w) v = std::uniform_real_distribution<float>(-1, 1)(rng);
        ModelGraph m = linear_model(w, 8);
        SparsityMask mask = rank_and_mask(m, SparsityMask::ones(m), 0.5).mask;
        mask = rank_and_mask(m, mask, 0.5).mask;

        std::vector<std::size_t> order(8);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::fabs(w[a]) > std::fabs(w[b]); });
        std::vector<std::uint8_t> expected(8, 0);
        expected[order[0]] = expected[order[1]] = 1;
        EXPECT_EQ(mask.tensors.at(0).keep, expected);
    }
}

TEST(RankAndMask, TiesBreakTowardLowerFlatIndex) {
    ModelGraph m = linear_model(std::vector<float>(6, 0.5f), 6);
    RankResult r = rank_and_mask(m, SparsityMask::ones(m), 0.5);
    EXPECT_EQ(r.mask.tensors.at(0).keep, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0}));

    // negative and positive values of equal magnitude tie too
    ModelGraph mixed = linear_model({-2, 2, -2, 2}, 4);
    EXPECT_EQ(rank_and_mask(mixed, SparsityMask::ones(mixed), 0.5).mask.tensors.at(0).keep,
              (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(RankAndMask, MonotoneAndIgnoresBiasesAndBatchNorm) {
    std::mt19937_64 rng(21);
    ModelGraph m = oracle::random_cnn(rng);
    SparsityMask prev = SparsityMask::ones(m);
    const std::size_t total = prev.total();
    for (int i = 1; i <= 4; ++i) {
        // masked entries with nonzero values must still stay masked
        SparsityMask next = rank_and_mask(m, prev, 0.5).mask;
        EXPECT_TRUE(next.subset_of(prev));
        EXPECT_EQ(next.kept(), static_cast<std::size_t>(std::llround(static_cast<double>(prev.kept()) * 0.5)));
        prev = next;
    }
    EXPECT_LE(prev.kept(), total / 16 + 1);
    for (const auto& [node, _] : prev.tensors) EXPECT_TRUE(m.is_conv(node) || m.kind(node) == LayerKind::Linear);
}

TEST(RankAndMask, PerLayerScopeHalvesEachTensor) {
    std::mt19937_64 rng(23);
    ModelGraph m = oracle::random_cnn(rng);
    SparsityMask mask = rank_and_mask(m, SparsityMask::ones(m), 0.5, RankScope::PerLayer).mask;
    for (const auto& [node, t] : mask.tensors)
        EXPECT_EQ(t.kept(), static_cast<std::size_t>(std::llround(static_cast<double>(t.keep.size()) * 0.5)));
}

TEST(RankAndMask, ReportsCollapsedLayerButSucceeds) {
    ModelBuilder b("collapse", {4}, 2);
    b.linear(Tensor({2, 4}, std::vector<float>{9, 9, 9, 9, 9, 9, 9, 9}));
    b.linear(Tensor({2, 2}, std::vector<float>{0.01f, 0.01f, 0.01f, 0.01f}));
    ModelGraph m = b.build();
    RankResult r = rank_and_mask(m, SparsityMask::ones(m), 0.5);
    EXPECT_EQ(r.collapsed_nodes, (std::vector<std::size_t>{1}));
    EXPECT_EQ(r.mask.kept(), 6u);
}

TEST(RankAndMask, RejectsBadFraction) {
    ModelGraph m = linear_model({1, 2}, 2);
    EXPECT_THROW(rank_and_mask(m, SparsityMask::ones(m), 0.0), Error);
    EXPECT_THROW(rank_and_mask(m, SparsityMask::ones(m), 1.0), Error);
}

TEST(MaskSidecar, RoundTripAndRejectsCorruption) {
    std::mt19937_64 rng(29);
    ModelGraph m = oracle::random_cnn(rng);
    SparsityMask mask = rank_and_mask(m, SparsityMask::ones(m), 0.3).mask;
    const Bytes bytes = encode_mask(mask);
    EXPECT_EQ(decode_mask(bytes), mask);

    Bytes bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_mask(bad), FormatError);
    Bytes truncated(bytes.begin(), bytes.end() - 1);
    EXPECT_THROW(decode_mask(truncated), FormatError);
    Bytes trailing = bytes;
    trailing.push_back(0);
    EXPECT_THROW(decode_mask(trailing), FormatError);
}

TEST(Mask, ShapeMismatchIsRejected) {
    ModelGraph a = linear_model({1, 2}, 2);
    ModelGraph b = linear_model({1, 2, 3}, 3);
    EXPECT_THROW(SparsityMask::ones(a).apply(b), StructureError);
}

TEST(ImpPortfolio, DepthOneHalvesWeights) {
    ModelGraph m = small_cnn(8);
    Dataset d = small_synthetic(64, 32);
    TrainConfig c;
    c.epochs = 2;
    c.rewind_epoch = 1;
    c.batch_size = 16;
    c.portfolio_depth = 1;
    auto variants = imp_portfolio(m, d, c);
    ASSERT_EQ(variants.size(), 2u);
    const double total = static_cast<double>(prunable_param_count(m));
    EXPECT_EQ(prunable_nonzero_count(variants[0].model), prunable_param_count(m));
    EXPECT_EQ(variants[1].mask.kept(), static_cast<std::size_t>(std::llround(total * 0.5)));
    EXPECT_LE(prunable_nonzero_count(variants[1].model), variants[1].mask.kept());
    EXPECT_DOUBLE_EQ(variants[1].compression_ratio(), 2.0);
    for (const auto& v : variants) {
        EXPECT_GE(v.test_accuracy, 0.0);
        EXPECT_LE(v.test_accuracy, 1.0);
    }
}

TEST(ImpPortfolio, MasksMonotoneSlackBoundedAndReproducible) {
    ModelGraph m = small_cnn(8);
    Dataset d = small_synthetic(32, 16);
    TrainConfig c;
    c.epochs = 2;
    c.rewind_epoch = 1;
    c.batch_size = 16;
    c.portfolio_depth = 4;
    c.seed = 5;
    auto a = imp_portfolio(m, d, c);
    auto b = imp_portfolio(m, d, c);
    ASSERT_EQ(a.size(), 5u);
    const double total = static_cast<double>(prunable_param_count(m));
    const auto tensors = static_cast<double>(prunable_nodes(m).size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].mask, b[i].mask);
        EXPECT_EQ(serialize(a[i].model), serialize(b[i].model));
        const double expected = std::round(total / std::ldexp(1.0, static_cast<int>(i)));
        EXPECT_LE(std::fabs(static_cast<double>(a[i].mask.kept()) - expected), tensors);
        for (const auto& [node, t] : a[i].mask.tensors) {
            const Tensor& w = prunable_weight(a[i].model, node);
            for (std::size_t k = 0; k < w.size(); ++k) {
                if (!t.keep[k]) ASSERT_EQ(w[k], 0.0f);
            }
        }
        if (i) EXPECT_TRUE(a[i].mask.subset_of(a[i - 1].mask));
    }
}

TEST(ImpPortfolio, SurvivorsRewoundBeforeRetraining) {
    // with zero epochs after the rewind point, every variant is the rewound checkpoint under its mask
    ModelGraph m = small_cnn(8);
    Dataset d = small_synthetic(32, 0);
    TrainConfig c;
    c.epochs = 2;
    c.rewind_epoch = 1;
    c.batch_size = 16;
    c.portfolio_depth = 2;
    c.learning_rate = 1e-12;
    auto v = imp_portfolio(m, d, c);
    TrainResult dense = train(m, d, c, SparsityMask::ones(m));
    const ModelGraph& ck = dense.checkpoint_at(1)->weights;
    for (std::size_t i = 1; i < v.size(); ++i) {
        for (const auto& [node, t] : v[i].mask.tensors) {
            const Tensor& w = prunable_weight(v[i].model, node);
            const Tensor& r = prunable_weight(ck, node);
            for (std::size_t k = 0; k < w.size(); ++k) {
                if (t.keep[k]) ASSERT_NEAR(w[k], r[k], 1e-6f);
            }
        }
    }
}
