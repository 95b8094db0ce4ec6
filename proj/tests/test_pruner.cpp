#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <map>
#include <random>

#include "oracles.hpp"
#include "sparseshift/architectures.hpp"
#include "sparseshift/forward.hpp"
#include "sparseshift/prune.hpp"
#include "sparseshift/serialize.hpp"

using namespace sparseshift;

namespace {

Tensor input_for(const ModelGraph& m, std::mt19937_64& rng, std::size_t batch = 2) {
    Shape s{batch};
    s.insert(s.end(), m.meta.input_shape.begin(), m.meta.input_shape.end());
    return oracle::random_tensor(s, rng);
}

BatchNorm2d bn1(float gamma, float beta, float mean, float var, float eps) {
    return BatchNorm2d{Tensor({1}, gamma), Tensor({1}, beta), Tensor({1}, mean), Tensor({1}, var), eps};
}

/// Zero output channels by direct scan of every weight.
std::vector<std::size_t> scan_zero_channels(const Conv2d& c) {
    std::vector<std::size_t> out;
    for (std::size_t o = 0; o < c.out_channels(); ++o) {
        bool zero = true;
        for (std::size_t i = 0; i < c.in_channels(); ++i)
            for (std::size_t y = 0; y < c.kernel_h(); ++y)
                for (std::size_t x = 0; x < c.kernel_w(); ++x)
                    zero = zero && c.weight[((o * c.in_channels() + i) * c.kernel_h() + y) * c.kernel_w() + x] == 0.0f;
        if (zero) out.push_back(o);
    }
    return out;
}

/// Per conv (C_in, C_out) rebuilt from the graph: walk back through non-conv layers to the feeding conv.
std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> oracle_plan(const ModelGraph& m) {
    std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> plan;
    for (std::size_t j = 0; j < m.size(); ++j) {
        const auto* c = std::get_if<Conv2d>(&m.nodes[j].layer);
        if (!c) continue;
        auto& entry = plan[j];
        if (!m.protected_nodes.contains(j)) entry.second = scan_zero_channels(*c);
        std::optional<std::size_t> p = j == 0 ? std::nullopt : std::optional<std::size_t>(m.nodes[j].input.value_or(j - 1));
        while (p && !std::holds_alternative<Conv2d>(m.nodes[*p].layer)) {
            p = *p == 0 ? std::nullopt : std::optional<std::size_t>(m.nodes[*p].input.value_or(*p - 1));
        }
        if (p) entry.first = plan.at(*p).second;
    }
    return plan;
}

ModelGraph two_conv_chain(std::vector<std::size_t> zero0, std::vector<std::size_t> zero1, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w0 = oracle::random_tensor({4, 2, 3, 3}, rng);
    Tensor w1 = oracle::random_tensor({3, 4, 3, 3}, rng);
    for (auto c : zero0) std::fill_n(w0.data() + c * 18, 18, 0.0f);
    for (auto c : zero1) std::fill_n(w1.data() + c * 36, 36, 0.0f);
    return ModelBuilder("chain", {2, 8, 8}, 3)
        .conv(std::move(w0), Tensor({4}, -0.1f), 1, 1)
        .relu()
        .conv(std::move(w1), Tensor({3}, -0.1f), 1, 1)
        .relu()
        .flatten()
        .linear(oracle::random_tensor({3, 3 * 64}, rng), oracle::random_tensor({3}, rng))
        .build();
}

} // namespace

// --------------------------------------------------------------------------- fusion

TEST(Fuse, IdentityBatchNormLeavesConvUnchanged) {
    std::mt19937_64 rng(1);
    Tensor w = oracle::random_tensor({1, 1, 3, 3}, rng);
    Tensor b({1}, 0.37f);
    ModelGraph m = ModelBuilder("id", {1, 5, 5}, 1).conv(w, b).add(bn1(1, 0, 0, 1, 0)).relu().build();
    ModelGraph f = fuse_conv_bn(m);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_TRUE(bit_equal(f.get<Conv2d>(0).weight, w));
    EXPECT_TRUE(bit_equal(*f.get<Conv2d>(0).bias, b));
}

TEST(Fuse, HandAlgebraExample) {
    ModelGraph m = ModelBuilder("hand", {1, 1, 1}, 1).conv(Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f)).add(bn1(2, 3, 0, 1, 0)).build();
    Tensor x({1, 1, 1, 1}, 1.0f);
    EXPECT_FLOAT_EQ(forward(m, x)[0], 5.0f);
    ModelGraph f = fuse_conv_bn(m);
    EXPECT_FLOAT_EQ(forward(f, x)[0], 5.0f);
    EXPECT_FLOAT_EQ(f.get<Conv2d>(0).weight[0], 2.0f);
    EXPECT_FLOAT_EQ((*f.get<Conv2d>(0).bias)[0], 3.0f);
}

TEST(Fuse, RandomStacksMatchUnfusedForward) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        oracle::RandomCnnOptions opt;
        opt.conv_bias = trial % 2 == 0;
        ModelGraph m = oracle::random_cnn(rng, opt);
        ModelGraph f = fuse_conv_bn(m);
        EXPECT_EQ(f.conv_depth(), m.conv_depth());
        for (const auto& n : f.nodes) EXPECT_NE(kind_of(n.layer), LayerKind::BatchNorm2d);
        Tensor x = input_for(m, rng, 1);
        EXPECT_LE(max_relative_deviation(forward(m, x), forward(f, x)), 1e-4) << "trial " << trial;
    }
}

TEST(Fuse, ResidualModelKeepsWiring) {
    ResNetConfig cfg;
    cfg.seed = 4;
    ModelGraph m = make_toy_resnet(cfg);
    std::mt19937_64 rng(4);
    // non-trivial statistics so the fold is exercised
    for (auto& n : m.nodes) {
        if (auto* bn = std::get_if<BatchNorm2d>(&n.layer)) *bn = oracle::random_batchnorm(bn->channels(), rng);
    }
    FuseResult f = fuse_conv_bn_mapped(m);
    EXPECT_GT(f.fused, 0u);
    Tensor x = input_for(m, rng);
    EXPECT_LE(max_relative_deviation(forward(m, x), forward(f.model, x)), 1e-4);
    EXPECT_EQ(static_cast<std::ptrdiff_t>(param_count(m)) - static_cast<std::ptrdiff_t>(param_count(f.model)), f.param_delta);
    for (std::size_t j : m.protected_nodes) EXPECT_TRUE(f.model.is_protected(*f.remap[j]));
    EXPECT_EQ(f.model.protected_nodes.size(), m.protected_nodes.size());
}

TEST(Fuse, BatchNormWithoutConvIsStructuralError) {
    ModelGraph m = ModelBuilder("bad", {1, 4, 4}, 1).conv(Tensor({1, 1, 1, 1}, 1.0f)).relu().add(bn1(1, 0, 0, 1, 1e-5f)).build();
    EXPECT_THROW(fuse_conv_bn(m), StructureError);
}

// --------------------------------------------------------------------------- analysis

TEST(Analyse, DenseModelHasEmptyReport) {
    std::mt19937_64 rng(3);
    ModelGraph m = oracle::random_cnn(rng);
    SparsityReport r = analyse_sparsity(fuse_conv_bn(m));
    EXPECT_TRUE(r.empty());
    EXPECT_EQ(r.layers.size(), m.conv_depth());
}

TEST(Analyse, FindsConstructedZeroChannels) {
    std::mt19937_64 rng(5);
    Tensor w = oracle::random_tensor({4, 2, 3, 3}, rng);
    std::fill_n(w.data() + 18, 18, 0.0f);
    std::fill_n(w.data() + 54, 18, 0.0f);
    w[0] = 0.0f; // a single zero does not make a channel
    ModelGraph m = ModelBuilder("z", {2, 6, 6}, 2).conv(w).relu().conv(oracle::random_tensor({2, 4, 1, 1}, rng)).relu().flatten().build();
    SparsityReport r = analyse_sparsity(m);
    ASSERT_NE(r.find(0), nullptr);
    EXPECT_EQ(r.find(0)->zero_out_channels, (std::vector<std::size_t>{1, 3}));
    EXPECT_TRUE(r.find(0)->prunable);
    EXPECT_FALSE(r.find(2)->prunable); // feeds the output
}

TEST(Analyse, MatchesScanOracleOnRandomSparseModels) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        ModelGraph m = fuse_conv_bn(oracle::random_cnn(rng));
        oracle::sparsify(m, rng, 0.9);
        oracle::zero_channels(m, rng, 0.3, false);
        SparsityReport r = analyse_sparsity(m);
        for (std::size_t j : m.conv_nodes()) {
            ASSERT_NE(r.find(j), nullptr);
            EXPECT_EQ(r.find(j)->zero_out_channels, scan_zero_channels(m.get<Conv2d>(j)));
            EXPECT_EQ(r.find(j)->prunable, !m.is_protected(j));
            for (auto ch : r.find(j)->zero_out_channels) EXPECT_LT(ch, m.get<Conv2d>(j).out_channels());
        }
    }
}

// --------------------------------------------------------------------------- planning

TEST(Plan, TwoConvChainTrace) {
    ModelGraph m = two_conv_chain({2}, {}, 7);
    PrunePlan p = plan_prune(analyse_sparsity(m), m);
    ASSERT_EQ(p.layers.size(), 2u);
    EXPECT_TRUE(p.layers[0].c_in.empty());
    EXPECT_EQ(p.layers[0].c_out, (std::vector<std::size_t>{2}));
    EXPECT_EQ(p.layers[1].c_in, (std::vector<std::size_t>{2}));
    EXPECT_TRUE(p.layers[1].c_out.empty());
    EXPECT_EQ(p.layers[0].out_after, 3u);
    EXPECT_EQ(p.layers[1].in_after, 3u);
    EXPECT_TRUE(p.linears.empty());
}

TEST(Plan, LinearAfterFlattenIsFiltered) {
    ModelGraph m = two_conv_chain({}, {0, 2}, 8);
    PrunePlan p = plan_prune(analyse_sparsity(m), m);
    ASSERT_EQ(p.linears.size(), 1u);
    EXPECT_EQ(p.linears[0].node, 5u);
    EXPECT_EQ(p.linears[0].block, 64u);
    EXPECT_EQ(p.linears[0].channels, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(p.linears[0].in_after, 64u);
}

TEST(Plan, MatchesFirstPrinciplesOracle) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        oracle::RandomCnnOptions opt;
        opt.convs = 2 + trial % 4;
        ModelGraph m = fuse_conv_bn(oracle::random_cnn(rng, opt));
        oracle::sparsify(m, rng, 0.5);
        oracle::zero_channels(m, rng, 0.4, false);
        const PrunePlan p = plan_prune(analyse_sparsity(m), m);
        const auto expected = oracle_plan(m);
        ASSERT_EQ(p.layers.size(), expected.size());
        for (const auto& lp : p.layers) {
            EXPECT_EQ(lp.c_in, expected.at(lp.node).first);
            EXPECT_EQ(lp.c_out, expected.at(lp.node).second);
            EXPECT_LT(lp.c_out.size(), lp.out_before);
            if (!lp.predecessor) EXPECT_TRUE(lp.c_in.empty());
        }
        EXPECT_TRUE(p.layers.front().c_in.empty());
        EXPECT_EQ(plan_prune(analyse_sparsity(m), m), p);
    }
}

TEST(Plan, ProtectedNodesKeepTheirOutputs) {
    ResNetConfig cfg;
    cfg.seed = 10;
    ModelGraph m = fuse_conv_bn(make_toy_resnet(cfg));
    for (std::size_t j : m.conv_nodes()) {
        Conv2d& c = m.get<Conv2d>(j);
        std::fill_n(c.weight.data(), c.weight.slice_size(), 0.0f); // channel 0 everywhere
    }
    PrunePlan p = plan_prune(analyse_sparsity(m), m);
    std::size_t unprotected = 0;
    for (const auto& lp : p.layers) {
        if (lp.is_protected) {
            EXPECT_TRUE(lp.c_out.empty());
        } else {
            EXPECT_EQ(lp.c_out, (std::vector<std::size_t>{0}));
            ++unprotected;
        }
        if (lp.predecessor) EXPECT_EQ(lp.c_in, p.find(*lp.predecessor)->c_out);
    }
    EXPECT_GT(unprotected, 0u);
}

TEST(Plan, LayerCollapseNamesTheNode) {
    ModelGraph m = two_conv_chain({0, 1, 2, 3}, {}, 11);
    try {
        plan_prune(analyse_sparsity(m), m);
        FAIL() << "expected collapse";
    } catch (const CollapseError& e) {
        EXPECT_EQ(e.node(), 0u);
    }
}

TEST(Plan, ReportFromAnotherModelIsRejected) {
    ModelGraph a = two_conv_chain({}, {}, 12);
    std::mt19937_64 rng(12);
    ModelGraph b = oracle::random_cnn(rng, {4, false, true});
    EXPECT_THROW(plan_prune(analyse_sparsity(b), a), StructureError);
}

// --------------------------------------------------------------------------- execution

TEST(Execute, RebuildArithmetic) {
    std::mt19937_64 rng(13);
    Tensor w0 = oracle::random_tensor({4, 2, 3, 3}, rng);
    std::fill_n(w0.data() + 1 * 18, 18, 0.0f);
    Tensor w1 = oracle::random_tensor({8, 4, 3, 3}, rng);
    for (std::size_t c : {0, 4, 7}) std::fill_n(w1.data() + c * 36, 36, 0.0f);
    ModelGraph m = ModelBuilder("rebuild", {2, 6, 6}, 2)
                       .conv(w0, Tensor({4}, 0.0f), 1, 1)
                       .relu()
                       .conv(w1, oracle::random_tensor({8}, rng), 1, 1)
                       .relu()
                       .conv(oracle::random_tensor({2, 8, 1, 1}, rng))
                       .build();
    PrunePlan p = plan_prune(analyse_sparsity(m), m);
    ModelGraph out = execute_prune(m, p);
    const Conv2d& c1 = out.get<Conv2d>(2);
    EXPECT_EQ(c1.weight.shape(), (Shape{5, 3, 3, 3}));
    EXPECT_EQ(out.get<Conv2d>(0).weight.shape(), (Shape{3, 2, 3, 3}));
    EXPECT_EQ(out.get<Conv2d>(4).weight.shape(), (Shape{2, 5, 1, 1}));

    // survivors in original order: out {1,2,3,5,6}, in {0,2,3}
    const std::vector<std::size_t> outs{1, 2, 3, 5, 6}, ins{0, 2, 3};
    for (std::size_t o = 0; o < outs.size(); ++o) {
        EXPECT_EQ((*c1.bias)[o], (*m.get<Conv2d>(2).bias)[outs[o]]);
        for (std::size_t i = 0; i < ins.size(); ++i)
            for (std::size_t k = 0; k < 9; ++k)
                EXPECT_EQ(c1.weight[(o * 3 + i) * 9 + k], w1[(outs[o] * 4 + ins[i]) * 9 + k]);
    }
    for (const auto& n : out.nodes) {
        if (const auto* c = std::get_if<Conv2d>(&n.layer)) {
            // no weights of removed channels survive: every remaining slice of the
            // pruned convs still has a nonzero entry
            if (c->out_channels() != 2) EXPECT_TRUE(scan_zero_channels(*c).empty());
        }
    }
}

TEST(Execute, EmptyPlanIsBitExactIdentity) {
    std::mt19937_64 rng(14);
    ModelGraph m = oracle::random_cnn(rng);
    PrunePlan p = plan_prune(analyse_sparsity(m), m);
    ASSERT_TRUE(p.empty());
    EXPECT_EQ(serialize(execute_prune(m, p)), serialize(m));
}

TEST(Execute, SafeChannelsPreserveOutputs) {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 25; ++trial) {
        ModelGraph m = fuse_conv_bn(oracle::random_cnn(rng));
        oracle::sparsify(m, rng, 0.5);
        if (oracle::zero_channels(m, rng, 0.4, true) == 0) continue;
        PrunePlan p = plan_prune(analyse_sparsity(m), m);
        for (const auto& s : assess_safety(m, analyse_sparsity(m))) EXPECT_TRUE(s.safe);
        ModelGraph out = execute_prune(m, p);
        EXPECT_LT(param_count(out), param_count(m));
        for (int k = 0; k < 4; ++k) {
            Tensor x = input_for(m, rng);
            EXPECT_LE(max_relative_deviation(forward(m, x), forward(out, x)), 1e-5);
        }
    }
}

TEST(Execute, BatchSequentialAndSerialRoutesAgree) {
    std::mt19937_64 rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        oracle::RandomCnnOptions opt;
        opt.convs = 3 + trial % 3;
        ModelGraph m = oracle::random_cnn(rng, opt);
        if (trial % 2) m = fuse_conv_bn(m);
        oracle::sparsify(m, rng, 0.6);
        oracle::zero_channels(m, rng, 0.5, false);
        PrunePlan p = plan_prune(analyse_sparsity(m), m);
        const Bytes batch = serialize(execute_prune(m, p, true));
        EXPECT_EQ(serialize(execute_prune(m, p, false)), batch);
        EXPECT_EQ(serialize(execute_prune_sequential(m, p)), batch);
    }
}

TEST(Execute, PlanModelMismatchIsStructuralError) {
    ModelGraph a = two_conv_chain({1}, {}, 17);
    std::mt19937_64 rng(17);
    ModelGraph b = oracle::random_cnn(rng);
    PrunePlan p = plan_prune(analyse_sparsity(a), a);
    PrunePlan wrong = p;
    wrong.layers[1].in_before = 7;
    EXPECT_THROW(execute_prune(a, wrong), StructureError);
    wrong = p;
    wrong.layers[0].c_out = {9};
    wrong.layers[0].out_after = 3;
    EXPECT_THROW(execute_prune(a, wrong), StructureError);
    EXPECT_THROW(execute_prune(b, p), StructureError);
}

// --------------------------------------------------------------------------- pipeline

TEST(Prune, DenseModelIsFunctionalIdentity) {
    std::mt19937_64 rng(18);
    ModelGraph m = oracle::random_cnn(rng);
    PruneResult r = prune(m);
    EXPECT_EQ(r.audit.channels_removed, 0u);
    EXPECT_EQ(r.audit.rounds, 0u);
    EXPECT_EQ(r.audit.structural_params_removed, 0u);
    Tensor x = input_for(m, rng);
    EXPECT_LE(max_relative_deviation(forward(m, x), forward(r.model, x)), 1e-4);

    ModelGraph plain = fuse_conv_bn(m);
    EXPECT_EQ(serialize(prune(plain).model), serialize(plain));
}

TEST(Prune, AuditTotalsMatchParamCountAndLeaveNoZeroChannels) {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 30; ++trial) {
        oracle::RandomCnnOptions opt;
        opt.convs = 2 + trial % 4;
        opt.conv_bias = trial % 3 != 0;
        ModelGraph m = oracle::random_cnn(rng, opt);
        oracle::sparsify(m, rng, 0.7);
        oracle::zero_channels(m, rng, 0.4, trial % 2 == 0);
        PruneResult r = prune(m);
        EXPECT_EQ(static_cast<std::ptrdiff_t>(param_count(m)) - static_cast<std::ptrdiff_t>(param_count(r.model)),
                  r.audit.removed_params());
        EXPECT_EQ(r.audit.params_after, param_count(r.model));
        EXPECT_TRUE(analyse_sparsity(r.model).empty());
        EXPECT_LE(param_count(r.model), param_count(m));
        if (r.audit.channels_removed) EXPECT_LT(param_count(r.model), param_count(m));
        std::size_t layer_sum = 0;
        for (const auto& l : r.audit.layers) layer_sum += l.params_removed;
        EXPECT_LE(layer_sum, r.audit.structural_params_removed);
    }
}

TEST(Prune, RoundsContinueUntilNoZeroChannelRemains) {
    // conv1's channel 1 only reads conv0's zero channel 0, so it becomes zero after round one
    Tensor w0({2, 1, 1, 1}, std::vector<float>{0.0f, 1.0f});
    Tensor w1({2, 2, 1, 1}, std::vector<float>{1.0f, 1.0f, 0.5f, 0.0f});
    ModelGraph m = ModelBuilder("cascade", {1, 2, 2}, 2)
                       .conv(w0, Tensor({2}, std::vector<float>{-1.0f, 0.0f}))
                       .relu()
                       .conv(w1, Tensor({2}, std::vector<float>{0.0f, -1.0f}))
                       .relu()
                       .conv(Tensor({2, 2, 1, 1}, 1.0f))
                       .build();
    PruneResult r = prune(m);
    EXPECT_EQ(r.audit.rounds, 2u);
    EXPECT_EQ(r.audit.channels_removed, 2u);
    EXPECT_EQ(r.model.get<Conv2d>(2).weight.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_TRUE(analyse_sparsity(r.model).empty());
}

TEST(Prune, StrictModeKeepsUnsafeChannelsAndDefaultRecordsBound) {
    // conv0 channel 1 is zero but emits bias 0.5 through ReLU into conv1
    Tensor w0({2, 1, 1, 1}, std::vector<float>{1.0f, 0.0f});
    Tensor w1({1, 2, 1, 1}, std::vector<float>{1.0f, -3.0f});
    ModelGraph m = ModelBuilder("unsafe", {1, 3, 3}, 1)
                       .conv(w0, Tensor({2}, std::vector<float>{0.0f, 0.5f}))
                       .relu()
                       .conv(w1, Tensor({1}, 0.0f))
                       .build();
    const auto safety = assess_safety(m, analyse_sparsity(m));
    ASSERT_EQ(safety.size(), 1u);
    EXPECT_FALSE(safety[0].safe);
    EXPECT_DOUBLE_EQ(safety[0].activation, 0.5);
    EXPECT_DOUBLE_EQ(safety[0].bound, 1.5);

    PruneResult loose = prune(m);
    EXPECT_EQ(loose.audit.channels_removed, 1u);
    EXPECT_EQ(loose.audit.unsafe_removed, 1u);
    EXPECT_DOUBLE_EQ(loose.audit.max_unsafe_bound, 1.5);
    Tensor x({1, 1, 3, 3}, 1.0f);
    EXPECT_NEAR(forward(m, x)[0] - forward(loose.model, x)[0], -1.5, 1e-6);

    PruneResult strict = prune(m, {true, true});
    EXPECT_EQ(strict.audit.channels_removed, 0u);
    EXPECT_EQ(strict.audit.unsafe_kept, 1u);
    EXPECT_EQ(serialize(strict.model), serialize(m));
}

TEST(Prune, NegativeBiasThroughReluIsSafe) {
    Tensor w0({2, 1, 1, 1}, std::vector<float>{1.0f, 0.0f});
    ModelGraph m = ModelBuilder("safe", {1, 3, 3}, 1)
                       .conv(w0, Tensor({2}, std::vector<float>{0.0f, -0.5f}))
                       .relu()
                       .conv(Tensor({1, 2, 1, 1}, 1.0f))
                       .build();
    const auto safety = assess_safety(m, analyse_sparsity(m));
    ASSERT_EQ(safety.size(), 1u);
    EXPECT_TRUE(safety[0].safe);
    EXPECT_EQ(safety[0].bound, 0.0);
    EXPECT_EQ(prune(m, {true, true}).audit.channels_removed, 1u);
}

TEST(Prune, ResidualModelPrunesOnlyUnprotectedConvs) {
    ResNetConfig cfg;
    cfg.seed = 20;
    ModelGraph m = make_toy_resnet(cfg);
    std::mt19937_64 rng(20);
    oracle::sparsify(m, rng, 0.5);
    const std::size_t zeroed = oracle::zero_channels(m, rng, 0.5, true);
    ASSERT_GT(zeroed, 0u);
    PruneResult r = prune(m);
    EXPECT_EQ(r.audit.channels_removed, zeroed);
    EXPECT_EQ(r.audit.unsafe_removed, 0u);
    for (const auto& l : r.audit.layers) {
        ASSERT_TRUE(l.source_node);
        if (m.is_protected(*l.source_node)) EXPECT_EQ(l.out_removed, 0u);
    }
    for (int k = 0; k < 5; ++k) {
        Tensor x = input_for(m, rng);
        EXPECT_LE(max_relative_deviation(forward(m, x), forward(r.model, x)), 1e-4);
    }
}

TEST(Prune, ToyModelUnderOneSecondAndAuditSerialises) {
    ModelGraph m = make_vgg(toy_vgg_config());
    std::mt19937_64 rng(21);
    oracle::sparsify(m, rng, 0.99);
    const auto t0 = std::chrono::steady_clock::now();
    PruneResult r = prune(m);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 1.0);
    EXPECT_GT(r.audit.channels_removed, 0u);
    const auto j = r.audit.to_json();
    for (const char* key : {"layers", "channels", "timings_ms", "removed_params", "max_unsafe_bound"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["removed_params"].get<std::ptrdiff_t>(), r.audit.removed_params());
    EXPECT_GE(r.audit.total_ms, r.audit.execute_ms);
}
