#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mutan/attention.hpp"
#include "mutan/model.hpp"
#include "mutan/synthdata.hpp"
#include "mutan/train.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace mutan {
namespace {

using mutan::testing::make_config;

RegionGrid random_grid(std::size_t count, std::size_t dim, Rng& rng) {
    std::vector<Vector> regions;
    for (std::size_t i = 0; i < count; ++i) regions.push_back(oracle::random_vector(dim, rng));
    return RegionGrid(std::move(regions));
}

TEST(RegionGrid, RejectsEmptyAndRagged) {
    EXPECT_THROW(RegionGrid(std::vector<Vector>{}), DimensionError);
    EXPECT_THROW(RegionGrid({Vector{1, 2}, Vector{1}}), DimensionError);
}

TEST(Attend, SingleRegionHasUnitWeight) {
    Rng rng(1);
    const FusionOperator scorer(make_config(Scheme::Mutan, 4, 3, 2, 3, 2, 5));
    const RegionGrid grid({oracle::random_vector(3, rng)});
    const auto out = attend(scorer, grid, oracle::random_vector(4, rng));
    ASSERT_EQ(out.map.glimpses(), 2u);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(out.map.weights(j, 0), 1.0);
    ASSERT_EQ(out.pooled.dim(), 6u);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(out.pooled[j * 3 + d], grid.regions[0][d]);
}

TEST(PoolWithScores, UniformScoresAverageRegions) {
    const RegionGrid grid({Vector{1, 2}, Vector{3, 6}, Vector{5, 1}});
    const auto out = pool_with_scores(Matrix(2, 3, 0.7), grid);
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out.map.weights(j, i), 1.0 / 3.0, 1e-15);
        EXPECT_NEAR(out.pooled[j * 2], 3.0, 1e-14);
        EXPECT_NEAR(out.pooled[j * 2 + 1], 3.0, 1e-14);
    }
}

TEST(PoolWithScores, HandSoftmax) {
    const RegionGrid grid({Vector{1, 0}, Vector{0, 1}});
    const auto out = pool_with_scores(Matrix{{std::log(3.0), 0.0}}, grid);
    EXPECT_NEAR(out.map.weights(0, 0), 0.75, 1e-15);
    EXPECT_NEAR(out.map.weights(0, 1), 0.25, 1e-15);
    EXPECT_NEAR(out.pooled[0], 0.75, 1e-15);
    EXPECT_NEAR(out.pooled[1], 0.25, 1e-15);
}

TEST(PoolWithScores, RowsAreDistributionsForExtremeScores) {
    Rng rng(2);
    for (double scale : {1.0, 50.0, 1e3, 1e6}) {
        const auto scores = oracle::random_matrix(3, 7, rng, scale);
        const auto out = pool_with_scores(scores, random_grid(7, 4, rng));
        for (std::size_t j = 0; j < 3; ++j) {
            double sum = 0.0;
            for (std::size_t i = 0; i < 7; ++i) {
                EXPECT_GE(out.map.weights(j, i), 0.0);
                sum += out.map.weights(j, i);
            }
            EXPECT_NEAR(sum, 1.0, 1e-9) << "scale " << scale;
        }
    }
}

TEST(PoolWithScores, PerGlimpseShiftInvariance) {
    Rng rng(3);
    const auto grid = random_grid(5, 3, rng);
    const auto scores = oracle::random_matrix(2, 5, rng, 3.0);
    const auto base = pool_with_scores(scores, grid);
    Matrix shifted = scores;
    for (std::size_t i = 0; i < 5; ++i) shifted(1, i) += 123.5;
    const auto moved = pool_with_scores(shifted, grid);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(moved.map.weights(j, i), base.map.weights(j, i), 1e-12);
}

TEST(PoolWithScores, PooledInsideConvexHull) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto grid = random_grid(6, 4, rng);
        const auto out = pool_with_scores(oracle::random_matrix(2, 6, rng, 4.0), grid);
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t d = 0; d < 4; ++d) {
                double lo = grid.regions[0][d], hi = lo;
                for (const auto& r : grid.regions) {
                    lo = std::min(lo, r[d]);
                    hi = std::max(hi, r[d]);
                }
                EXPECT_GE(out.pooled[j * 4 + d], lo - 1e-12);
                EXPECT_LE(out.pooled[j * 4 + d], hi + 1e-12);
            }
    }
}

TEST(Attend, ScoresAreScorerOutputsPerRegion) {
    Rng rng(5);
    const FusionOperator scorer(make_config(Scheme::TuckerFusion, 4, 3, 2, 3, 0, 6));
    const auto grid = random_grid(4, 3, rng);
    const auto q = oracle::random_vector(4, rng);
    const auto out = attend(scorer, grid, q);
    for (std::size_t i = 0; i < 4; ++i) {
        const Vector s = scorer.forward(q, grid.regions[i]);
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(out.scores(j, i), s[j]);
    }
}

TEST(Attend, DimensionMismatchRejected) {
    Rng rng(6);
    const FusionOperator scorer(make_config(Scheme::Mutan, 4, 3, 2, 3, 2));
    EXPECT_THROW(attend(scorer, random_grid(2, 5, rng), oracle::random_vector(4, rng)), DimensionError);
    EXPECT_THROW(attend(scorer, random_grid(2, 3, rng), oracle::random_vector(2, rng)), DimensionError);
}

TEST(AblationMaps, SingleRankReproducesFullMap) {
    Rng rng(7);
    const FusionOperator scorer(make_config(Scheme::Mutan, 4, 3, 2, 3, 1, 8));
    const auto grid = random_grid(5, 3, rng);
    const auto q = oracle::random_vector(4, rng);
    const auto maps = attention_ablation_maps(scorer, grid, q);
    ASSERT_EQ(maps.size(), 1u);
    EXPECT_EQ(maps[0].weights, attend(scorer, grid, q).map.weights);
}

TEST(AblationMaps, PerRankScoresSumToFullScores) {
    Rng rng(8);
    const FusionOperator scorer(make_config(Scheme::Mutan, 5, 4, 3, 4, 3, 9));
    const auto grid = random_grid(6, 4, rng);
    const auto q = oracle::random_vector(5, rng);
    const auto full = attend(scorer, grid, q);
    Matrix sum(3, 6);
    for (std::size_t r = 0; r < 3; ++r) {
        const auto part = attend(scorer, grid, q, r);
        for (std::size_t k = 0; k < sum.values().size(); ++k) sum.values()[k] += part.scores.values()[k];
    }
    for (std::size_t k = 0; k < sum.values().size(); ++k)
        EXPECT_NEAR(sum.values()[k], full.scores.values()[k], 1e-14);
}

TEST(AblationMaps, NonMutanRejected) {
    Rng rng(9);
    const FusionOperator scorer(make_config(Scheme::MLB, 4, 3, 2, 3, 3));
    EXPECT_THROW(attention_ablation_maps(scorer, random_grid(2, 3, rng), oracle::random_vector(4, rng)),
                 std::logic_error);
}

// Train an attention model on a planted multi-region task, then compare the
// per-rank maps of the scorer.
TEST(AblationMaps, RanksDifferentiateOnPlantedTask) {
    TaskConfig tc;
    tc.n_answers = 4;
    tc.regions = 4;
    tc.train_examples = 400;
    tc.val_examples = 100;
    tc.seed = 5;
    const auto task = generate(tc);
    VqaModel model(FusionOperator(make_config(Scheme::Mutan, 8, 8, 2, 4, 2, 11)),
                   FusionOperator(make_config(Scheme::Mutan, 8, 16, 4, 3, 2, 12)));
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 32;
    cfg.max_epochs = 15;
    train_loop(model, task.train(), task.val(), cfg);

    double best = 0.0;
    for (const auto& ex : task.val()) {
        const auto maps = attention_ablation_maps(*model.scorer(), ex.v, ex.q);
        ASSERT_EQ(maps.size(), 2u);
        double l1 = 0.0;
        for (std::size_t k = 0; k < maps[0].weights.values().size(); ++k)
            l1 += std::abs(maps[0].weights.values()[k] - maps[1].weights.values()[k]);
        best = std::max(best, l1);
    }
    EXPECT_GT(best, 0.1);
}

TEST(AttentionGradient, MatchesCentralDifferences) {
    Rng rng(10);
    for (Scheme s : {Scheme::Mutan, Scheme::TuckerFusion, Scheme::MLB, Scheme::MCB}) {
        const VqaModel model(FusionOperator(make_config(s, 3, 4, 2, 3, 2, 21)),
                             FusionOperator(make_config(Scheme::Mutan, 3, 8, 3, 3, 2, 22)));
        const auto grid = random_grid(3, 4, rng);
        const auto q = oracle::random_vector(3, rng);
        std::vector<double> grad(model.param_count());
        model.accumulate_gradient(q, grid, 1, grad);
        const ParamVector p0 = model.params();
        VqaModel probe(model);
        const auto numeric = oracle::central_differences(
            {p0.values().begin(), p0.values().end()}, [&](const std::vector<double>& p) {
                probe.set_params(p);
                return cross_entropy(probe.predict(q, grid).probs, 1);
            });
        EXPECT_LT(oracle::max_gradient_error(grad, numeric), 1e-5) << to_string(s);
    }
}

TEST(AttentionCsv, OneRowPerGlimpseAtFullPrecision) {
    AttentionMap map{Matrix{{0.1, 0.9}, {1.0 / 3.0, 2.0 / 3.0}}};
    std::ostringstream os;
    write_attention_csv(os, map);
    EXPECT_EQ(os.str(), "0.10000000000000001,0.90000000000000002\n0.33333333333333331,0.66666666666666663\n");
}

}  // namespace
}  // namespace mutan
