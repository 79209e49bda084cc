#include <gtest/gtest.h>

#include "mutan/tensor.hpp"
#include "oracles.hpp"

namespace mutan {
namespace {

DenseTensor3 small_tensor() { return DenseTensor3({2, 2, 1}, {1, 2, 3, 4}); }

TEST(DenseTensor3, RowMajorOffsets) {
    DenseTensor3 t({2, 3, 4});
    EXPECT_EQ(t.offset(1, 2, 3), (1 * 3 + 2) * 4 + 3);
    EXPECT_EQ(t.size(), 24u);
}

TEST(DenseTensor3, ZeroDimensionRejected) {
    EXPECT_THROW(DenseTensor3({0, 2, 2}), DimensionError);
    EXPECT_THROW(Matrix(0, 3), DimensionError);
    EXPECT_THROW(DenseTensor3({2, 2, 1}, {1, 2, 3}), DimensionError);
}

TEST(ModeNProduct, IdentityIsExact) {
    Rng rng(1);
    const auto t = oracle::random_tensor({3, 4, 5}, rng);
    for (int mode = 1; mode <= 3; ++mode) EXPECT_EQ(mode_n_product(t, Matrix::identity(t.dim(mode - 1)), mode), t);
}

TEST(ModeNProduct, HandExample) {
    const auto out = mode_n_product(small_tensor(), Matrix{{1, 1}, {0, 1}}, 1);
    EXPECT_EQ(out, DenseTensor3({2, 2, 1}, {4, 6, 3, 4}));
    EXPECT_EQ(oracle::mode_product(small_tensor(), Matrix{{1, 1}, {0, 1}}, 1), out);
}

TEST(ModeNProduct, ZeroTensorStaysZero) {
    Rng rng(2);
    const DenseTensor3 zero({2, 3, 4});
    const auto out = mode_n_product(zero, oracle::random_matrix(5, 3, rng), 2);
    EXPECT_EQ(out.dims(), (Dims3{2, 5, 4}));
    for (double x : out.values()) EXPECT_EQ(x, 0.0);
}

TEST(ModeNProduct, MatchesLoopOracleOnEveryMode) {
    Rng rng(3);
    const auto t = oracle::random_tensor({3, 4, 5}, rng);
    for (int mode = 1; mode <= 3; ++mode) {
        const auto m = oracle::random_matrix(2, t.dim(mode - 1), rng);
        EXPECT_LT(oracle::relative_error(mode_n_product(t, m, mode), oracle::mode_product(t, m, mode)), 1e-13);
    }
}

TEST(ModeNProduct, DistinctModesCommute) {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const auto t = oracle::random_tensor({4, 5, 6}, rng);
        for (int n = 1; n <= 3; ++n)
            for (int p = 1; p <= 3; ++p) {
                if (n == p) continue;
                const auto a = oracle::random_matrix(3, t.dim(n - 1), rng);
                const auto b = oracle::random_matrix(2, t.dim(p - 1), rng);
                const auto lhs = mode_n_product(mode_n_product(t, a, n), b, p);
                const auto rhs = mode_n_product(mode_n_product(t, b, p), a, n);
                EXPECT_LT(oracle::relative_error(lhs, rhs), 1e-12);
            }
    }
}

TEST(ModeNProduct, MismatchNamesModeAndSizes) {
    try {
        mode_n_product(small_tensor(), Matrix(2, 3), 2);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("mode 2"), std::string::npos);
        EXPECT_NE(msg.find('2'), std::string::npos);
        EXPECT_NE(msg.find('3'), std::string::npos);
    }
    EXPECT_THROW(mode_n_product(small_tensor(), Matrix(2, 2), 4), DimensionError);
}

TEST(ModeNVectorProduct, OnesCase) {
    const DenseTensor3 t({2, 2, 2}, 1.0);
    const Matrix out = mode_n_vector_product(t, Vector{1, 1}, 1);
    EXPECT_EQ(out, Matrix(2, 2, 2.0));
}

TEST(ModeNVectorProduct, HandExampleMode2) {
    const Matrix out = mode_n_vector_product(small_tensor(), Vector{1, 2}, 2);
    ASSERT_EQ(out.rows(), 2u);
    ASSERT_EQ(out.cols(), 1u);
    EXPECT_DOUBLE_EQ(out(0, 0), 5.0);
    EXPECT_DOUBLE_EQ(out(1, 0), 11.0);
}

TEST(ModeNVectorProduct, ZeroVectorGivesZero) {
    Rng rng(5);
    const auto t = oracle::random_tensor({3, 4, 2}, rng);
    for (int mode = 1; mode <= 3; ++mode) {
        const Matrix out = mode_n_vector_product(t, Vector(t.dim(mode - 1)), mode);
        for (double x : out.values()) EXPECT_EQ(x, 0.0);
    }
    EXPECT_THROW(mode_n_vector_product(t, Vector(5), 1), DimensionError);
}

TEST(ModeNVectorProduct, BilinearContractionMatchesDoubleLoop) {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const auto t = oracle::random_tensor({4, 5, 3}, rng);
        const auto q = oracle::random_vector(4, rng);
        const auto v = oracle::random_vector(5, rng);
        const Matrix tq = mode_n_vector_product(t, q, 1);  // (d_v × d_out)
        Vector y(3);
        for (std::size_t j = 0; j < 5; ++j)
            for (std::size_t k = 0; k < 3; ++k) y[k] += v[j] * tq(j, k);
        EXPECT_LT(oracle::relative_error(y, oracle::bilinear(t, q, v)), 1e-12);
    }
}

TEST(TuckerReconstruct, IdentityFactorsReturnCore) {
    Rng rng(7);
    const auto core = oracle::random_tensor({2, 3, 4}, rng);
    EXPECT_EQ(tucker_reconstruct(core, Matrix::identity(2), Matrix::identity(3), Matrix::identity(4)), core);
}

TEST(TuckerReconstruct, ScalarCase) {
    const auto t = tucker_reconstruct(DenseTensor3({1, 1, 1}, {5}), Matrix{{2}}, Matrix{{3}}, Matrix{{7}});
    EXPECT_DOUBLE_EQ(t(0, 0, 0), 210.0);
}

TEST(TuckerReconstruct, MatchesNestedLoopExpansion) {
    Rng rng(8);
    const auto core = oracle::random_tensor({2, 3, 2}, rng);
    const auto wq = oracle::random_matrix(3, 2, rng);
    const auto wv = oracle::random_matrix(4, 3, rng);
    const auto wo = oracle::random_matrix(5, 2, rng);
    EXPECT_LT(oracle::relative_error(tucker_reconstruct(core, wq, wv, wo), oracle::tucker_expansion(core, wq, wv, wo)),
              1e-12);
}

TEST(TuckerReconstruct, AllSmallShapes) {
    Rng rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        auto dim = [&] { return 1 + static_cast<std::size_t>(rng.below(5)); };
        const auto core = oracle::random_tensor({dim(), dim(), dim()}, rng);
        const auto wq = oracle::random_matrix(dim(), core.dim(0), rng);
        const auto wv = oracle::random_matrix(dim(), core.dim(1), rng);
        const auto wo = oracle::random_matrix(dim(), core.dim(2), rng);
        EXPECT_LT(oracle::relative_error(tucker_reconstruct(core, wq, wv, wo),
                                         oracle::tucker_expansion(core, wq, wv, wo)),
                  1e-12);
    }
}

TEST(TuckerReconstruct, MismatchRejected) {
    const DenseTensor3 core({2, 2, 2});
    EXPECT_THROW(tucker_reconstruct(core, Matrix(3, 3), Matrix(3, 2), Matrix(3, 2)), DimensionError);
}

TEST(OuterProduct, Examples) {
    EXPECT_EQ(outer_product(Vector{1, 0}, Vector{0, 1}), (Matrix{{0, 1}, {0, 0}}));
    EXPECT_EQ(outer_product(Vector{2, 3}, Vector{5, 7}), (Matrix{{10, 14}, {15, 21}}));
    EXPECT_EQ(outer_product(Vector{0, 0}, Vector{4, 5}), Matrix(2, 2));
}

}  // namespace
}  // namespace mutan
