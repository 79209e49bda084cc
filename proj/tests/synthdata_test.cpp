#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "mutan/synthdata.hpp"
#include "mutan/train.hpp"
#include "test_support.hpp"

namespace mutan {
namespace {

using mutan::testing::make_config;

TaskConfig small_config(std::uint64_t seed = 3) {
    TaskConfig c;
    c.train_examples = 60;
    c.val_examples = 20;
    c.seed = seed;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(Generate, NoiselessMultisetsAreUnanimous) {
    const auto task = generate(small_config());
    ASSERT_EQ(task.examples.size(), 80u);
    for (const auto& ex : task.examples) {
        for (auto a : ex.answers) EXPECT_EQ(a, ex.label);
        EXPECT_EQ(vqa_accuracy(ex.label, ex.answers), 1.0);
    }
}

TEST(Generate, LabelsAreArgmaxOfPlantedScore) {
    const auto task = generate(small_config());
    for (const auto& ex : task.examples) {
        const auto scores = full_bilinear_forward(task.t_star, ex.q, ex.signal());
        EXPECT_EQ(static_cast<std::size_t>(ex.label), argmax(scores));
        EXPECT_GE(ex.label, 0);
        EXPECT_LT(static_cast<std::size_t>(ex.label), task.config.n_answers);
    }
}

TEST(Generate, PlantedTensorHasTuckerStructure) {
    auto c = small_config();
    c.planted_t = 2;
    c.planted_rank = 1;
    const auto t = generate(c).t_star;
    EXPECT_EQ(t.dims(), (Dims3{c.d_q, c.d_v, c.n_answers}));
}

TEST(Generate, NoisyMultisetsKeepRoundedCleanShare) {
    for (double sigma : {0.2, 0.35, 0.9}) {
        auto c = small_config();
        c.n_answers = 6;
        c.noise_sigma = sigma;
        const auto expected_clean = std::lround(10.0 * (1.0 - std::min(0.5, sigma)));
        for (const auto& ex : generate(c).examples) {
            const auto clean = std::count(ex.answers.begin(), ex.answers.end(), ex.label);
            EXPECT_EQ(clean, expected_clean) << sigma;
            for (auto a : ex.answers) EXPECT_LT(static_cast<std::size_t>(a), c.n_answers);
        }
    }
}

TEST(Generate, AttentionTasksPlantSignalInOneRegion) {
    auto c = small_config();
    c.regions = 5;
    c.distractor_scale = 0.0;
    for (const auto& ex : generate(c).examples) {
        ASSERT_EQ(ex.v.count(), 5u);
        for (std::size_t g = 0; g < 5; ++g) {
            double norm = 0.0;
            for (double x : ex.v.regions[g]) norm += x * x;
            if (static_cast<std::int32_t>(g) == ex.signal_region)
                EXPECT_GT(norm, 0.0);
            else
                EXPECT_EQ(norm, 0.0);
        }
    }
}

TEST(Generate, PureFunctionOfSeedAndConfig) {
    EXPECT_EQ(generate(small_config(4)), generate(small_config(4)));
    EXPECT_FALSE(generate(small_config(4)) == generate(small_config(5)));
}

TEST(Generate, InvalidConfigRejected) {
    auto c = small_config();
    c.n_answers = 0;
    EXPECT_THROW(generate(c), ConfigError);
    c = small_config();
    c.noise_sigma = -0.1;
    EXPECT_THROW(generate(c), ConfigError);
    c = small_config();
    c.planted_rank = 4;
    EXPECT_THROW(generate(c), ConfigError);
}

TEST(Dataset, RoundTripIsIdentity) {
    mutan::testing::TempDir dir;
    for (std::size_t regions : {1u, 3u}) {
        auto c = small_config();
        c.regions = regions;
        c.noise_sigma = 0.3;
        const auto task = generate(c);
        write_dataset(task, dir / "data");
        EXPECT_EQ(read_dataset(dir / "data"), task);
        EXPECT_EQ(read_dataset(dir / "data.manifest"), task);
    }
}

TEST(Dataset, SameSeedGivesSameBytes) {
    mutan::testing::TempDir dir;
    write_dataset(generate(small_config(8)), dir / "a");
    write_dataset(generate(small_config(8)), dir / "b");
    EXPECT_EQ(slurp(dir / "a.blob"), slurp(dir / "b.blob"));
    auto ma = slurp(dir / "a.manifest"), mb = slurp(dir / "b.manifest");
    EXPECT_EQ(ma.replace(ma.find("blob=a.blob"), 11, ""), mb.replace(mb.find("blob=b.blob"), 11, ""));
}

TEST(Dataset, EmptyExampleListRoundTrips) {
    mutan::testing::TempDir dir;
    auto c = small_config();
    c.train_examples = 0;
    c.val_examples = 0;
    const auto task = generate(c);
    ASSERT_TRUE(task.examples.empty());
    write_dataset(task, dir / "empty");
    const auto back = read_dataset(dir / "empty");
    EXPECT_TRUE(back.examples.empty());
    EXPECT_EQ(back, task);
}

FormatErrc read_error(const std::filesystem::path& p) {
    try {
        read_dataset(p);
    } catch (const FormatError& e) {
        return e.code();
    }
    ADD_FAILURE() << "read_dataset accepted a damaged file";
    return FormatErrc::malformed;
}

TEST(Dataset, FlippedPayloadByteFailsChecksum) {
    mutan::testing::TempDir dir;
    write_dataset(generate(small_config()), dir / "d");
    std::string blob = slurp(dir / "d.blob");
    blob[blob.size() / 2] ^= 0x01;
    std::ofstream(dir / "d.blob", std::ios::binary | std::ios::trunc) << blob;
    EXPECT_EQ(read_error(dir / "d"), FormatErrc::checksum_mismatch);
}

TEST(Dataset, MissingFileIsIoFailure) {
    mutan::testing::TempDir dir;
    EXPECT_EQ(read_error(dir / "absent"), FormatErrc::io_failure);
}

TEST(Dataset, ManifestVersionMismatch) {
    mutan::testing::TempDir dir;
    write_dataset(generate(small_config()), dir / "d");
    std::string m = slurp(dir / "d.manifest");
    m.replace(m.find("version=1"), 9, "version=2");
    std::ofstream(dir / "d.manifest", std::ios::binary | std::ios::trunc) << m;
    EXPECT_EQ(read_error(dir / "d"), FormatErrc::version_mismatch);
}

FormatErrc decode_error(const std::string& bytes) {
    try {
        decode_blob(bytes, {{"x", DType::f64}});
    } catch (const FormatError& e) {
        return e.code();
    }
    ADD_FAILURE() << "decode_blob accepted damaged bytes";
    return FormatErrc::malformed;
}

TEST(Blob, DistinctErrorCodes) {
    const std::string good = encode_blob({BlobArray::doubles("x", {3}, {1.0, 2.0, 3.0})});
    EXPECT_EQ(decode_blob(good, {{"x", DType::f64}}).at(0).f64, (std::vector<double>{1.0, 2.0, 3.0}));

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(decode_error(bad_magic), FormatErrc::bad_magic);

    std::string bad_version = good;
    bad_version[4] = 9;
    EXPECT_EQ(decode_error(bad_version), FormatErrc::version_mismatch);

    EXPECT_EQ(decode_error(good.substr(0, good.size() - 3)), FormatErrc::truncated);
    EXPECT_EQ(decode_error(good.substr(0, 2)), FormatErrc::truncated);
}

TEST(Blob, LittleEndianLayout) {
    const std::string bytes = encode_blob({BlobArray::ints("ab", {2}, {1, -2})});
    const std::string expected = std::string("MTNF") + std::string("\x01\x00\x00\x00", 4) +
                                 std::string("\x02\x00", 2) + "ab" + std::string("\x01", 1) +
                                 std::string("\x02\x00\x00\x00", 4) + std::string("\x01\x00\x00\x00", 4) +
                                 std::string("\xfe\xff\xff\xff", 4);
    EXPECT_EQ(bytes, expected);
}

TEST(Synthdata, OraclePredictorIsPerfect) {
    const auto task = generate(small_config());
    for (const auto& ex : task.examples)
        EXPECT_EQ(planted_label(task.t_star, ex.q, ex.signal()), static_cast<std::size_t>(ex.label));
}

// The planted task needs multiplicative interactions: a rank-matched Mutan
// learns it while the linear Concat baseline cannot.
TEST(Synthdata, TaskRequiresBilinearStructure) {
    TaskConfig tc;
    tc.seed = 7;
    const auto task = generate(tc);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 32;
    cfg.max_epochs = 100;

    VqaModel mutan{FusionOperator(make_config(Scheme::Mutan, 8, 8, 4, 3, 2, 3))};
    train_loop(mutan, task.train(), task.val(), cfg);
    EXPECT_GE(top1_accuracy(mutan, task.val()), 0.9);

    FusionConfig cc;
    cc.scheme = Scheme::Concat;
    cc.d_q = 8;
    cc.d_v = 8;
    cc.d_out = 4;
    cc.seed = 3;
    VqaModel concat{FusionOperator(cc)};
    train_loop(concat, task.train(), task.val(), cfg);
    EXPECT_LE(top1_accuracy(concat, task.val()), 0.8);
}

}  // namespace
}  // namespace mutan
