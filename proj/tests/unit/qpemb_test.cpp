#include <quantprobe/qpemb.hpp>
#include <quantprobe/rng.hpp>

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

namespace qp = quantprobe;
namespace qe = quantprobe::qpemb;

namespace {

// Hand-assembled little-endian bytes, independent of the encoder.
std::string le(std::uint64_t v, int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s.push_back(char((v >> (8 * i)) & 0xFF));
    return s;
}

std::string header(std::uint32_t dim, std::uint64_t count) {
    return std::string("QPEM") + le(1, 4) + le(dim, 4) + le(count, 8);
}

std::uint64_t offset_of(const std::string& bytes) {
    try {
        qe::decode(bytes);
    } catch (const qp::FormatError& e) {
        return e.offset();
    }
    ADD_FAILURE() << "decode accepted malformed bytes";
    return ~0ull;
}

std::vector<qe::Record> random_records(std::size_t n, std::uint32_t dim, std::uint64_t seed) {
    qp::Rng rng(seed);
    std::vector<qe::Record> recs(n);
    for (std::size_t i = 0; i < n; ++i) {
        recs[i].id = i * 7 + 3;
        recs[i].values.resize(Eigen::Index(1 + rng.uniform_index(6)), dim);
        for (Eigen::Index k = 0; k < recs[i].values.size(); ++k) recs[i].values.data()[k] = float(rng.normal());
    }
    return recs;
}

}  // namespace

TEST(Qpemb, EmptyFileIsHeaderOnly) {
    const auto bytes = qe::encode(4, {});
    EXPECT_EQ(bytes.size(), 20u);
    EXPECT_EQ(bytes, header(4, 0));
    const auto f = qe::decode(bytes);
    EXPECT_EQ(f.dim, 4u);
    EXPECT_TRUE(f.records.empty());
}

TEST(Qpemb, ZeroMatrixLayout) {
    qe::Record r;
    r.id = 0;
    r.values = qe::FloatMatrix::Zero(2, 3);
    const std::vector<qe::Record> recs{r};
    const auto bytes = qe::encode(3, recs);
    ASSERT_EQ(bytes.size(), 56u);
    EXPECT_EQ(bytes.size(), 20u + 8u + 4u + 24u);
    EXPECT_EQ(bytes, header(3, 1) + le(0, 8) + le(2, 4) + std::string(24, '\0'));
}

TEST(Qpemb, LittleEndianFloats) {
    qe::Record r;
    r.id = 0x0102030405060708ull;
    r.values.resize(1, 2);
    r.values << 1.0f, -2.5f;
    const std::vector<qe::Record> recs{r};
    const auto bytes = qe::encode(2, recs);
    EXPECT_EQ(bytes.substr(20, 8), "\x08\x07\x06\x05\x04\x03\x02\x01");
    EXPECT_EQ(bytes.substr(32, 4), std::string("\x00\x00\x80\x3f", 4));
    EXPECT_EQ(bytes.substr(36, 4), std::string("\x00\x00\x20\xc0", 4));
}

TEST(Qpemb, RoundTripIsBitExact) {
    const auto recs = random_records(1000, 16, 42);
    const auto dir = std::filesystem::temp_directory_path() / "qp_qpemb_test";
    std::filesystem::create_directories(dir);
    qe::write(dir / "a.qpemb", 16, recs);
    const auto f = qe::read(dir / "a.qpemb");
    EXPECT_EQ(f.dim, 16u);
    ASSERT_EQ(f.records.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_TRUE(f.records[i] == recs[i]) << i;
    EXPECT_EQ(std::filesystem::file_size(dir / "a.qpemb"), qe::encoded_size(16, recs));
}

TEST(Qpemb, RoundTripPreservesSpecialFloats) {
    qe::Record r;
    r.values.resize(1, 4);
    r.values << -0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max(), 1e-30f;
    const std::vector<qe::Record> recs{r};
    const auto f = qe::decode(qe::encode(4, recs));
    EXPECT_TRUE(f.records[0] == r);
    EXPECT_TRUE(std::signbit(f.records[0].values(0, 0)));
}

TEST(Qpemb, TruncationReportsOffset) {
    const auto recs = random_records(5, 3, 1);
    const auto bytes = qe::encode(3, recs);
    // Drop the last byte: the final payload starts where the last record's values begin.
    const std::size_t last_payload = bytes.size() - 4 * std::size_t(recs.back().values.size());
    EXPECT_EQ(offset_of(bytes.substr(0, bytes.size() - 1)), last_payload);
    EXPECT_EQ(offset_of(bytes.substr(0, 10)), 0u);
    EXPECT_EQ(offset_of(bytes.substr(0, 25)), 20u);
}

TEST(Qpemb, TruncatedFileErrorMentionsOffset) {
    const auto bytes = qe::encode(3, random_records(2, 3, 1));
    const auto dir = std::filesystem::temp_directory_path() / "qp_qpemb_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "t.qpemb", std::ios::binary);
        out << bytes.substr(0, 30);
    }
    try {
        qe::read(dir / "t.qpemb");
        FAIL();
    } catch (const qp::FormatError& e) {
        EXPECT_EQ(e.offset(), 20u);
        EXPECT_NE(std::string(e.what()).find("offset 20"), std::string::npos) << e.what();
    }
    EXPECT_THROW(qe::read(dir / "absent.qpemb"), qp::MissingDataError);
}

TEST(Qpemb, RejectsMalformed) {
    auto bad_magic = header(3, 0);
    bad_magic[0] = 'X';
    EXPECT_EQ(offset_of(bad_magic), 0u);
    EXPECT_EQ(offset_of(std::string("QPEM") + le(2, 4) + le(3, 4) + le(0, 8)), 4u);
    EXPECT_EQ(offset_of(header(0, 0)), 8u);
    EXPECT_EQ(offset_of(header(1, 1) + le(5, 8) + le(0, 4)), 20u);
    const std::string rec = le(5, 8) + le(1, 4) + le(0, 4);
    EXPECT_EQ(offset_of(header(1, 2) + rec + rec), 36u);
    EXPECT_EQ(offset_of(header(1, 0) + "x"), 20u);
    EXPECT_EQ(offset_of(header(1, 1) + le(5, 8) + le(1, 4) + le(0x7fc00000u, 4)), 32u);
}

TEST(Qpemb, EncoderValidates) {
    auto recs = random_records(2, 3, 1);
    EXPECT_THROW(qe::encode(0, {}), qp::FormatError);
    EXPECT_THROW(qe::encode(4, recs), qp::FormatError);
    recs[1].id = recs[0].id;
    EXPECT_THROW(qe::encode(3, recs), qp::FormatError);
}
