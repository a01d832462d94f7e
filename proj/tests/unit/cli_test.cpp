#include <quantprobe/dataset_io.hpp>
#include <quantprobe/sha256.hpp>

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

namespace qp = quantprobe;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

const fs::path& work() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "qp_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Result cli(const std::string& args) {
    const auto err_path = work() / "stderr.txt";
    const std::string cmd = std::string(QUANTPROBE_CLI) + " " + args + " 2>" + err_path.string();
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf;
    for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0;) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = qp::read_text_file(err_path);
    return r;
}

std::string path(const std::string& name) { return (work() / name).string(); }

}  // namespace

TEST(CliGen, WritesDatasetFiles) {
    const auto r = cli("gen --task percent --lo 0.0 --hi 99.9 --seed 7 --train 50 --test 10 -o " + path("gen"));
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"train.jsonl", "test.jsonl", "manifest.json", "vocab.tsv"})
        EXPECT_TRUE(fs::exists(work() / "gen" / f)) << f;
    const auto train = qp::read_split(work() / "gen" / "train.jsonl");
    EXPECT_EQ(train.header.task, qp::TaskKind::Percent);
    EXPECT_EQ(train.examples.size(), 50u);

    ASSERT_EQ(cli("gen --task percent --lo 0.0 --hi 99.9 --seed 7 --train 50 --test 10 -o " + path("gen2")).code, 0);
    for (const char* f : {"train.jsonl", "test.jsonl", "manifest.json"})
        EXPECT_EQ(qp::read_text_file(work() / "gen" / f), qp::read_text_file(work() / "gen2" / f)) << f;
}

TEST(CliGen, UnsatisfiableRangeIsConfigError) {
    const auto r = cli("gen --task order --lo 0.0 --hi 0.0 -o " + path("order0"));
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
    EXPECT_EQ(cli("gen --task percent --lo 5 --hi 1 -o " + path("bad")).code, 2);
    EXPECT_EQ(cli("gen --task nosuch -o " + path("bad")).code, 2);
    EXPECT_EQ(cli("gen --task unitid --lexicon " + path("absent.txt") + " -o " + path("bad")).code, 3);
}

TEST(CliUsage, BadInvocations) {
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
    EXPECT_EQ(cli("gen --task percent").code, 2);
    EXPECT_EQ(cli("run --task percent --runs 0 -o " + path("r0")).code, 2);
    EXPECT_EQ(cli("run --task percent --provider bogus -o " + path("r0")).code, 2);
    EXPECT_EQ(cli("run --task percent --lr 5 -o " + path("r0")).code, 2);
    EXPECT_EQ(cli("run --task percent --lr 0.01 --grid -o " + path("r0")).code, 2);
    EXPECT_EQ(cli("run --task percent --threads 0 -o " + path("r0")).code, 2);
    EXPECT_EQ(cli("--help").code, 0);
}

TEST(CliExpect, PrintsEmbeddingFileNames) {
    ASSERT_EQ(cli("gen --task unitid --seed 3 --train 20 --test 5 -o " + path("exp")).code, 0);
    const auto r = cli("expect --dir " + path("exp"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto train_sha = qp::sha256_hex(qp::read_text_file(work() / "exp" / "train.jsonl"));
    const auto test_sha = qp::sha256_hex(qp::read_text_file(work() / "exp" / "test.jsonl"));
    EXPECT_EQ(r.out, "train\t" + train_sha + ".qpemb\ntest\t" + test_sha + ".qpemb\ndim\t768\n");
    EXPECT_NE(cli("expect --dim 1024 --dir " + path("exp")).out.find("dim\t1024"), std::string::npos);
}

TEST(CliExpect, MissingOrCorruptManifest) {
    fs::create_directories(work() / "empty");
    EXPECT_EQ(cli("expect --dir " + path("empty")).code, 2);
    ASSERT_EQ(cli("gen --task percent --train 20 --test 5 -o " + path("corrupt")).code, 0);
    qp::write_text_file(work() / "corrupt" / "manifest.json", "{\"train_sha256\": ");
    EXPECT_EQ(cli("expect --dir " + path("corrupt")).code, 2);
    qp::write_text_file(work() / "corrupt" / "manifest.json", "{\"train_sha256\": \"zz\", \"test_sha256\": \"zz\"}");
    EXPECT_EQ(cli("expect --dir " + path("corrupt")).code, 2);
}

TEST(CliRun, MissingEmbeddingsExitThreeWithNames) {
    fs::create_directories(work() / "emb");
    const auto r = cli("run --task percent --train 200 --test 20 --runs 2 --seed 4 --provider file:" + path("emb") +
                       " -q -o " + path("fileout"));
    EXPECT_EQ(r.code, 3);
    for (int i = 0; i < 2; ++i) {
        const auto ds = qp::read_split(work() / "fileout" / ("run_" + std::to_string(i)) / "train.jsonl");
        const auto sha = qp::sha256_hex(qp::read_text_file(work() / "fileout" / ("run_" + std::to_string(i)) / "train.jsonl"));
        EXPECT_EQ(ds.header.seed, 4u + std::uint64_t(i));
        EXPECT_NE(r.err.find(sha + ".qpemb"), std::string::npos) << r.err;
    }
}

TEST(CliRun, DeterministicCsvAndReport) {
    const std::string args = "run --task range --provider oracle --train 200 --test 20 --runs 2 --max-epochs 5 "
                             "--threads 1 -q --seed 1 -o ";
    ASSERT_EQ(cli(args + path("det1")).code, 0);
    ASSERT_EQ(cli(args + path("det2")).code, 0);
    const auto csv = qp::read_text_file(work() / "det1" / "report.csv");
    EXPECT_EQ(csv, qp::read_text_file(work() / "det2" / "report.csv"));

    const auto from_csv = cli("report " + (work() / "det1" / "report.csv").string());
    ASSERT_EQ(from_csv.code, 0) << from_csv.err;
    EXPECT_EQ(from_csv.out, qp::read_text_file(work() / "det1" / "report.txt"));
    const auto from_dir = cli("report --format csv " + path("det1"));
    ASSERT_EQ(from_dir.code, 0) << from_dir.err;
    EXPECT_EQ(from_dir.out, csv);
    EXPECT_EQ(cli("report " + path("nothing-here")).code, 3);
}

TEST(CliGrid, WritesGridCsv) {
    const auto r = cli("grid --task percent --provider oracle --train 200 --test 20 --max-epochs 3 --lr-grid 0.01,0.001 "
                       "--momentum-grid 0.5 --threads 1 -o " + path("grid"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("selected lr="), std::string::npos);
    const auto csv = qp::read_text_file(work() / "grid" / "grid.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(CliSelftest, Passes) {
    const auto r = cli("selftest");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}
