#pragma once

// Frozen embedding providers: map a tokenized example to a (tokens x dim) matrix.

#include <quantprobe/errors.hpp>
#include <quantprobe/nn.hpp>
#include <quantprobe/qpemb.hpp>
#include <quantprobe/rng.hpp>
#include <quantprobe/synthgen.hpp>
#include <quantprobe/tokenizer.hpp>

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>

namespace quantprobe {

using EmbeddingMatrix = nn::Matrix;

enum class ProviderKind { RandomVectors, Oracle, FileBacked };

inline std::string_view provider_kind_name(ProviderKind k) {
    switch (k) {
    case ProviderKind::RandomVectors: return "random";
    case ProviderKind::Oracle: return "oracle";
    case ProviderKind::FileBacked: return "file";
    }
    return "?";
}

struct ProviderSpec {
    ProviderKind kind = ProviderKind::RandomVectors;
    int dim = 768;
    std::uint64_t seed = 0;
    std::filesystem::path path;     // FileBacked: directory holding <sha256>.qpemb files
    std::optional<double> init_std; // RandomVectors: defaults to dim^-1/2
    std::string label;              // report name; defaults to the kind name

    std::string display_name() const {
        return label.empty() ? std::string(provider_kind_name(kind)) : label;
    }
};

/// i.i.d. N(0, std^2) table (vocab_size x dim); row kPadId is all zeros.
inline nn::Matrix random_table(std::size_t vocab_size, int dim, std::uint64_t seed,
                               std::optional<double> init_std = std::nullopt) {
    if (vocab_size == 0 || dim <= 0) throw ConfigError("random_table: vocab_size and dim must be > 0");
    const double sd = init_std.value_or(1.0 / std::sqrt(double(dim)));
    Rng rng(derive_seed(seed, 0x7AB1E));
    nn::Matrix t(Eigen::Index(vocab_size), dim);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = sd * rng.normal();
    t.row(kPadId).setZero();
    return t;
}

/// A frozen lookup. embed() is referentially transparent.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual int dim() const = 0;

    /// Number of rows embed() will return for this example.
    virtual std::size_t rows(const Example& ex, const TokenSeq& tokens) const = 0;

    /// Writes rows(ex, tokens) x dim() values, row-major, to `out`.
    virtual void embed_into(const Example& ex, const TokenSeq& tokens, double* out) const = 0;

    EmbeddingMatrix embed(const Example& ex, const TokenSeq& tokens) const {
        EmbeddingMatrix m(Eigen::Index(rows(ex, tokens)), dim());
        embed_into(ex, tokens, m.data());
        return m;
    }
};

class RandomVectorsProvider final : public EmbeddingProvider {
public:
    RandomVectorsProvider(std::size_t vocab_size, int dim, std::uint64_t seed,
                          std::optional<double> init_std = std::nullopt)
        : table_(random_table(vocab_size, dim, seed, init_std)) {}

    int dim() const override { return int(table_.cols()); }
    const nn::Matrix& table() const { return table_; }

    std::size_t rows(const Example&, const TokenSeq& tokens) const override { return tokens.size(); }

    void embed_into(const Example&, const TokenSeq& tokens, double* out) const override {
        const auto d = table_.cols();
        for (std::size_t r = 0; r < tokens.size(); ++r) {
            const int id = tokens.ids[r];
            if (id < 0 || id >= table_.rows())
                throw DataError("token id " + std::to_string(id) + " outside embedding table");
            std::copy_n(table_.row(id).data(), d, out + Eigen::Index(r) * d);
        }
    }

private:
    nn::Matrix table_;
};

/// Positive control: column 0 of every row holds the example's first target,
/// the remaining columns are N(0, noise_std^2) noise keyed on (seed, id, input).
class OracleProvider final : public EmbeddingProvider {
public:
    OracleProvider(int dim, std::uint64_t seed, double noise_std = 0.01)
        : dim_(dim), seed_(seed), noise_std_(noise_std) {
        if (dim <= 0) throw ConfigError("oracle provider: dim must be > 0");
    }

    int dim() const override { return dim_; }

    std::size_t rows(const Example&, const TokenSeq& tokens) const override { return tokens.size(); }

    void embed_into(const Example& ex, const TokenSeq& tokens, double* out) const override {
        const double signal = ex.targets.empty() ? double(ex.label.value_or(0)) : ex.targets.front();
        Rng rng(derive_seed(seed_ ^ fnv1a(ex.input), ex.id));
        for (std::size_t r = 0; r < tokens.size(); ++r) {
            double* row = out + r * std::size_t(dim_);
            row[0] = signal;
            for (int c = 1; c < dim_; ++c) row[c] = noise_std_ * rng.normal();
        }
    }

private:
    int dim_;
    std::uint64_t seed_;
    double noise_std_;
};

/// Embeddings precomputed by an external encoder, one QPEMB file per split.
class FileBackedProvider final : public EmbeddingProvider {
public:
    FileBackedProvider(qpemb::File file, std::optional<int> expected_dim = std::nullopt)
        : file_(std::move(file)) {
        if (expected_dim && *expected_dim != int(file_.dim))
            throw DataError("embedding file dim " + std::to_string(file_.dim) + " does not match expected " +
                            std::to_string(*expected_dim));
        for (std::size_t i = 0; i < file_.records.size(); ++i) index_.emplace(file_.records[i].id, i);
    }

    static FileBackedProvider open(const std::filesystem::path& path,
                                   std::optional<int> expected_dim = std::nullopt) {
        return FileBackedProvider(qpemb::read(path), expected_dim);
    }

    int dim() const override { return int(file_.dim); }
    std::size_t record_count() const { return file_.records.size(); }

    std::size_t rows(const Example& ex, const TokenSeq&) const override {
        return std::size_t(record(ex.id).values.rows());
    }

    void embed_into(const Example& ex, const TokenSeq&, double* out) const override {
        const auto& v = record(ex.id).values;
        for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = double(v.data()[i]);
    }

    bool has(std::uint64_t id) const { return index_.count(id) != 0; }

private:
    const qpemb::Record& record(std::uint64_t id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw DataError("example id " + std::to_string(id) + " missing from embedding file");
        return file_.records[it->second];
    }

    qpemb::File file_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// Expected embedding file name for a serialized split: <sha256>.qpemb.
inline std::string qpemb_name(const std::string& split_sha256) { return split_sha256 + ".qpemb"; }

}  // namespace quantprobe
