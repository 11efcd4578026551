#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "autoret/corpus.hpp"
#include "autoret/encoder.hpp"
#include "autoret/linalg.hpp"

namespace autoret {

struct ShardRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t size() const { return end - begin; }
    friend bool operator==(const ShardRange&, const ShardRange&) = default;
};

/// Contiguous ranges covering [0, m), sizes differing by at most one, larger
/// shards first (largest-remainder split).
std::vector<ShardRange> partition_rows(std::size_t m, std::size_t num_shards);

struct SearchHit {
    std::size_t passage = 0;
    double score = 0.0;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Ranked by descending score, ties by ascending passage index.
using SearchResult = std::vector<SearchHit>;

/// Orders hits by (score desc, passage asc).
inline bool ranks_before(const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.passage < b.passage;
}

/// Immutable snapshot of every passage embedding, split into contiguous
/// shards. A new version is built for each refresh.
class EmbeddingIndex {
  public:
    struct Shard {
        ShardRange range;
        RowMatrix<float> rows;
    };

    EmbeddingIndex(const RowMatrix<float>& rows, std::size_t num_shards, std::uint64_t version);

    [[nodiscard]] std::uint64_t version() const { return version_; }
    [[nodiscard]] std::size_t size() const { return size_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] const std::vector<Shard>& shards() const { return shards_; }
    [[nodiscard]] std::vector<ShardRange> shard_ranges() const;

    [[nodiscard]] VectorXf row(std::size_t passage) const;
    [[nodiscard]] RowMatrix<float> matrix() const;

    /// Exact top-k by inner product. Each shard is scanned independently
    /// (concurrently when `parallel`), then the partial lists are merged.
    [[nodiscard]] SearchResult search(const VectorXf& query, std::size_t k, bool parallel = false) const;

    /// Header (format version, index version, m, d, shard ranges) followed by
    /// row-major little-endian float32 rows.
    void save(const std::filesystem::path& path) const;
    static EmbeddingIndex load(const std::filesystem::path& path);

  private:
    std::uint64_t version_ = 0;
    std::size_t size_ = 0;
    std::size_t dim_ = 0;
    std::vector<Shard> shards_;
};

inline constexpr std::uint32_t kIndexFormatVersion = 1;

/// Encodes every passage with the passage tower in eval mode.
RowMatrix<float> encode_passages(std::span<const Passage> passages, const EncoderParams<float>& params);

EmbeddingIndex build_index(std::span<const Passage> passages, const EncoderParams<float>& params,
                           std::size_t num_shards, std::uint64_t version = 1);

/// Re-encodes all passages under `params`; the result has version + 1 and the
/// same shard count.
EmbeddingIndex refresh_index(std::span<const Passage> passages, const EncoderParams<float>& params,
                             const EmbeddingIndex& previous);

/// Published index slot. Readers take a snapshot and keep it for the whole
/// search; a refresher builds the next version elsewhere and swaps it in.
class IndexHandle {
  public:
    IndexHandle() = default;
    explicit IndexHandle(EmbeddingIndex index);

    [[nodiscard]] std::shared_ptr<const EmbeddingIndex> snapshot() const;
    void publish(EmbeddingIndex index);

  private:
    mutable std::mutex mutex_;
    std::shared_ptr<const EmbeddingIndex> current_;
};

} // namespace autoret
