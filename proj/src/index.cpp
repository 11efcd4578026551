#include "autoret/index.hpp"

#include <algorithm>
#include <fstream>
#include <future>

#include "autoret/io.hpp"

namespace autoret {

std::vector<ShardRange> partition_rows(std::size_t m, std::size_t num_shards) {
    if (num_shards == 0) {
        throw Error("num_shards must be at least 1");
    }
    std::vector<ShardRange> ranges;
    const std::size_t base = m / num_shards;
    const std::size_t extra = m % num_shards;
    std::size_t begin = 0;
    for (std::size_t s = 0; s < num_shards; ++s) {
        std::size_t len = base + (s < extra ? 1 : 0);
        ranges.push_back({begin, begin + len});
        begin += len;
    }
    return ranges;
}

EmbeddingIndex::EmbeddingIndex(const RowMatrix<float>& rows, std::size_t num_shards, std::uint64_t version)
    : version_(version), size_(static_cast<std::size_t>(rows.rows())), dim_(static_cast<std::size_t>(rows.cols())) {
    if (size_ == 0) {
        throw Error("cannot index an empty passage set");
    }
    if (!rows.allFinite()) {
        throw Error("index rows must be finite");
    }
    for (const auto& range : partition_rows(size_, num_shards)) {
        shards_.push_back({range, rows.middleRows(static_cast<Eigen::Index>(range.begin),
                                                  static_cast<Eigen::Index>(range.size()))});
    }
}

std::vector<ShardRange> EmbeddingIndex::shard_ranges() const {
    std::vector<ShardRange> ranges;
    for (const auto& s : shards_) {
        ranges.push_back(s.range);
    }
    return ranges;
}

VectorXf EmbeddingIndex::row(std::size_t passage) const {
    for (const auto& s : shards_) {
        if (passage >= s.range.begin && passage < s.range.end) {
            return s.rows.row(static_cast<Eigen::Index>(passage - s.range.begin)).transpose();
        }
    }
    throw Error("passage index " + std::to_string(passage) + " out of range");
}

RowMatrix<float> EmbeddingIndex::matrix() const {
    RowMatrix<float> all(static_cast<Eigen::Index>(size_), static_cast<Eigen::Index>(dim_));
    for (const auto& s : shards_) {
        all.middleRows(static_cast<Eigen::Index>(s.range.begin), static_cast<Eigen::Index>(s.range.size())) = s.rows;
    }
    return all;
}

namespace {

SearchResult shard_top_k(const EmbeddingIndex::Shard& shard, const VectorXf& query, std::size_t k) {
    if (shard.range.size() == 0) {
        return {};
    }
    VectorXf scores = shard.rows * query;
    SearchResult hits(shard.range.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        hits[i] = {shard.range.begin + i, static_cast<double>(scores(static_cast<Eigen::Index>(i)))};
    }
    const auto keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
    hits.resize(keep);
    return hits;
}

} // namespace

SearchResult EmbeddingIndex::search(const VectorXf& query, std::size_t k, bool parallel) const {
    if (static_cast<std::size_t>(query.size()) != dim_) {
        throw Error("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                    std::to_string(dim_));
    }
    if (k == 0 || k > size_) {
        throw Error("k=" + std::to_string(k) + " outside [1, " + std::to_string(size_) + "]");
    }
    std::vector<SearchResult> partials(shards_.size());
    if (parallel && shards_.size() > 1) {
        std::vector<std::future<SearchResult>> futures;
        for (const auto& shard : shards_) {
            futures.push_back(std::async(std::launch::async, shard_top_k, std::cref(shard), std::cref(query), k));
        }
        for (std::size_t s = 0; s < futures.size(); ++s) {
            partials[s] = futures[s].get();
        }
    } else {
        for (std::size_t s = 0; s < shards_.size(); ++s) {
            partials[s] = shard_top_k(shards_[s], query, k);
        }
    }
    SearchResult merged;
    for (auto& p : partials) {
        merged.insert(merged.end(), p.begin(), p.end());
    }
    std::partial_sort(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(k), merged.end(), ranks_before);
    merged.resize(k);
    return merged;
}

namespace {
constexpr char kIndexMagic[5] = "RIDX";
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    io::write_magic(out, kIndexMagic);
    io::write<std::uint32_t>(out, kIndexFormatVersion);
    io::write<std::uint64_t>(out, version_);
    io::write<std::uint64_t>(out, size_);
    io::write<std::uint64_t>(out, dim_);
    io::write<std::uint64_t>(out, shards_.size());
    for (const auto& s : shards_) {
        io::write<std::uint64_t>(out, s.range.begin);
        io::write<std::uint64_t>(out, s.range.end);
    }
    for (const auto& s : shards_) {
        for (Eigen::Index i = 0; i < s.rows.rows(); ++i) {
            for (Eigen::Index j = 0; j < s.rows.cols(); ++j) {
                io::write<float>(out, s.rows(i, j));
            }
        }
    }
    if (!out) {
        throw Error("failed writing " + path.string());
    }
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    io::expect_magic(in, kIndexMagic, "embedding index");
    auto format = io::read<std::uint32_t>(in);
    if (format != kIndexFormatVersion) {
        throw FormatError("index format version " + std::to_string(format) + ", expected " +
                          std::to_string(kIndexFormatVersion));
    }
    auto version = io::read<std::uint64_t>(in);
    auto m = io::read<std::uint64_t>(in);
    auto d = io::read<std::uint64_t>(in);
    auto num_shards = io::read<std::uint64_t>(in);
    if (m == 0 || m > (1ULL << 32) || d > (1ULL << 20) || num_shards == 0 || num_shards > (1ULL << 20)) {
        throw FormatError("index header out of range");
    }
    std::vector<ShardRange> ranges;
    for (std::uint64_t s = 0; s < num_shards; ++s) {
        ShardRange r;
        r.begin = io::read<std::uint64_t>(in);
        r.end = io::read<std::uint64_t>(in);
        ranges.push_back(r);
    }
    if (ranges != partition_rows(m, num_shards)) {
        throw FormatError("index shard ranges do not partition the rows");
    }
    RowMatrix<float> rows(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < rows.cols(); ++j) {
            rows(i, j) = io::read<float>(in);
        }
    }
    return EmbeddingIndex(rows, num_shards, version);
}

RowMatrix<float> encode_passages(std::span<const Passage> passages, const EncoderParams<float>& params) {
    const auto dims = params.dims();
    RowMatrix<float> rows(static_cast<Eigen::Index>(passages.size()), static_cast<Eigen::Index>(dims.d_out));
    for (std::size_t i = 0; i < passages.size(); ++i) {
        try {
            rows.row(static_cast<Eigen::Index>(i)) = encode_passage(passages[i], params).transpose();
        } catch (const Error& e) {
            throw Error("failed to encode passage \"" + passages[i].id + "\": " + e.what());
        }
    }
    return rows;
}

EmbeddingIndex build_index(std::span<const Passage> passages, const EncoderParams<float>& params,
                           std::size_t num_shards, std::uint64_t version) {
    if (passages.empty()) {
        throw Error("cannot index an empty passage set");
    }
    if (num_shards == 0) {
        throw Error("num_shards must be at least 1");
    }
    return EmbeddingIndex(encode_passages(passages, params), num_shards, version);
}

EmbeddingIndex refresh_index(std::span<const Passage> passages, const EncoderParams<float>& params,
                             const EmbeddingIndex& previous) {
    return build_index(passages, params, previous.shards().size(), previous.version() + 1);
}

IndexHandle::IndexHandle(EmbeddingIndex index) : current_(std::make_shared<const EmbeddingIndex>(std::move(index))) {}

std::shared_ptr<const EmbeddingIndex> IndexHandle::snapshot() const {
    std::lock_guard lock(mutex_);
    if (!current_) {
        throw Error("no index has been published");
    }
    return current_;
}

void IndexHandle::publish(EmbeddingIndex index) {
    auto next = std::make_shared<const EmbeddingIndex>(std::move(index));
    std::lock_guard lock(mutex_);
    if (current_ && next->version() <= current_->version()) {
        throw Error("index version must increase on publish");
    }
    current_ = std::move(next);
}

} // namespace autoret
