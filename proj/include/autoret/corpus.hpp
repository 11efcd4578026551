#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace autoret {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Token-to-id map. Ids 0..3 are reserved for `<unk>`, `<sep>`, `<bos>` and
/// `<eos>`; every other entry maps one-to-one. Immutable once built.
class Vocabulary {
  public:
    static constexpr TokenId kUnk = 0;
    static constexpr TokenId kSep = 1;
    static constexpr TokenId kBos = 2;
    static constexpr TokenId kEos = 3;
    static constexpr TokenId kNumReserved = 4;

    Vocabulary();

    /// Builds from ordinary tokens in id order; reserved entries are prepended.
    explicit Vocabulary(std::span<const std::string> tokens);

    [[nodiscard]] TokenId id(std::string_view token) const;
    [[nodiscard]] const std::string& token(TokenId id) const;
    [[nodiscard]] bool contains(std::string_view token) const;
    [[nodiscard]] std::size_t size() const { return tokens_.size(); }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    /// One token per line, in id order, reserved tokens included.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

struct Passage {
    std::string id;
    std::string title;
    std::string text;
    TokenSeq title_tokens;
    TokenSeq text_tokens;

    /// Encoder input for the passage side: title, `<sep>`, text.
    [[nodiscard]] TokenSeq encoder_input() const;
};

struct Question {
    std::string id;
    std::string text;
    TokenSeq tokens;
    std::vector<std::string> answers;
    /// Ids of passages known to be the question's source. Only synthetic
    /// data carries these; the mix/in-batch candidate ablations need them.
    std::vector<std::string> gold;
};

/// Raw document before segmentation into evidence passages.
struct Article {
    std::string id;
    std::string title;
    std::string text;
};

/// Lowercases, splits at whitespace and ASCII punctuation, drops the
/// punctuation. Bytes >= 0x80 are treated as word characters.
std::vector<std::string> split_words(std::string_view text);

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);

/// Joins tokens with single spaces.
std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab);

/// Keeps tokens seen at least `min_count` times, ordered by descending count
/// and then lexicographically. Throws on an empty corpus.
Vocabulary build_vocabulary(std::span<const std::string> texts, std::size_t min_count);

/// Reads a passage file and counts tokens of titles and texts.
Vocabulary build_vocabulary(const std::filesystem::path& passages_path, std::size_t min_count);

struct RecordError {
    std::size_t line = 0;
    std::string message;
};

template <typename Record>
struct IngestResult {
    std::vector<Record> records;
    std::vector<RecordError> rejected;
};

/// Reads newline-delimited {"id","title","text"} records. Malformed or
/// empty-text lines are rejected and processing continues; a duplicate id
/// throws FormatError naming the id.
IngestResult<Passage> ingest_passages(const std::filesystem::path& path, const Vocabulary& vocab);

/// Reads newline-delimited {"id","question","answers"?,"gold"?} records.
IngestResult<Question> ingest_questions(const std::filesystem::path& path, const Vocabulary& vocab);

void write_passages(const std::filesystem::path& path, std::span<const Passage> passages);
void write_questions(const std::filesystem::path& path, std::span<const Question> questions);

/// Splits an article into consecutive non-overlapping windows of `window`
/// words. A trailing window shorter than 10 words is merged into the previous
/// segment. Segment k gets id "<article id>-k" and the article title.
/// Tokens are left empty; see `tokenize_passage`.
std::vector<Passage> segment_document(const Article& article, std::size_t window = 100);

void tokenize_passage(Passage& passage, const Vocabulary& vocab);

/// Position lookup for passage ids.
std::unordered_map<std::string, std::size_t> index_by_id(std::span<const Passage> passages);

} // namespace autoret
