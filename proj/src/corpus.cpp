#include "autoret/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <unordered_set>

#include <json.hpp>

#include "autoret/error.hpp"

namespace autoret {

namespace {

constexpr std::size_t kMinTailWords = 10;

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> reserved{"<unk>", "<sep>", "<bos>", "<eos>"};
    return reserved;
}

bool is_word_byte(unsigned char c) {
    if (c >= 0x80) {
        return true;
    }
    return std::isalnum(c) != 0;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    return out;
}

std::vector<std::string> whitespace_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])) != 0) {
            ++i;
        }
        std::size_t start = i;
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])) == 0) {
            ++i;
        }
        if (i > start) {
            words.emplace_back(text.substr(start, i - start));
        }
    }
    return words;
}

std::string join(std::span<const std::string> words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += w;
    }
    return out;
}

} // namespace

Vocabulary::Vocabulary() : Vocabulary(std::span<const std::string>{}) {}

Vocabulary::Vocabulary(std::span<const std::string> tokens) {
    tokens_ = reserved_tokens();
    tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = ids_.emplace(tokens_[i], static_cast<TokenId>(i));
        if (!inserted) {
            throw FormatError("duplicate vocabulary entry '" + tokens_[i] + "'");
        }
    }
}

TokenId Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw Error("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return ids_.contains(std::string(token)); }

void Vocabulary::save(const std::filesystem::path& path) const {
    auto out = open_output(path);
    for (const auto& t : tokens_) {
        out << t << '\n';
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    auto in = open_input(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    const auto& reserved = reserved_tokens();
    if (lines.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), lines.begin())) {
        throw FormatError(path.string() + ": vocabulary must start with the reserved tokens");
    }
    return Vocabulary(std::span<const std::string>(lines).subspan(reserved.size()));
}

TokenSeq Passage::encoder_input() const {
    TokenSeq seq;
    seq.reserve(title_tokens.size() + 1 + text_tokens.size());
    seq.insert(seq.end(), title_tokens.begin(), title_tokens.end());
    seq.push_back(Vocabulary::kSep);
    seq.insert(seq.end(), text_tokens.begin(), text_tokens.end());
    return seq;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (is_word_byte(c)) {
            current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        words.push_back(std::move(current));
    }
    return words;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
    TokenSeq ids;
    for (const auto& w : split_words(text)) {
        ids.push_back(vocab.id(w));
    }
    return ids;
}

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab) {
    std::string out;
    for (TokenId t : tokens) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += vocab.token(t);
    }
    return out;
}

Vocabulary build_vocabulary(std::span<const std::string> texts, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    for (const auto& text : texts) {
        for (auto& w : split_words(text)) {
            ++counts[std::move(w)];
        }
    }
    if (counts.empty()) {
        throw Error("cannot build a vocabulary from an empty corpus");
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : counts) {
        if (n >= min_count) {
            kept.emplace_back(tok, n);
        }
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (auto& [tok, n] : kept) {
        tokens.push_back(tok);
    }
    return Vocabulary(tokens);
}

Vocabulary build_vocabulary(const std::filesystem::path& passages_path, std::size_t min_count) {
    auto in = open_input(passages_path);
    std::vector<std::string> texts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            continue;
        }
        for (const char* key : {"title", "text"}) {
            if (auto it = j.find(key); it != j.end() && it->is_string()) {
                texts.push_back(it->get<std::string>());
            }
        }
    }
    return build_vocabulary(texts, min_count);
}

namespace {

std::string required_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        throw FormatError(std::string("missing string field \"") + key + "\"");
    }
    return it->get<std::string>();
}

std::vector<std::string> optional_strings(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return {};
    }
    if (!it->is_array()) {
        throw FormatError(std::string("field \"") + key + "\" must be a list of strings");
    }
    std::vector<std::string> out;
    for (const auto& v : *it) {
        if (!v.is_string()) {
            throw FormatError(std::string("field \"") + key + "\" must be a list of strings");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

// Shared driver: parse each line, hand it to `make`, reject on FormatError.
template <typename Record, typename Make>
IngestResult<Record> ingest_lines(const std::filesystem::path& path, Make make) {
    auto in = open_input(path);
    IngestResult<Record> result;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            result.rejected.push_back({lineno, "malformed JSON"});
            continue;
        }
        Record rec;
        try {
            rec = make(j);
        } catch (const FormatError& e) {
            result.rejected.push_back({lineno, e.what()});
            continue;
        }
        if (!seen.insert(rec.id).second) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": duplicate id \"" + rec.id + "\"");
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

} // namespace

IngestResult<Passage> ingest_passages(const std::filesystem::path& path, const Vocabulary& vocab) {
    return ingest_lines<Passage>(path, [&](const nlohmann::json& j) {
        Passage p;
        p.id = required_string(j, "id");
        p.title = required_string(j, "title");
        p.text = required_string(j, "text");
        tokenize_passage(p, vocab);
        if (p.text_tokens.empty()) {
            throw FormatError("passage \"" + p.id + "\" has no tokens");
        }
        return p;
    });
}

IngestResult<Question> ingest_questions(const std::filesystem::path& path, const Vocabulary& vocab) {
    return ingest_lines<Question>(path, [&](const nlohmann::json& j) {
        Question q;
        q.id = required_string(j, "id");
        q.text = required_string(j, "question");
        q.answers = optional_strings(j, "answers");
        q.gold = optional_strings(j, "gold");
        q.tokens = tokenize(q.text, vocab);
        if (q.tokens.empty()) {
            throw FormatError("question \"" + q.id + "\" has no tokens");
        }
        return q;
    });
}

void write_passages(const std::filesystem::path& path, std::span<const Passage> passages) {
    auto out = open_output(path);
    for (const auto& p : passages) {
        nlohmann::ordered_json j{{"id", p.id}, {"title", p.title}, {"text", p.text}};
        out << j.dump() << '\n';
    }
}

void write_questions(const std::filesystem::path& path, std::span<const Question> questions) {
    auto out = open_output(path);
    for (const auto& q : questions) {
        nlohmann::ordered_json j{{"id", q.id}, {"question", q.text}};
        if (!q.answers.empty()) {
            j["answers"] = q.answers;
        }
        if (!q.gold.empty()) {
            j["gold"] = q.gold;
        }
        out << j.dump() << '\n';
    }
}

std::vector<Passage> segment_document(const Article& article, std::size_t window) {
    if (window == 0) {
        throw Error("segment window must be at least 1");
    }
    auto words = whitespace_words(article.text);
    std::vector<std::pair<std::size_t, std::size_t>> bounds;
    for (std::size_t start = 0; start < words.size(); start += window) {
        bounds.emplace_back(start, std::min(start + window, words.size()));
    }
    if (bounds.size() > 1) {
        auto [start, end] = bounds.back();
        if (end - start < kMinTailWords) {
            bounds.pop_back();
            bounds.back().second = end;
        }
    }
    std::vector<Passage> segments;
    segments.reserve(bounds.size());
    for (std::size_t k = 0; k < bounds.size(); ++k) {
        auto [start, end] = bounds[k];
        Passage p;
        p.id = article.id + "-" + std::to_string(k);
        p.title = article.title;
        p.text = join(std::span<const std::string>(words).subspan(start, end - start));
        segments.push_back(std::move(p));
    }
    return segments;
}

void tokenize_passage(Passage& passage, const Vocabulary& vocab) {
    passage.title_tokens = tokenize(passage.title, vocab);
    passage.text_tokens = tokenize(passage.text, vocab);
}

std::unordered_map<std::string, std::size_t> index_by_id(std::span<const Passage> passages) {
    std::unordered_map<std::string, std::size_t> ids;
    ids.reserve(passages.size());
    for (std::size_t i = 0; i < passages.size(); ++i) {
        ids.emplace(passages[i].id, i);
    }
    return ids;
}

} // namespace autoret
