#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "autoret/corpus.hpp"

namespace autoret {

/// Seeded stand-in for a QA dataset: passages are token draws from a Zipf
/// distribution over `vocab` words; each question is `question_len` distinct
/// positions sampled from one source passage, whose id is recorded as gold.
struct SynthConfig {
    std::uint64_t seed = 7;
    std::size_t passages = 2000;
    std::size_t vocab = 500;
    std::size_t passage_len = 30;
    std::size_t train_questions = 1000;
    std::size_t dev_questions = 200;
    std::size_t question_len = 5;
    double zipf_exponent = 0.0; // 0 = uniform

    void validate() const;
};

struct SynthData {
    std::vector<Passage> passages; // raw text only; tokenize against a vocabulary
    std::vector<Question> train;
    std::vector<Question> dev;
};

SynthData generate_synthetic(const SynthConfig& config);

/// Writes passages.jsonl, train.jsonl, dev.jsonl and dev.qrels.tsv.
void write_synthetic(const std::filesystem::path& dir, const SynthData& data);

/// Tokenizes passages and questions in place.
void tokenize_all(SynthData& data, const Vocabulary& vocab);

} // namespace autoret
