#include "autoret/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "autoret/error.hpp"
#include "autoret/rng.hpp"

namespace autoret {

void SynthConfig::validate() const {
    if (passages == 0 || vocab == 0 || passage_len == 0 || question_len == 0) {
        throw UsageError("synthetic corpus sizes must be positive");
    }
    if (question_len > passage_len) {
        throw UsageError("question length cannot exceed passage length");
    }
    if (zipf_exponent < 0.0) {
        throw UsageError("zipf exponent must be non-negative");
    }
}

namespace {

std::string word(std::size_t i, std::size_t vocab) {
    const auto width = std::to_string(vocab - 1).size();
    std::string digits = std::to_string(i);
    return "w" + std::string(width - digits.size(), '0') + digits;
}

std::string numbered(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%05zu", prefix, i);
    return buf;
}

} // namespace

SynthData generate_synthetic(const SynthConfig& config) {
    config.validate();
    std::vector<double> cdf(config.vocab);
    double total = 0.0;
    for (std::size_t r = 0; r < config.vocab; ++r) {
        total += 1.0 / std::pow(static_cast<double>(r + 1), config.zipf_exponent);
        cdf[r] = total;
    }
    for (auto& c : cdf) {
        c /= total;
    }

    SynthData data;
    std::vector<std::vector<std::string>> passage_words;
    std::mt19937_64 rng(mix_seed(config.seed, 0x70617373));
    for (std::size_t p = 0; p < config.passages; ++p) {
        std::vector<std::string> words;
        std::string text;
        for (std::size_t t = 0; t < config.passage_len; ++t) {
            auto r = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), uniform01(rng)) - cdf.begin());
            words.push_back(word(std::min(r, config.vocab - 1), config.vocab));
            text += (t ? " " : "") + words.back();
        }
        data.passages.push_back({numbered("p", p), "", text, {}, {}});
        passage_words.push_back(std::move(words));
    }

    std::mt19937_64 qrng(mix_seed(config.seed, 0x71756573));
    auto make_question = [&](std::size_t i, const char* prefix) {
        auto source = static_cast<std::size_t>(uniform_index(qrng, config.passages));
        std::vector<std::size_t> positions(config.passage_len);
        for (std::size_t t = 0; t < positions.size(); ++t) {
            positions[t] = t;
        }
        shuffle(positions.begin(), positions.end(), qrng);
        std::string text;
        for (std::size_t t = 0; t < config.question_len; ++t) {
            text += (t ? " " : "") + passage_words[source][positions[t]];
        }
        Question q;
        q.id = numbered(prefix, i);
        q.text = text;
        q.gold = {data.passages[source].id};
        return q;
    };
    for (std::size_t i = 0; i < config.train_questions; ++i) {
        data.train.push_back(make_question(i, "t"));
    }
    for (std::size_t i = 0; i < config.dev_questions; ++i) {
        data.dev.push_back(make_question(i, "d"));
    }
    return data;
}

void write_synthetic(const std::filesystem::path& dir, const SynthData& data) {
    std::filesystem::create_directories(dir);
    write_passages(dir / "passages.jsonl", data.passages);
    write_questions(dir / "train.jsonl", data.train);
    write_questions(dir / "dev.jsonl", data.dev);
    std::ofstream qrels(dir / "dev.qrels.tsv", std::ios::binary);
    if (!qrels) {
        throw Error("cannot write " + (dir / "dev.qrels.tsv").string());
    }
    for (const auto& q : data.dev) {
        for (const auto& pid : q.gold) {
            qrels << q.id << '\t' << pid << "\t1\n";
        }
    }
}

void tokenize_all(SynthData& data, const Vocabulary& vocab) {
    for (auto& p : data.passages) {
        tokenize_passage(p, vocab);
    }
    for (auto* set : {&data.train, &data.dev}) {
        for (auto& q : *set) {
            q.tokens = tokenize(q.text, vocab);
        }
    }
}

} // namespace autoret
