#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "autoret/corpus.hpp"
#include "autoret/encoder.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("autoret-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline autoret::TokenSeq random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
    autoret::TokenSeq out(n);
    for (auto& t : out) {
        t = static_cast<autoret::TokenId>(autoret::uniform_index(rng, vocab));
    }
    return out;
}

// Passages whose text tokens are random draws; titles empty.
inline std::vector<autoret::Passage> random_passages(std::mt19937_64& rng, std::size_t m, std::size_t len,
                                                     std::size_t vocab) {
    std::vector<autoret::Passage> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        out[i].id = "p" + std::to_string(i);
        out[i].text_tokens = random_tokens(rng, len, vocab);
    }
    return out;
}

// Parameters with every entry uniform in [-scale, scale], biases included.
template <typename S>
autoret::EncoderParams<S> random_params(const autoret::EncoderDims& dims, std::uint64_t seed, double scale = 0.5) {
    auto p = autoret::EncoderParams<S>::zeros(dims);
    std::mt19937_64 rng(seed);
    autoret::for_each_tensor(p, [&](auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            t.data()[i] = static_cast<S>(autoret::uniform(rng, -scale, scale));
        }
    });
    return p;
}

inline double rel_error(double a, double b, double floor = 1e-7) {
    const double diff = std::abs(a - b);
    if (diff <= floor) {
        return 0.0;
    }
    return diff / std::max(std::abs(a), std::abs(b));
}

} // namespace testing

namespace testing {

// Worst relative error between `analytic` and central differences of `loss`
// over every parameter entry. `params` is perturbed in place and restored.
template <typename Loss>
double max_fd_error(autoret::EncoderParams<double>& params, const autoret::GradientBuffer<double>& analytic,
                    Loss&& loss, double h = 1e-4, double floor = 1e-7) {
    double worst = 0.0;
    autoret::GradientBuffer<double> grads = analytic;
    autoret::zip_tensors(params, grads, [&](auto& p, const auto& g) {
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + h;
            const double up = loss();
            p.data()[i] = saved - h;
            const double down = loss();
            p.data()[i] = saved;
            worst = std::max(worst, rel_error((up - down) / (2 * h), g.data()[i], floor));
        }
    });
    return worst;
}

} // namespace testing
