#include "autoret/encoder.hpp"

#include <istream>
#include <ostream>

#include "autoret/io.hpp"

namespace autoret {

void write_params(std::ostream& out, const EncoderParams<float>& params) {
    const auto dims = params.dims();
    io::write<std::uint32_t>(out, kParamsFormatVersion);
    io::write<std::uint64_t>(out, dims.vocab);
    io::write<std::uint64_t>(out, dims.d_emb);
    io::write<std::uint64_t>(out, dims.d_hidden);
    io::write<std::uint64_t>(out, dims.d_out);
    for_each_tensor(params, [&](const auto& t) { io::write_floats(out, t); });
}

EncoderParams<float> read_params(std::istream& in) {
    auto version = io::read<std::uint32_t>(in);
    if (version != kParamsFormatVersion) {
        throw FormatError("encoder parameter format version " + std::to_string(version) + ", expected " +
                          std::to_string(kParamsFormatVersion));
    }
    EncoderDims dims;
    dims.vocab = io::read<std::uint64_t>(in);
    dims.d_emb = io::read<std::uint64_t>(in);
    dims.d_hidden = io::read<std::uint64_t>(in);
    dims.d_out = io::read<std::uint64_t>(in);
    constexpr std::uint64_t kMaxDim = 1ULL << 24;
    if (dims.vocab > kMaxDim || dims.d_emb > kMaxDim || dims.d_hidden > kMaxDim || dims.d_out > kMaxDim) {
        throw FormatError("encoder dimensions out of range");
    }
    auto params = EncoderParams<float>::zeros(dims);
    for_each_tensor(params, [&](auto& t) { io::read_floats(in, t); });
    return params;
}

} // namespace autoret
