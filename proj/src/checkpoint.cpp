#include "autoret/checkpoint.hpp"

#include <fstream>

#include "autoret/io.hpp"

namespace autoret {

namespace {
constexpr char kCheckpointMagic[5] = "RCKP";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const auto dims = checkpoint.state.params.dims();
    if (checkpoint.state.adam.first.dims() != dims || checkpoint.state.adam.second.dims() != dims) {
        throw Error("optimizer moments do not match parameter shapes");
    }
    // Write beside the target and rename so a crash never leaves a torn file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        io::write_magic(out, kCheckpointMagic);
        io::write<std::uint32_t>(out, checkpoint.format_version);
        io::write_string(out, checkpoint.config_json);
        write_params(out, checkpoint.state.params);
        for_each_tensor(checkpoint.state.adam.first, [&](const auto& t) { io::write_floats(out, t); });
        for_each_tensor(checkpoint.state.adam.second, [&](const auto& t) { io::write_floats(out, t); });
        io::write<std::uint64_t>(out, checkpoint.state.adam.steps);
        io::write<std::uint64_t>(out, checkpoint.state.adam.skipped);
        io::write<std::uint64_t>(out, checkpoint.state.step);
        io::write<std::uint64_t>(out, checkpoint.index_version);
        io::write<std::uint64_t>(out, checkpoint.dev_history.size());
        for (const auto& p : checkpoint.dev_history) {
            io::write<std::uint64_t>(out, p.step);
            io::write<double>(out, p.metric);
        }
        if (!out) {
            throw Error("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    io::expect_magic(in, kCheckpointMagic, "checkpoint");
    Checkpoint ck;
    ck.format_version = io::read<std::uint32_t>(in);
    if (ck.format_version != kCheckpointFormatVersion) {
        throw FormatError(path.string() + ": checkpoint format version " + std::to_string(ck.format_version) +
                          " is not the supported version " + std::to_string(kCheckpointFormatVersion));
    }
    ck.config_json = io::read_string(in);
    ck.state.params = read_params(in);
    const auto dims = ck.state.params.dims();
    ck.state.adam = AdamState<float>::zeros(dims);
    for_each_tensor(ck.state.adam.first, [&](auto& t) { io::read_floats(in, t); });
    for_each_tensor(ck.state.adam.second, [&](auto& t) { io::read_floats(in, t); });
    ck.state.adam.steps = io::read<std::uint64_t>(in);
    ck.state.adam.skipped = io::read<std::uint64_t>(in);
    ck.state.step = io::read<std::uint64_t>(in);
    ck.index_version = io::read<std::uint64_t>(in);
    auto n = io::read<std::uint64_t>(in);
    if (n > (1ULL << 32)) {
        throw FormatError("dev history length out of range");
    }
    for (std::uint64_t i = 0; i < n; ++i) {
        DevPoint p;
        p.step = io::read<std::uint64_t>(in);
        p.metric = io::read<double>(in);
        ck.dev_history.push_back(p);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after checkpoint");
    }
    return ck;
}

} // namespace autoret
