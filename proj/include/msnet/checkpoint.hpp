#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msnet/error.hpp"
#include "msnet/model.hpp"

namespace msnet {
namespace io {

// Explicit little-endian packing keeps the on-disk formats bit-exact across
// platforms instead of relying on host byte order.
inline void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    put_u32(buf, static_cast<std::uint32_t>(v & 0xffffffffu));
    put_u32(buf, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<std::uint64_t>(v)); }

inline void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
    Reader(const std::string& bytes, std::string name)
        : bytes_(bytes), name_(std::move(name)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + static_cast<std::size_t>(i)]);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }

    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }

    void magic(const char (&expected)[5]) {
        need(4);
        if (bytes_.compare(pos_, 4, expected, 4) != 0) {
            throw Error(ErrorKind::BadMagic, name_ + ": bad magic bytes");
        }
        pos_ += 4;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw Error(ErrorKind::Truncated, name_ + ": file truncated");
        }
    }

    const std::string& bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string() + " for reading");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error(ErrorKind::Io, "read failure on " + path.string());
    }
    return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorKind::Io, "write failure on " + path.string());
    }
}

}  // namespace io

// Checkpoint layout, all integers little-endian:
//   "MSNT" | version u32 | input_channels, initial_conv_kernel, block_count,
//   block_channels, block_kernel, dense_hidden, classes (u32 each) |
//   dilation count u32 + dilation values u32 | param count u64 | params f64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const MsNetModel& model) {
    model.arch.validate();
    const ParamLayout lay = ParamLayout::of(model.arch);
    if (model.params.size() != lay.total) {
        throw Error(ErrorKind::ParamMismatch, "model params length does not match its arch");
    }
    std::string buf;
    buf.reserve(64 + model.params.size() * 8);
    buf.append("MSNT", 4);
    io::put_u32(buf, kCheckpointVersion);
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.input_channels));
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.initial_conv_kernel));
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.block_count));
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.block_channels));
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.block_kernel));
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.dense_hidden));
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.classes));
    io::put_u32(buf, static_cast<std::uint32_t>(model.arch.dilations.size()));
    for (int d : model.arch.dilations) {
        io::put_u32(buf, static_cast<std::uint32_t>(d));
    }
    io::put_u64(buf, model.params.size());
    for (double p : model.params) {
        io::put_f64(buf, p);
    }
    return buf;
}

inline MsNetModel decode_checkpoint(const std::string& bytes, const std::string& name) {
    io::Reader r(bytes, name);
    r.magic("MSNT");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::BadVersion,
                    name + ": unsupported checkpoint version " + std::to_string(version));
    }
    MsNetModel m;
    m.arch.input_channels = static_cast<int>(r.u32());
    m.arch.initial_conv_kernel = static_cast<int>(r.u32());
    m.arch.block_count = static_cast<int>(r.u32());
    m.arch.block_channels = static_cast<int>(r.u32());
    m.arch.block_kernel = static_cast<int>(r.u32());
    m.arch.dense_hidden = static_cast<int>(r.u32());
    m.arch.classes = static_cast<int>(r.u32());
    const std::uint32_t n_dil = r.u32();
    m.arch.dilations.clear();
    for (std::uint32_t i = 0; i < n_dil; ++i) {
        m.arch.dilations.push_back(static_cast<int>(r.u32()));
    }
    m.arch.validate();

    const std::uint64_t n_params = r.u64();
    const std::uint64_t expected = static_cast<std::uint64_t>(param_count(m.arch));
    if (n_params != expected) {
        throw Error(ErrorKind::ParamMismatch,
                    name + ": checkpoint declares " + std::to_string(n_params) +
                        " params, arch requires " + std::to_string(expected));
    }
    m.params.resize(n_params);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        m.params[i] = r.f64();
    }
    if (r.remaining() != 0) {
        throw Error(ErrorKind::Corrupt, name + ": trailing bytes after params");
    }
    return m;
}

inline void save_checkpoint(const MsNetModel& model, const std::filesystem::path& path) {
    io::write_file(path, encode_checkpoint(model));
}

inline MsNetModel load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path), path.filename().string());
}

}  // namespace msnet
