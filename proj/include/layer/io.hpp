#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "layer/errors.hpp"
#include "layer/volume.hpp"

namespace layer {

// On-disk grids. Both formats share a 21-byte header:
//   magic (4 bytes) | u32 version=1 | u32 nx | u32 ny | u32 nz | u8 tag
// followed by the payload. Volumes ("LVOL") store little-endian float32,
// tag = modality code. Masks ("LMSK") store u8 labels, tag = 0.

namespace detail {

inline constexpr std::uint32_t kFormatVersion = 1;

class ByteReader {
public:
    explicit ByteReader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("cannot open " + path_);
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void expect_magic(const char magic[4]) {
        if (buf_.size() < pos_ + 4 || std::memcmp(buf_.data() + pos_, magic, 4) != 0)
            throw format_error(path_ + ": bad magic", pos_);
        pos_ += 4;
    }

    std::uint32_t read_u32() {
        if (buf_.size() < pos_ + 4) throw format_error(path_ + ": truncated u32", pos_);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint8_t read_u8() {
        if (buf_.size() < pos_ + 1) throw format_error(path_ + ": truncated u8", pos_);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    std::vector<float> read_f32(std::size_t n) {
        if (buf_.size() < pos_ + 4 * n)
            throw format_error(path_ + ": truncated voxel payload", pos_);
        std::vector<float> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(
                            static_cast<unsigned char>(buf_[pos_ + 4 * i + b]))
                        << (8 * b);
            std::memcpy(&out[i], &bits, 4);
        }
        pos_ += 4 * n;
        return out;
    }

    std::vector<std::uint8_t> read_u8s(std::size_t n) {
        if (buf_.size() < pos_ + n)
            throw format_error(path_ + ": truncated label payload", pos_);
        std::vector<std::uint8_t> out(n);
        std::memcpy(out.data(), buf_.data() + pos_, n);
        pos_ += n;
        return out;
    }

    void expect_end() {
        if (pos_ != buf_.size())
            throw format_error(path_ + ": trailing bytes", pos_);
    }

    std::size_t pos() const { return pos_; }

private:
    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

class ByteWriter {
public:
    explicit ByteWriter(const std::filesystem::path& path)
        : path_(path.string()), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw io_error("cannot write " + path_);
    }

    void magic(const char m[4]) { out_.write(m, 4); }

    void u32(std::uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b, 4);
    }

    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

    void f32(const std::vector<float>& vals) {
        for (float f : vals) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            u32(bits);
        }
    }

    void u8s(const std::vector<std::uint8_t>& vals) {
        out_.write(reinterpret_cast<const char*>(vals.data()),
                   static_cast<std::streamsize>(vals.size()));
    }

    void close() {
        out_.flush();
        if (!out_) throw io_error("write failed for " + path_);
        out_.close();
    }

private:
    std::string path_;
    std::ofstream out_;
};

inline Dims read_header(ByteReader& r, const char magic[4], const std::string& what) {
    r.expect_magic(magic);
    const std::size_t version_at = r.pos();
    const std::uint32_t version = r.read_u32();
    if (version != kFormatVersion)
        throw format_error(what + ": unsupported version " + std::to_string(version),
                           version_at);
    const std::size_t dims_at = r.pos();
    Dims d;
    d.nx = static_cast<int>(r.read_u32());
    d.ny = static_cast<int>(r.read_u32());
    d.nz = static_cast<int>(r.read_u32());
    if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0)
        throw format_error(what + ": non-positive dims", dims_at);
    return d;
}

} // namespace detail

inline void write_volume(const std::filesystem::path& path, const VolumeGrid& v) {
    detail::ByteWriter w(path);
    w.magic("LVOL");
    w.u32(detail::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(v.dims().nx));
    w.u32(static_cast<std::uint32_t>(v.dims().ny));
    w.u32(static_cast<std::uint32_t>(v.dims().nz));
    w.u8(static_cast<std::uint8_t>(v.modality()));
    w.f32(v.voxels());
    w.close();
}

inline VolumeGrid read_volume(const std::filesystem::path& path) {
    detail::ByteReader r(path);
    const Dims d = detail::read_header(r, "LVOL", "volume");
    const std::size_t modality_at = r.pos();
    const std::uint8_t mcode = r.read_u8();
    if (mcode > 1) throw format_error("volume: unknown modality code", modality_at);
    auto voxels = r.read_f32(d.count());
    r.expect_end();
    return VolumeGrid(d, static_cast<Modality>(mcode), std::move(voxels));
}

inline void write_mask(const std::filesystem::path& path, const LayerMaskSet& m) {
    detail::ByteWriter w(path);
    w.magic("LMSK");
    w.u32(detail::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(m.dims().nx));
    w.u32(static_cast<std::uint32_t>(m.dims().ny));
    w.u32(static_cast<std::uint32_t>(m.dims().nz));
    w.u8(0); // reserved, mirrors the volume header layout
    w.u8s(m.labels());
    w.close();
}

inline LayerMaskSet read_mask(const std::filesystem::path& path) {
    detail::ByteReader r(path);
    const Dims d = detail::read_header(r, "LMSK", "mask");
    const std::size_t tag_at = r.pos();
    const std::uint8_t tag = r.read_u8();
    if (tag != 0) throw format_error("mask: reserved tag must be zero", tag_at);
    auto labels = r.read_u8s(d.count());
    r.expect_end();
    return LayerMaskSet(d, std::move(labels));
}

} // namespace layer
