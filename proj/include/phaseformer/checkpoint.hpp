#pragma once

// Binary checkpoint ("PHFM", little-endian):
//
//   magic "PHFM" | u32 version | u32 len, config text (key = value lines)
//   u32 count, parameter records        (sorted by name)
//   u32 count, Adam first-moment records
//   u32 count, Adam second-moment records
//   4 x f32 loss-weight logits | u64 epoch | u64 step | u32 len, RNG state text
//
// record: u32 name length, name bytes, u32 rank, u32 dims[rank], f32 values.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "phaseformer/error.hpp"
#include "phaseformer/tensor.hpp"

namespace phaseformer {

inline constexpr std::uint32_t checkpoint_version = 1;

struct TensorRecord {
    Shape shape;
    std::vector<float> values;

    bool operator==(const TensorRecord&) const = default;
};

struct Checkpoint {
    std::string config_text;
    std::map<std::string, TensorRecord> params;
    std::map<std::string, TensorRecord> adam_m;
    std::map<std::string, TensorRecord> adam_v;
    std::array<float, 4> logits{};
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    std::string rng_state;

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, r] : params) n += r.values.size();
        return n;
    }
};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
    void bytes(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }
    void record(const std::string& name, const TensorRecord& r) {
        bytes(name);
        u32(static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) u32(static_cast<std::uint32_t>(d));
        for (float v : r.values) f32(v);
    }
    std::vector<std::uint8_t>& out() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& b, std::string path) : b_(b), path_(std::move(path)) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw IngestionError("checkpoint '" + path_ + "': " + what + " at byte offset " + std::to_string(pos_));
    }
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) fail("truncated (need " + std::to_string(n) + " more bytes)");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::pair<std::string, TensorRecord> record() {
        auto name = bytes();
        TensorRecord r;
        const std::uint32_t rank = u32();
        if (rank > 8) fail("implausible rank " + std::to_string(rank) + " for '" + name + "'");
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            r.shape.push_back(u32());
            count *= r.shape.back();
        }
        need(count * 4);
        r.values.resize(count);
        for (auto& v : r.values) v = f32();
        return {std::move(name), std::move(r)};
    }
    std::map<std::string, TensorRecord> section(const char* what) {
        const std::uint32_t n = u32();
        std::map<std::string, TensorRecord> out;
        std::string prev;
        for (std::uint32_t i = 0; i < n; ++i) {
            auto [name, r] = record();
            if (i > 0 && name <= prev) fail(std::string(what) + " records not in sorted-name order");
            prev = name;
            out.emplace(std::move(name), std::move(r));
        }
        return out;
    }
    bool done() const { return pos_ == b_.size(); }
    std::size_t pos_ = 0;

private:
    const std::vector<std::uint8_t>& b_;
    std::string path_;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Checkpoint& c) {
    detail::ByteWriter w;
    for (char ch : std::string("PHFM")) w.out().push_back(static_cast<std::uint8_t>(ch));
    w.u32(checkpoint_version);
    w.bytes(c.config_text);
    for (const auto* sec : {&c.params, &c.adam_m, &c.adam_v}) {
        w.u32(static_cast<std::uint32_t>(sec->size()));
        for (const auto& [name, r] : *sec) w.record(name, r);
    }
    for (float l : c.logits) w.f32(l);
    w.u64(c.epoch);
    w.u64(c.step);
    w.bytes(c.rng_state);
    return std::move(w.out());
}

inline Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
    detail::ByteReader r(bytes, path);
    r.need(4);
    if (std::memcmp(bytes.data(), "PHFM", 4) != 0) r.fail("bad magic");
    r.pos_ = 4;
    const std::uint32_t version = r.u32();
    if (version != checkpoint_version) r.fail("unsupported format version " + std::to_string(version));
    Checkpoint c;
    c.config_text = r.bytes();
    c.params = r.section("parameter");
    c.adam_m = r.section("first-moment");
    c.adam_v = r.section("second-moment");
    for (auto& l : c.logits) l = r.f32();
    c.epoch = r.u64();
    c.step = r.u64();
    c.rng_state = r.bytes();
    if (!r.done()) r.fail("trailing bytes");
    return c;
}

/// Writes to a sibling temporary file and renames it into place.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    const auto bytes = serialize(c);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestionError("cannot write checkpoint '" + tmp + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IngestionError("write failed for checkpoint '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IngestionError("cannot move checkpoint into '" + path + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize(bytes, path);
}

template <typename T>
TensorRecord to_record(const Tensor<T>& t) {
    return {t.shape(), std::vector<float>(t.values().begin(), t.values().end())};
}

}  // namespace phaseformer
