#pragma once

// Manifest + blob container shared by datasets and checkpoints.
//
//   <stem>.manifest  UTF-8 key=value lines (version, dims, counts, seed,
//                    dtype.<array>, blob file name, crc32 checksum)
//   <stem>.blob      "MTNF", u32 format version, then one record per array:
//                    u16 name length, name bytes, u8 rank, rank × u32 dims,
//                    payload (f64 or i32, little-endian, row-major)

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mutan {

inline constexpr char blob_magic[4] = {'M', 'T', 'N', 'F'};
inline constexpr std::uint32_t blob_version = 1;

enum class FormatErrc {
    io_failure = 1,
    bad_magic,
    version_mismatch,
    checksum_mismatch,
    truncated,
    malformed,
};

inline const char* describe(FormatErrc code) {
    switch (code) {
        case FormatErrc::io_failure: return "I/O failure";
        case FormatErrc::bad_magic: return "bad magic";
        case FormatErrc::version_mismatch: return "version mismatch";
        case FormatErrc::checksum_mismatch: return "checksum mismatch";
        case FormatErrc::truncated: return "truncated payload";
        case FormatErrc::malformed: return "malformed document";
    }
    return "unknown";
}

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrc code, const std::string& detail)
        : std::runtime_error(std::string(describe(code)) + ": " + detail), code_(code) {}
    FormatErrc code() const noexcept { return code_; }

private:
    FormatErrc code_;
};

enum class DType { f64, i32 };

inline const char* to_string(DType t) { return t == DType::f64 ? "f64" : "i32"; }

struct BlobArray {
    std::string name;
    DType dtype = DType::f64;
    std::vector<std::uint32_t> dims;
    std::vector<double> f64;
    std::vector<std::int32_t> i32;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    static BlobArray doubles(std::string name, std::vector<std::uint32_t> dims, std::vector<double> data) {
        BlobArray a{std::move(name), DType::f64, std::move(dims), std::move(data), {}};
        if (a.f64.size() != a.element_count()) throw std::invalid_argument("BlobArray " + a.name + ": size mismatch");
        return a;
    }
    static BlobArray ints(std::string name, std::vector<std::uint32_t> dims, std::vector<std::int32_t> data) {
        BlobArray a{std::move(name), DType::i32, std::move(dims), {}, std::move(data)};
        if (a.i32.size() != a.element_count()) throw std::invalid_argument("BlobArray " + a.name + ": size mismatch");
        return a;
    }

    bool operator==(const BlobArray&) const = default;
};

/// Ordered key=value manifest.
class Manifest {
public:
    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : entries_)
            if (k == key) {
                v = value;
                return;
            }
        entries_.emplace_back(key, value);
    }
    template <typename T>
    void set_number(const std::string& key, T value) {
        set(key, std::to_string(value));
    }
    /// Appends every line of a key=value text block.
    void merge_text(const std::string& text) {
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw FormatError(FormatErrc::malformed, "manifest line without '=': " + line);
            set(line.substr(0, eq), line.substr(eq + 1));
        }
    }

    bool contains(const std::string& key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return true;
        return false;
    }
    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return v;
        throw FormatError(FormatErrc::malformed, "manifest is missing key " + key);
    }
    std::uint64_t get_uint(const std::string& key) const {
        const auto& text = get(key);
        std::size_t used = 0;
        std::uint64_t value = 0;
        try {
            value = std::stoull(text, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != text.size())
            throw FormatError(FormatErrc::malformed, "manifest key " + key + " is not an unsigned integer");
        return value;
    }
    double get_double(const std::string& key) const {
        const auto& text = get(key);
        std::size_t used = 0;
        double value = 0;
        try {
            value = std::stod(text, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != text.size())
            throw FormatError(FormatErrc::malformed, "manifest key " + key + " is not a number");
        return value;
    }

    std::map<std::string, std::string> as_map() const { return {entries_.begin(), entries_.end()}; }
    const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }

    std::string text() const {
        std::string out;
        for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
        return out;
    }

    bool operator==(const Manifest&) const = default;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

struct Document {
    Manifest manifest;
    std::vector<BlobArray> arrays;

    const BlobArray& array(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw FormatError(FormatErrc::malformed, "document has no array named " + name);
    }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t x) {
    out.push_back(static_cast<char>(x & 0xff));
    out.push_back(static_cast<char>(x >> 8));
}
inline void put_u32(std::string& out, std::uint32_t x) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((x >> s) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t x) {
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<char>((x >> s) & 0xff));
}

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}
    bool done() const noexcept { return pos_ == bytes_.size(); }

    std::uint64_t take(int width) {
        if (bytes_.size() - pos_ < static_cast<std::size_t>(width))
            throw FormatError(FormatErrc::truncated, "blob ends at byte " + std::to_string(bytes_.size()));
        std::uint64_t x = 0;
        for (int i = 0; i < width; ++i)
            x |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += width;
        return x;
    }
    std::string take_bytes(std::size_t n) {
        if (bytes_.size() - pos_ < n)
            throw FormatError(FormatErrc::truncated, "blob ends at byte " + std::to_string(bytes_.size()));
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrc::io_failure, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::io_failure, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrc::io_failure, "short write to " + path.string());
}

inline std::string crc_hex(const std::string& bytes) {
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

}  // namespace detail

/// Strips a trailing ".manifest" or ".blob" so either file name (or the bare
/// stem) addresses the same document.
inline std::filesystem::path document_stem(const std::filesystem::path& path) {
    const auto ext = path.extension();
    if (ext == ".manifest" || ext == ".blob") return std::filesystem::path(path).replace_extension();
    return path;
}

inline std::filesystem::path manifest_path(const std::filesystem::path& path) {
    auto stem = document_stem(path);
    return stem += ".manifest";
}
inline std::filesystem::path blob_path(const std::filesystem::path& path) {
    auto stem = document_stem(path);
    return stem += ".blob";
}

inline std::string encode_blob(const std::vector<BlobArray>& arrays) {
    std::string out(blob_magic, 4);
    detail::put_u32(out, blob_version);
    for (const auto& a : arrays) {
        if (a.name.size() > 0xffff || a.dims.size() > 0xff)
            throw std::invalid_argument("encode_blob: array " + a.name + " has an oversized name or rank");
        detail::put_u16(out, static_cast<std::uint16_t>(a.name.size()));
        out += a.name;
        out.push_back(static_cast<char>(a.dims.size()));
        for (auto d : a.dims) detail::put_u32(out, d);
        if (a.dtype == DType::f64)
            for (double x : a.f64) detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
        else
            for (std::int32_t x : a.i32) detail::put_u32(out, static_cast<std::uint32_t>(x));
    }
    return out;
}

/// Decodes a blob; each record's dtype comes from `dtypes` (array name -> dtype).
inline std::vector<BlobArray> decode_blob(const std::string& bytes, const std::map<std::string, DType>& dtypes) {
    detail::ByteReader in(bytes);
    if (in.take_bytes(4) != std::string(blob_magic, 4)) throw FormatError(FormatErrc::bad_magic, "not an MTNF blob");
    const auto version = static_cast<std::uint32_t>(in.take(4));
    if (version != blob_version)
        throw FormatError(FormatErrc::version_mismatch,
                          "blob version " + std::to_string(version) + ", expected " + std::to_string(blob_version));
    std::vector<BlobArray> arrays;
    while (!in.done()) {
        BlobArray a;
        const auto name_len = static_cast<std::size_t>(in.take(2));
        a.name = in.take_bytes(name_len);
        const auto rank = static_cast<std::size_t>(in.take(1));
        for (std::size_t r = 0; r < rank; ++r) a.dims.push_back(static_cast<std::uint32_t>(in.take(4)));
        const auto it = dtypes.find(a.name);
        if (it == dtypes.end()) throw FormatError(FormatErrc::malformed, "no dtype declared for array " + a.name);
        a.dtype = it->second;
        const std::size_t n = a.element_count();
        if (a.dtype == DType::f64) {
            a.f64.resize(n);
            for (auto& x : a.f64) x = std::bit_cast<double>(in.take(8));
        } else {
            a.i32.resize(n);
            for (auto& x : a.i32) x = static_cast<std::int32_t>(static_cast<std::uint32_t>(in.take(4)));
        }
        arrays.push_back(std::move(a));
    }
    return arrays;
}

/// Writes <stem>.manifest and <stem>.blob. The manifest gains version, blob,
/// checksum and dtype.<name> keys.
inline void write_document(const std::filesystem::path& path, const Document& doc) {
    const std::string blob = encode_blob(doc.arrays);
    Manifest m;
    m.set("version", std::to_string(blob_version));
    for (const auto& [k, v] : doc.manifest.entries())
        if (k != "version" && k != "blob" && k != "checksum" && k.rfind("dtype.", 0) != 0) m.set(k, v);
    for (const auto& a : doc.arrays) m.set("dtype." + a.name, to_string(a.dtype));
    m.set("blob", blob_path(path).filename().string());
    m.set("checksum", "crc32:" + detail::crc_hex(blob));
    detail::write_file(blob_path(path), blob);
    detail::write_file(manifest_path(path), m.text());
}

inline Document read_document(const std::filesystem::path& path) {
    const auto mpath = manifest_path(path);
    Document doc;
    doc.manifest.merge_text(detail::read_file(mpath));
    const auto version = doc.manifest.get_uint("version");
    if (version != blob_version)
        throw FormatError(FormatErrc::version_mismatch, "manifest version " + std::to_string(version));
    const auto bpath = mpath.parent_path() / doc.manifest.get("blob");
    const std::string blob = detail::read_file(bpath);
    const std::string expected = doc.manifest.get("checksum");
    const std::string actual = "crc32:" + detail::crc_hex(blob);
    if (expected != actual)
        throw FormatError(FormatErrc::checksum_mismatch, bpath.string() + " has " + actual + ", manifest says " + expected);
    std::map<std::string, DType> dtypes;
    for (const auto& [k, v] : doc.manifest.entries()) {
        if (k.rfind("dtype.", 0) != 0) continue;
        if (v == "f64")
            dtypes[k.substr(6)] = DType::f64;
        else if (v == "i32")
            dtypes[k.substr(6)] = DType::i32;
        else
            throw FormatError(FormatErrc::malformed, "unknown dtype " + v);
    }
    doc.arrays = decode_blob(blob, dtypes);
    return doc;
}

}  // namespace mutan
