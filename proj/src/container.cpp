#include "rdd/container.hpp"

#include "rdd/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "container blobs are stored little-endian");

namespace rdd {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'D', 'C'};

const char* dtype_name(DType t) {
    switch (t) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i32: return "i32";
    case DType::u64: return "u64";
    }
    return "?";
}

DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "f64") return DType::f64;
    if (s == "i32") return DType::i32;
    if (s == "u64") return DType::u64;
    throw FormatError("unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType t) { return (t == DType::f32 || t == DType::i32) ? 4 : 8; }

} // namespace

void Container::put_raw(const std::string& name, DType t, const void* data, std::size_t bytes,
                        std::vector<std::int64_t> shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    RDD_REQUIRE(std::size_t(n) * dtype_size(t) == bytes, "shape of '" + name + "' does not match its data");
    Blob b{name, t, std::move(shape), std::vector<std::byte>(bytes)};
    if (bytes) std::memcpy(b.bytes.data(), data, bytes);
    for (auto& existing : blobs_) {
        if (existing.name == name) {
            existing = std::move(b);
            return;
        }
    }
    blobs_.push_back(std::move(b));
}

void Container::put(const std::string& name, std::span<const float> v, std::vector<std::int64_t> shape) {
    put_raw(name, DType::f32, v.data(), v.size_bytes(), std::move(shape));
}
void Container::put(const std::string& name, std::span<const double> v, std::vector<std::int64_t> shape) {
    put_raw(name, DType::f64, v.data(), v.size_bytes(), std::move(shape));
}
void Container::put(const std::string& name, std::span<const std::int32_t> v, std::vector<std::int64_t> shape) {
    put_raw(name, DType::i32, v.data(), v.size_bytes(), std::move(shape));
}
void Container::put(const std::string& name, std::span<const std::uint64_t> v, std::vector<std::int64_t> shape) {
    put_raw(name, DType::u64, v.data(), v.size_bytes(), std::move(shape));
}

bool Container::has(const std::string& name) const {
    for (const auto& b : blobs_) {
        if (b.name == name) return true;
    }
    return false;
}

const Blob& Container::blob(const std::string& name) const {
    for (const auto& b : blobs_) {
        if (b.name == name) return b;
    }
    throw FormatError("container '" + kind_ + "' has no tensor '" + name + "'");
}

template <class T>
std::vector<T> Container::get(const std::string& name, DType t) const {
    const Blob& b = blob(name);
    if (b.dtype != t) {
        throw FormatError("tensor '" + name + "' has dtype " + dtype_name(b.dtype) + ", expected " + dtype_name(t));
    }
    std::vector<T> out(b.bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), b.bytes.data(), b.bytes.size());
    return out;
}

std::vector<float> Container::get_f32(const std::string& name) const { return get<float>(name, DType::f32); }
std::vector<double> Container::get_f64(const std::string& name) const { return get<double>(name, DType::f64); }
std::vector<std::int32_t> Container::get_i32(const std::string& name) const {
    return get<std::int32_t>(name, DType::i32);
}
std::vector<std::uint64_t> Container::get_u64(const std::string& name) const {
    return get<std::uint64_t>(name, DType::u64);
}

void Container::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["kind"] = kind_;
    header["meta"] = meta_;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& b : blobs_) {
        header["tensors"].push_back({{"name", b.name},
                                     {"dtype", dtype_name(b.dtype)},
                                     {"shape", b.shape},
                                     {"offset", offset},
                                     {"bytes", b.bytes.size()}});
        offset += b.bytes.size();
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        const std::uint32_t version = kContainerVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, 4);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), std::streamsize(text.size()));
        for (const auto& b : blobs_) out.write(reinterpret_cast<const char*>(b.bytes.data()), std::streamsize(b.bytes.size()));
        if (!out) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Container Container::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": not a container file");
    if (version != kContainerVersion) {
        throw FormatError(path.string() + ": unsupported container version " + std::to_string(version));
    }
    std::string text(len, '\0');
    in.read(text.data(), std::streamsize(len));
    if (!in) throw FormatError(path.string() + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed header: " + e.what());
    }
    Container c(header.at("kind").get<std::string>());
    c.meta_ = header.value("meta", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
        Blob b;
        b.name = t.at("name").get<std::string>();
        b.dtype = parse_dtype(t.at("dtype").get<std::string>());
        b.shape = t.at("shape").get<std::vector<std::int64_t>>();
        b.bytes.resize(t.at("bytes").get<std::size_t>());
        in.read(reinterpret_cast<char*>(b.bytes.data()), std::streamsize(b.bytes.size()));
        if (!in) throw FormatError(path.string() + ": truncated tensor '" + b.name + "'");
        c.blobs_.push_back(std::move(b));
    }
    return c;
}

Container Container::load(const std::filesystem::path& path, const std::string& expected_kind) {
    Container c = load(path);
    if (c.kind() != expected_kind) {
        throw FormatError(path.string() + ": expected a " + expected_kind + " container, found " + c.kind());
    }
    return c;
}

} // namespace rdd
