#pragma once

// Versioned, self-describing binary container used for checkpoints, feature
// statistics and array datasets.
//
// Layout: "RDDC" | u32 version | u64 header bytes | JSON header | blobs.
// The header lists every tensor's name, dtype, shape, offset and byte length;
// blobs are little-endian and follow the header back to back.

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rdd {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType { f32, f64, i32, u64 };

struct Blob {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::vector<std::byte> bytes;
};

class Container {
  public:
    Container() = default;
    explicit Container(std::string kind) : kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }
    nlohmann::json& meta() { return meta_; }
    const nlohmann::json& meta() const { return meta_; }

    void put(const std::string& name, std::span<const float> v, std::vector<std::int64_t> shape);
    void put(const std::string& name, std::span<const double> v, std::vector<std::int64_t> shape);
    void put(const std::string& name, std::span<const std::int32_t> v, std::vector<std::int64_t> shape);
    void put(const std::string& name, std::span<const std::uint64_t> v, std::vector<std::int64_t> shape);

    bool has(const std::string& name) const;
    const Blob& blob(const std::string& name) const;
    std::vector<float> get_f32(const std::string& name) const;
    std::vector<double> get_f64(const std::string& name) const;
    std::vector<std::int32_t> get_i32(const std::string& name) const;
    std::vector<std::uint64_t> get_u64(const std::string& name) const;
    const std::vector<Blob>& blobs() const { return blobs_; }

    void save(const std::filesystem::path& path) const;
    /// Throws FormatError on a bad magic, unsupported version or truncated file.
    static Container load(const std::filesystem::path& path);
    /// Like load, but also checks the container kind.
    static Container load(const std::filesystem::path& path, const std::string& expected_kind);

  private:
    void put_raw(const std::string& name, DType t, const void* data, std::size_t bytes,
                 std::vector<std::int64_t> shape);
    template <class T>
    std::vector<T> get(const std::string& name, DType t) const;

    std::string kind_;
    nlohmann::json meta_ = nlohmann::json::object();
    std::vector<Blob> blobs_;
};

} // namespace rdd
