#pragma once

#include "ccnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ccnet {

// Named tensors in insertion order. This is the unit that is checkpointed and
// exchanged between federated clients and the server.
class ParamSet {
public:
    void add(std::string name, Tensor value);
    bool contains(std::string_view name) const;

    Tensor& operator[](std::string_view name);
    const Tensor& operator[](std::string_view name) const;

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    Tensor& tensor(std::size_t i) { return tensors_[i]; }
    const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

    Index parameter_count() const;

    // Same names and shapes, zero values.
    ParamSet zeros_like() const;
    bool same_layout(const ParamSet& other) const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Flat "CCN1" binary format: magic, then per tensor
//   u32 name length, name bytes, u32 rank, u64 extents[rank], f64 values[numel]
// all little-endian, read until end of stream.
std::vector<std::uint8_t> serialize(const ParamSet& params);
ParamSet deserialize(const std::vector<std::uint8_t>& bytes);

void save_params(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_params(const std::filesystem::path& path);

// FNV-1a over the serialized bytes.
std::uint64_t checksum(const ParamSet& params);
std::uint64_t fnv1a(const std::uint8_t* bytes, std::size_t size, std::uint64_t seed = 14695981039346656037ULL);
std::string hex(std::uint64_t value);

// Little-endian byte helpers shared by the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t value);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t value);
void put_f64(std::vector<std::uint8_t>& out, double value);
std::uint32_t get_u32(const std::uint8_t* in);
std::uint64_t get_u64(const std::uint8_t* in);
double get_f64(const std::uint8_t* in);

}  // namespace ccnet
