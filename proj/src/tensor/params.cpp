#include "ccnet/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace ccnet {

void ParamSet::add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
}

bool ParamSet::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

Tensor& ParamSet::operator[](std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return tensors_[it->second];
}

const Tensor& ParamSet::operator[](std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return tensors_[it->second];
}

Index ParamSet::parameter_count() const {
    Index total = 0;
    for (const auto& t : tensors_) total += t.numel();
    return total;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor(tensors_[i].shape(), 0.0));
    return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
        if (names_[i] != other.names_[i] || tensors_[i].shape() != other.tensors_[i].shape()) return false;
    }
    return true;
}

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t value) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t value) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double value) { put_u64(out, std::bit_cast<std::uint64_t>(value)); }

std::uint32_t get_u32(const std::uint8_t* in) {
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) value |= static_cast<std::uint32_t>(in[i]) << (8 * i);
    return value;
}

std::uint64_t get_u64(const std::uint8_t* in) {
    std::uint64_t value = 0;
    for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    return value;
}

double get_f64(const std::uint8_t* in) { return std::bit_cast<double>(get_u64(in)); }

namespace {

constexpr char kMagic[4] = {'C', 'C', 'N', '1'};

}  // namespace

std::vector<std::uint8_t> serialize(const ParamSet& params) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names()[i];
        const Tensor& t = params.tensor(i);
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (Index extent : t.shape()) put_u64(out, static_cast<std::uint64_t>(extent));
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.raw());
        out.insert(out.end(), bytes, bytes + t.numel() * static_cast<Index>(sizeof(double)));
    }
    return out;
}

ParamSet deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw std::runtime_error("not a CCN1 parameter stream");
    }
    ParamSet params;
    std::size_t pos = 4;
    auto need = [&](std::size_t n) {
        if (pos + n > bytes.size()) throw std::runtime_error("truncated CCN1 stream at byte " + std::to_string(pos));
    };
    while (pos < bytes.size()) {
        need(4);
        const std::uint32_t name_len = get_u32(&bytes[pos]);
        pos += 4;
        need(name_len);
        std::string name(reinterpret_cast<const char*>(&bytes[pos]), name_len);
        pos += name_len;
        need(4);
        const std::uint32_t rank = get_u32(&bytes[pos]);
        pos += 4;
        Shape shape(rank);
        for (auto& extent : shape) {
            need(8);
            extent = static_cast<Index>(get_u64(&bytes[pos]));
            pos += 8;
        }
        const Index count = numel(shape);
        need(static_cast<std::size_t>(count) * sizeof(double));
        Eigen::VectorXd data(count);
        std::memcpy(data.data(), &bytes[pos], static_cast<std::size_t>(count) * sizeof(double));
        pos += static_cast<std::size_t>(count) * sizeof(double);
        params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return params;
}

void save_params(const std::filesystem::path& path, const ParamSet& params) {
    const auto bytes = serialize(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParamSet load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::uint64_t fnv1a(const std::uint8_t* bytes, std::size_t size, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t checksum(const ParamSet& params) {
    const auto bytes = serialize(params);
    return fnv1a(bytes.data(), bytes.size());
}

std::string hex(std::uint64_t value) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << value;
    return out.str();
}

}  // namespace ccnet
