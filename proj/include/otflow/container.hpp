#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "otflow/errors.hpp"
#include "otflow/tensor.hpp"

namespace otflow {

// Single-file checkpoint container: magic "OTFC", u32 version, a JSON metadata
// blob, then a named-tensor table (shape dims as u64, payload as little-endian
// float64). Entry order is preserved so identical contents produce identical
// bytes.
class Container {
  public:
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();

    void add(std::string name, const Tensor& t) {
        entries_.emplace_back(std::move(name), t.detach());
    }

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : entries_)
            if (n == name) return &t;
        return nullptr;
    }

    const Tensor& get(const std::string& name) const {
        if (const Tensor* t = find(name)) return *t;
        throw contract_error("container: no tensor named '" + name + "'");
    }

    bool has(const std::string& name) const { return find(name) != nullptr; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::string, Tensor>>& entries() const {
        return entries_;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw numeric_error("container: cannot open '" + path.string() +
                                "' for writing");
        out.write(kMagic, 4);
        write_u32(out, kVersion);
        const std::string meta_str = meta.dump();
        write_u32(out, static_cast<std::uint32_t>(meta_str.size()));
        out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
        write_u64(out, entries_.size());
        for (const auto& [name, t] : entries_) {
            write_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(out, static_cast<std::uint32_t>(t.ndim()));
            for (std::size_t d : t.shape()) write_u64(out, d);
            for (double v : t.data()) write_f64(out, v);
        }
        if (!out)
            throw numeric_error("container: write to '" + path.string() + "' failed");
    }

    static Container load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw numeric_error("container: cannot open '" + path.string() + "'");
        char magic[4];
        in.read(magic, 4);
        if (!in || std::string(magic, 4) != kMagic)
            throw numeric_error("container: '" + path.string() +
                                "' has wrong magic bytes");
        const std::uint32_t version = read_u32(in);
        if (version != kVersion)
            throw numeric_error("container: unsupported version " +
                                std::to_string(version));
        Container c;
        const std::uint32_t meta_len = read_u32(in);
        std::string meta_str(meta_len, '\0');
        in.read(meta_str.data(), meta_len);
        c.meta = meta_len ? nlohmann::json::parse(meta_str)
                          : nlohmann::json::object();
        const std::uint64_t count = read_u64(in);
        for (std::uint64_t e = 0; e < count; ++e) {
            const std::uint32_t name_len = read_u32(in);
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            const std::uint32_t ndim = read_u32(in);
            Shape shape(ndim);
            for (auto& d : shape) d = read_u64(in);
            std::vector<double> data(shape_numel(shape));
            for (auto& v : data) v = read_f64(in);
            if (!in)
                throw numeric_error("container: '" + path.string() + "' truncated");
            c.entries_.emplace_back(std::move(name),
                                    Tensor::from(std::move(shape), std::move(data)));
        }
        return c;
    }

  private:
    static constexpr const char* kMagic = "OTFC";

    static void write_u32(std::ostream& out, std::uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
        out.write(b, 4);
    }
    static void write_u64(std::ostream& out, std::uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
        out.write(b, 8);
    }
    static void write_f64(std::ostream& out, double v) {
        write_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    static std::uint32_t read_u32(std::istream& in) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    static std::uint64_t read_u64(std::istream& in) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    static double read_f64(std::istream& in) {
        return std::bit_cast<double>(read_u64(in));
    }

    std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace otflow
