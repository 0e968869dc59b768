#pragma once

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "moregan/core/params.hpp"

namespace moregan::ckpt {

inline constexpr char kMagic[8] = {'M', 'O', 'R', 'E', 'C', 'K', 'P', 'T'};
inline constexpr int kFormatVersion = 1;

/// Decoded checkpoint: header metadata plus every stored array.
struct Checkpoint {
    int format_version = kFormatVersion;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor<float>> tensors;

    bool has_namespace(const std::string& ns) const {
        for (const auto& [k, v] : tensors) {
            if (has_prefix(k, ns + ".")) return true;
        }
        return false;
    }
};

namespace detail {
inline std::vector<std::string> selected(const std::vector<std::string>& names, const std::vector<std::string>& prefixes) {
    std::vector<std::string> out;
    for (const auto& n : names) {
        bool keep = prefixes.empty();
        for (const auto& p : prefixes) keep = keep || has_prefix(n, p);
        if (keep) out.push_back(n);
    }
    return out;
}
}  // namespace detail

/// Layout: 8-byte magic, u32 format version, u64 header length, JSON header,
/// then float32 payloads in header order. Written to `path.tmp` and renamed so a
/// crash never leaves a truncated checkpoint behind.
template <typename T>
void save(const std::filesystem::path& path, const ParamStore<T>& store, const nlohmann::json& config,
          const std::vector<std::string>& prefixes = {}, const nlohmann::json& meta = nlohmann::json::object()) {
    std::vector<std::pair<std::string, const Tensor<T>*>> items;
    std::vector<std::string> pnames;
    for (const auto& [k, v] : store.params()) pnames.push_back(k);
    for (const auto& k : detail::selected(pnames, prefixes)) items.emplace_back(k, &store.params().at(k).value());
    std::vector<std::string> bnames;
    for (const auto& [k, v] : store.buffers()) bnames.push_back(k);
    for (const auto& k : detail::selected(bnames, prefixes)) items.emplace_back(k, &store.buffers().at(k));

    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["config"] = config;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : items) {
        const Shape s = t->shape();
        header["tensors"].push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
        offset += t->size();
    }
    const std::string text = header.dump();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint", tmp.string());
        f.write(kMagic, sizeof(kMagic));
        const std::uint32_t version = kFormatVersion;
        const std::uint64_t len = text.size();
        f.write(reinterpret_cast<const char*>(&version), sizeof(version));
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        std::vector<float> buf;
        for (const auto& [name, t] : items) {
            buf.resize(t->size());
            for (std::size_t i = 0; i < t->size(); ++i) buf[i] = static_cast<float>((*t)[i]);
            f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        if (!f) throw IoError("short write to checkpoint", tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot finalize checkpoint (" + ec.message() + ")", path.string());
}

inline Checkpoint load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint", path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    f.read(magic, sizeof(magic));
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint file", path.string());
    if (version != kFormatVersion) {
        throw ConfigError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kFormatVersion) + ")");
    }
    std::string text(len, '\0');
    f.read(text.data(), static_cast<std::streamsize>(len));
    if (!f) throw IoError("truncated checkpoint header", path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        throw IoError("corrupt checkpoint header", path.string());
    }
    Checkpoint ck;
    ck.format_version = header.at("format_version").get<int>();
    ck.config = header.value("config", nlohmann::json::object());
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        const auto dims = entry.at("shape").get<std::vector<int>>();
        Tensor<float> t(Shape{dims.at(0), dims.at(1), dims.at(2), dims.at(3)});
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!f) throw IoError("truncated checkpoint payload", path.string());
        ck.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

/// Copies stored arrays into every parameter and buffer of `store` under `prefixes`.
/// A missing or mis-shaped entry is a configuration error.
template <typename T>
void restore(ParamStore<T>& store, const Checkpoint& ck, const std::vector<std::string>& prefixes = {}) {
    auto copy = [&](const std::string& name, Tensor<T>& dst) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw ConfigError("checkpoint lacks " + name);
        if (!(it->second.shape() == dst.shape())) {
            throw ConfigError("checkpoint entry " + name + " has shape " + it->second.shape().str() + ", model expects " +
                              dst.shape().str());
        }
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second[i]);
    };
    std::vector<std::string> pnames;
    for (const auto& [k, v] : store.params()) pnames.push_back(k);
    for (const auto& k : detail::selected(pnames, prefixes)) {
        Var<T> p = store.get(k);
        copy(k, p.mutable_value());
    }
    std::vector<std::string> bnames;
    for (const auto& [k, v] : store.buffers()) bnames.push_back(k);
    for (const auto& k : detail::selected(bnames, prefixes)) copy(k, store.buffer(k));
}

}  // namespace moregan::ckpt
