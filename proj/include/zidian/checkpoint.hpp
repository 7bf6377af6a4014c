#pragma once
// Checkpoint container: one file holding a JSON manifest plus a single
// little-endian raw buffer.
//
//   ┌────────────────────────────────────────────┐
//   │ magic "ZDCP" | u32 version | u64 manifest  │
//   │ manifest JSON:                             │
//   │   meta: free-form object (model config)    │
//   │   tensors: [{name, shape, dtype, offset}]  │
//   │ raw buffer: tensors back to back           │
//   └────────────────────────────────────────────┘
//
// Tensor order in the manifest is the save order, so identical inputs
// produce byte-identical files.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "zidian/tensor.hpp"

namespace zidian {

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr char kCheckpointMagic[4] = {'Z', 'D', 'C', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename S>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
    return "f32";
}
template <>
inline const char* dtype_name<double>() {
    return "f64";
}

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline uint32_t get_u32(const char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}
inline uint64_t get_u64(const char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}
}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<S>>>& tensors,
                     const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        nlohmann::json rec;
        rec["name"] = name;
        rec["shape"] = t.shape();
        rec["dtype"] = detail::dtype_name<S>();
        rec["offset"] = offset;
        manifest["tensors"].push_back(rec);
        offset += static_cast<uint64_t>(t.numel()) * sizeof(S);
    }
    const std::string mjson = manifest.dump();

    std::string head;
    head.append(kCheckpointMagic, 4);
    detail::put_u32(head, kCheckpointVersion);
    detail::put_u64(head, static_cast<uint64_t>(mjson.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
    for (const auto& [name, t] : tensors) {
        (void)name;
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(S))));
    }
    if (!out) throw CheckpointError("short write on checkpoint: " + path);
}

template <typename S>
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor<S>>> tensors;

    const Tensor<S>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.size() < 16) throw CheckpointError("checkpoint truncated: " + path);
    if (std::memcmp(content.data(), kCheckpointMagic, 4) != 0)
        throw CheckpointError("bad checkpoint magic in " + path);
    const uint32_t version = detail::get_u32(content.data() + 4);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const uint64_t mlen = detail::get_u64(content.data() + 8);
    if (16 + mlen > content.size()) throw CheckpointError("checkpoint manifest truncated");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(content.substr(16, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest unparsable: ") + e.what());
    }
    const char* data = content.data() + 16 + mlen;
    const uint64_t data_len = content.size() - 16 - mlen;

    Checkpoint<S> ck;
    ck.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& rec : manifest.at("tensors")) {
        const std::string name = rec.at("name").get<std::string>();
        const std::vector<int> shape = rec.at("shape").get<std::vector<int>>();
        const std::string dtype = rec.at("dtype").get<std::string>();
        const uint64_t offset = rec.at("offset").get<uint64_t>();
        const uint64_t n = static_cast<uint64_t>(Tensor<S>::count(shape));
        const uint64_t elem = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
        if (elem == 0) throw CheckpointError("unknown dtype '" + dtype + "' for tensor " + name);
        if (offset + n * elem > data_len)
            throw CheckpointError("tensor " + name + " runs past end of checkpoint buffer");
        std::vector<S> vals(n);
        if (elem == sizeof(S) && dtype == detail::dtype_name<S>()) {
            std::memcpy(vals.data(), data + offset, n * elem);
        } else if (dtype == "f32") {
            std::vector<float> tmp(n);
            std::memcpy(tmp.data(), data + offset, n * 4);
            for (uint64_t i = 0; i < n; ++i) vals[i] = static_cast<S>(tmp[i]);
        } else {
            std::vector<double> tmp(n);
            std::memcpy(tmp.data(), data + offset, n * 8);
            for (uint64_t i = 0; i < n; ++i) vals[i] = static_cast<S>(tmp[i]);
        }
        ck.tensors.emplace_back(name, Tensor<S>::from(shape, std::move(vals)));
    }
    return ck;
}

}  // namespace zidian
