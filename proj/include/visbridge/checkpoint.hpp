#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "visbridge/tensor.hpp"

namespace vb {

inline constexpr char kContainerMagic[4] = {'V', 'B', 'R', 'G'};
inline constexpr uint32_t kContainerVersion = 1;

// On-disk container: magic, u32 LE version, length-prefixed UTF-8
// metadata, then a tensor table (length-prefixed name, rank, extents,
// raw f32 LE values). Values pass through float, so a save/load cycle
// under the f32 compute dtype is bitwise exact.
struct Container {
    std::string metadata;
    std::vector<std::pair<std::string, diff::Tensor>> tensors;

    const diff::Tensor& get(const std::string& name) const;  // throws IoError if absent
    bool has(const std::string& name) const;
};

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

// key=value helpers for container metadata (one pair per line).
std::string encode_metadata(const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> decode_metadata(const std::string& text);
std::string metadata_value(const std::string& text, const std::string& key);  // "" if absent

}  // namespace vb
