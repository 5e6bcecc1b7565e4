#include "visbridge/checkpoint.hpp"

#include <cstdio>
#include <cstring>

#include "visbridge/common.hpp"

namespace vb {

namespace {

struct File {
    std::FILE* f = nullptr;
    ~File() {
        if (f) std::fclose(f);
    }
};

void put_u32(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    if (std::fwrite(b, 1, 4, f) != 4) throw IoError("container: short write");
}

uint32_t get_u32(std::FILE* f, const std::string& path) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw IoError("container: truncated file: " + path);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_bytes(std::FILE* f, const void* p, size_t n) {
    if (n > 0 && std::fwrite(p, 1, n, f) != n) throw IoError("container: short write");
}

void get_bytes(std::FILE* f, void* p, size_t n, const std::string& path) {
    if (n > 0 && std::fread(p, 1, n, f) != n)
        throw IoError("container: truncated file: " + path);
}

}  // namespace

const diff::Tensor& Container::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw IoError("container: missing tensor: " + name);
}

bool Container::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

void save_container(const std::string& path, const Container& c) {
    File file;
    file.f = std::fopen(path.c_str(), "wb");
    if (!file.f) throw IoError("container: cannot open for write: " + path);
    std::FILE* f = file.f;
    put_bytes(f, kContainerMagic, 4);
    put_u32(f, kContainerVersion);
    put_u32(f, static_cast<uint32_t>(c.metadata.size()));
    put_bytes(f, c.metadata.data(), c.metadata.size());
    put_u32(f, static_cast<uint32_t>(c.tensors.size()));
    std::vector<float> buf;
    for (const auto& [name, t] : c.tensors) {
        put_u32(f, static_cast<uint32_t>(name.size()));
        put_bytes(f, name.data(), name.size());
        put_u32(f, static_cast<uint32_t>(t.rank()));
        for (int e : t.shape()) put_u32(f, static_cast<uint32_t>(e));
        buf.resize(t.data().size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(t.data()[i]);
        // Assumes a little-endian host, like everything else here.
        put_bytes(f, buf.data(), buf.size() * sizeof(float));
    }
    if (std::fflush(f) != 0) throw IoError("container: flush failed: " + path);
}

Container load_container(const std::string& path) {
    File file;
    file.f = std::fopen(path.c_str(), "rb");
    if (!file.f) throw IoError("container: cannot open: " + path);
    std::FILE* f = file.f;
    char magic[4];
    get_bytes(f, magic, 4, path);
    if (std::memcmp(magic, kContainerMagic, 4) != 0)
        throw IoError("container: bad magic (not a VBRG file): " + path);
    const uint32_t version = get_u32(f, path);
    if (version != kContainerVersion)
        throw IoError("container: unsupported format version " + std::to_string(version) +
                      " (expected " + std::to_string(kContainerVersion) + "): " + path);
    Container c;
    const uint32_t meta_len = get_u32(f, path);
    c.metadata.resize(meta_len);
    get_bytes(f, c.metadata.data(), meta_len, path);
    const uint32_t count = get_u32(f, path);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32(f, path);
        std::string name(name_len, '\0');
        get_bytes(f, name.data(), name_len, path);
        const uint32_t rank = get_u32(f, path);
        std::vector<int> shape(rank);
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(get_u32(f, path));
            n *= shape[d];
        }
        std::vector<float> buf(static_cast<size_t>(n));
        get_bytes(f, buf.data(), buf.size() * sizeof(float), path);
        std::vector<double> vals(buf.size());
        for (size_t j = 0; j < buf.size(); ++j) vals[j] = static_cast<double>(buf[j]);
        c.tensors.emplace_back(std::move(name), diff::Tensor::from(std::move(shape), std::move(vals)));
    }
    return c;
}

std::string encode_metadata(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> decode_metadata(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

std::string metadata_value(const std::string& text, const std::string& key) {
    for (const auto& [k, v] : decode_metadata(text))
        if (k == key) return v;
    return "";
}

}  // namespace vb
