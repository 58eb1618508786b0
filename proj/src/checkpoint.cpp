#include "s4v/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "the S4V1 archive writes raw little-endian buffers");

namespace s4v {

namespace {
constexpr char kMagic[4] = {'S', '4', 'V', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated archive: " + path);
    return v;
}
}  // namespace

void save_archive(const TensorArchive& archive, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    write_pod<uint32_t>(out, static_cast<uint32_t>(archive.size()));
    for (const auto& [name, t] : archive) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint8_t>(out, static_cast<uint8_t>(t.dtype()));
        write_pod<uint8_t>(out, static_cast<uint8_t>(t.rank()));
        for (int64_t d : t.shape()) write_pod<uint64_t>(out, static_cast<uint64_t>(d));
        out.write(reinterpret_cast<const char*>(t.raw()),
                  static_cast<std::streamsize>(t.nbytes()));
    }
    if (!out) throw IoError("write failed: " + path);
}

TensorArchive load_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad magic, not an S4V1 archive: " + path);
    const uint32_t count = read_pod<uint32_t>(in, path);
    TensorArchive archive;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_pod<uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw IoError("truncated archive: " + path);
        const uint8_t dtype_code = read_pod<uint8_t>(in, path);
        if (dtype_code > 1)
            throw IoError("unknown dtype code " + std::to_string(dtype_code) + " for tensor '" +
                          name + "' in " + path);
        const uint8_t rank = read_pod<uint8_t>(in, path);
        std::vector<int64_t> shape(rank);
        for (auto& d : shape) d = static_cast<int64_t>(read_pod<uint64_t>(in, path));
        Tensor t = Tensor::empty(std::move(shape), static_cast<DType>(dtype_code));
        in.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.nbytes()));
        if (!in) throw IoError("truncated archive: " + path);
        if (!archive.emplace(name, std::move(t)).second)
            throw IoError("duplicate tensor name '" + name + "' in " + path);
    }
    return archive;
}

void save_store(const nn::ParamStore& store, const std::string& path) {
    TensorArchive archive(store.entries().begin(), store.entries().end());
    save_archive(archive, path);
}

void load_into_store(nn::ParamStore& store, const std::string& path) {
    TensorArchive archive = load_archive(path);
    std::string missing, extra;
    for (const auto& [name, t] : store.entries())
        if (!archive.count(name)) missing += (missing.empty() ? "" : ", ") + name;
    for (const auto& [name, t] : archive)
        if (!store.contains(name)) extra += (extra.empty() ? "" : ", ") + name;
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "checkpoint does not match model: " + path;
        if (!missing.empty()) msg += "; missing tensors: [" + missing + "]";
        if (!extra.empty()) msg += "; unexpected tensors: [" + extra + "]";
        throw ConfigError(msg);
    }
    for (const auto& [name, src] : archive) {
        Tensor& dst = store.at(name);
        if (src.shape() != dst.shape())
            throw ConfigError("checkpoint tensor '" + name + "' has shape " +
                              shape_str(src.shape()) + ", model expects " +
                              shape_str(dst.shape()));
        if (src.dtype() != dst.dtype())
            throw ConfigError("checkpoint tensor '" + name + "' has dtype " +
                              std::string(dtype_name(src.dtype())) + ", model expects " +
                              dtype_name(dst.dtype()));
        std::memcpy(dst.raw(), src.raw(), dst.nbytes());
    }
}

}  // namespace s4v
