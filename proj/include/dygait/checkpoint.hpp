#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "dygait/config.hpp"
#include "dygait/errors.hpp"
#include "dygait/train.hpp"

// Checkpoint file: magic "DYGT", u32 version, u64 iteration, length-prefixed
// key=value config blob, tensor table (u64 count; per tensor u32 name length
// + name, u8 dtype, u8 rank, u64 dims, raw IEEE-754 payload), and a trailing
// CRC32 over everything before it. All integers and floats little-endian.

namespace dygait::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; byte swaps not implemented");

inline constexpr uint32_t kVersion = 1;
inline constexpr char kMagic[4] = {'D', 'Y', 'G', 'T'};

namespace detail {

template <typename T>
constexpr uint8_t dtype_tag() {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    return sizeof(T) == 4 ? 0 : 1;
}

template <typename V>
void put(std::string& buf, V v) {
    char raw[sizeof(V)];
    std::memcpy(raw, &v, sizeof(V));
    buf.append(raw, sizeof(V));
}

inline void put_str(std::string& buf, const std::string& s) {
    put<uint32_t>(buf, static_cast<uint32_t>(s.size()));
    buf.append(s);
}

template <typename T>
void put_tensor(std::string& buf, const std::string& name, const Tensor4<T>& t) {
    put_str(buf, name);
    put<uint8_t>(buf, dtype_tag<T>());
    put<uint8_t>(buf, 4);
    for (int d : {t.c, t.t, t.h, t.w}) put<uint64_t>(buf, static_cast<uint64_t>(d));
    buf.append(reinterpret_cast<const char*>(t.data.data()), t.size() * sizeof(T));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw CheckpointError("truncated checkpoint (needed " + std::to_string(n) +
                                  " more bytes): " + path);
    }
    template <typename V>
    V get() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, buf.data() + pos, sizeof(V));
        pos += sizeof(V);
        return v;
    }
    std::string get_str() {
        const auto n = get<uint32_t>();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    template <typename T>
    Tensor4<T> get_tensor() {
        const uint8_t dtype = get<uint8_t>();
        if (dtype != dtype_tag<T>())
            throw CheckpointError("checkpoint tensor dtype mismatch in " + path);
        const uint8_t rank = get<uint8_t>();
        if (rank != 4) throw CheckpointError("checkpoint tensor rank != 4 in " + path);
        uint64_t dims[4];
        for (auto& d : dims) d = get<uint64_t>();
        Tensor4<T> t(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                     static_cast<int>(dims[2]), static_cast<int>(dims[3]));
        need(t.size() * sizeof(T));
        std::memcpy(t.data.data(), buf.data() + pos, t.size() * sizeof(T));
        pos += t.size() * sizeof(T);
        return t;
    }
};

}  // namespace detail

template <typename T>
void save_checkpoint(const train::TrainState<T>& st, const std::string& path) {
    config::RunConfig rc;
    rc.model = st.model;
    rc.train = st.cfg;
    rc.ablation = st.mode;
    std::string blob = config::serialize_for_checkpoint(rc);
    blob += "n_classes=" + std::to_string(st.n_classes) + "\n";
    blob += "adam_t=" + std::to_string(st.adam_t) + "\n";
    blob += "rng_state=" + st.rng.save_state() + "\n";

    std::string buf;
    buf.append(kMagic, 4);
    detail::put<uint32_t>(buf, kVersion);
    detail::put<uint64_t>(buf, static_cast<uint64_t>(st.iteration));
    detail::put_str(buf, blob);

    const uint64_t count = st.params.size() + st.opt_m.size() + st.opt_v.size();
    detail::put<uint64_t>(buf, count);
    for (const auto& [name, t] : st.params) detail::put_tensor(buf, "p." + name, t);
    for (const auto& [name, t] : st.opt_m) detail::put_tensor(buf, "m." + name, t);
    for (const auto& [name, t] : st.opt_v) detail::put_tensor(buf, "v." + name, t);

    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    detail::put<uint32_t>(buf, crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write: " + path);
}

template <typename T>
train::TrainState<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 + sizeof(uint32_t))
        throw CheckpointError("checkpoint too small: " + path);
    const uint32_t stored_crc = [&] {
        uint32_t v;
        std::memcpy(&v, buf.data() + buf.size() - 4, 4);
        return v;
    }();
    const uint32_t crc = static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
    if (crc != stored_crc)
        throw CheckpointError("checkpoint checksum mismatch (truncated or corrupt): " + path);
    buf.resize(buf.size() - 4);

    detail::Reader r{buf, 0, path};
    char magic[4];
    r.need(4);
    std::memcpy(magic, buf.data(), 4);
    r.pos = 4;
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("not a checkpoint (bad magic): " + path);
    const uint32_t version = r.get<uint32_t>();
    if (version != kVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported: " +
                              path);

    train::TrainState<T> st;
    st.iteration = static_cast<long>(r.get<uint64_t>());

    const std::string blob = r.get_str();
    config::RunConfig rc;
    std::string rng_state;
    {
        std::stringstream ss(blob);
        std::string line;
        while (std::getline(ss, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw CheckpointError("malformed checkpoint config line: " + line);
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            if (key == "n_classes") st.n_classes = config::detail::to_int(key, value);
            else if (key == "adam_t") st.adam_t = config::detail::to_long(key, value);
            else if (key == "rng_state") rng_state = value;
            else config::apply_kv(rc, key, value);
        }
    }
    st.model = rc.model;
    st.cfg = rc.train;
    st.mode = rc.ablation;
    if (rng_state.empty()) throw CheckpointError("checkpoint missing rng state: " + path);
    st.rng.load_state(rng_state);

    const uint64_t count = r.get<uint64_t>();
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = r.get_str();
        if (name.size() < 3 || name[1] != '.')
            throw CheckpointError("unrecognized checkpoint tensor '" + name + "': " + path);
        auto t = r.template get_tensor<T>();
        const std::string bare = name.substr(2);
        switch (name[0]) {
            case 'p': st.params.emplace(bare, std::move(t)); break;
            case 'm': st.opt_m.emplace(bare, std::move(t)); break;
            case 'v': st.opt_v.emplace(bare, std::move(t)); break;
            default:
                throw CheckpointError("unrecognized checkpoint tensor '" + name + "': " + path);
        }
    }
    if (r.pos != buf.size())
        throw CheckpointError("trailing bytes after checkpoint payload: " + path);

    for (const auto& info : model::param_manifest(st.model, st.n_classes))
        if (!st.params.count(info.name))
            throw CheckpointError("checkpoint missing parameter '" + info.name + "': " + path);
    return st;
}

}  // namespace dygait::ckpt
