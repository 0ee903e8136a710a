#include "mbrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mbrec/io.hpp"

namespace mbrec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'B', 'R', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void append_pod(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <typename T>
T read_pod(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size()) throw DataError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

void Checkpoint::add_f64(const std::string& name, std::vector<std::size_t> dims,
                         std::vector<double> data) {
    Array a;
    a.name = name;
    a.dtype = DType::f64;
    a.dims = std::move(dims);
    a.f64 = std::move(data);
    if (a.numel() != a.f64.size())
        throw ShapeError("checkpoint: array " + name + " data does not fill its dims");
    arrays_.push_back(std::move(a));
}

void Checkpoint::add_i64(const std::string& name, std::vector<std::size_t> dims,
                         std::vector<std::int64_t> data) {
    Array a;
    a.name = name;
    a.dtype = DType::i64;
    a.dims = std::move(dims);
    a.i64 = std::move(data);
    if (a.numel() != a.i64.size())
        throw ShapeError("checkpoint: array " + name + " data does not fill its dims");
    arrays_.push_back(std::move(a));
}

const Checkpoint::Array* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays_)
        if (a.name == name) return &a;
    return nullptr;
}

const Checkpoint::Array& Checkpoint::require(const std::string& name) const {
    const Array* a = find(name);
    if (!a) throw DataError("checkpoint: missing array " + name);
    return *a;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    const std::string meta_str = meta.dump();
    append_pod<std::uint64_t>(buf, meta_str.size());
    buf += meta_str;
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& a : arrays_) {
        append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(a.name.size()));
        buf += a.name;
        append_pod<std::uint8_t>(buf, static_cast<std::uint8_t>(a.dtype));
        append_pod<std::uint8_t>(buf, static_cast<std::uint8_t>(a.dims.size()));
        for (auto d : a.dims) append_pod<std::uint64_t>(buf, d);
        if (a.dtype == DType::f64)
            buf.append(reinterpret_cast<const char*>(a.f64.data()), a.f64.size() * sizeof(double));
        else
            buf.append(reinterpret_cast<const char*>(a.i64.data()),
                       a.i64.size() * sizeof(std::int64_t));
    }
    atomic_write_file(path, buf);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    const std::string buf = read_text_file(path);
    std::size_t pos = 0;
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic in " + path.string());
    pos = sizeof(kMagic);
    Checkpoint ckpt;
    const auto meta_len = read_pod<std::uint64_t>(buf, pos);
    if (pos + meta_len > buf.size()) throw DataError("checkpoint: truncated metadata");
    ckpt.meta = nlohmann::json::parse(buf.substr(pos, meta_len));
    pos += meta_len;
    const auto count = read_pod<std::uint32_t>(buf, pos);
    for (std::uint32_t i = 0; i < count; ++i) {
        Array a;
        const auto name_len = read_pod<std::uint32_t>(buf, pos);
        if (pos + name_len > buf.size()) throw DataError("checkpoint: truncated array name");
        a.name = buf.substr(pos, name_len);
        pos += name_len;
        a.dtype = static_cast<DType>(read_pod<std::uint8_t>(buf, pos));
        const auto ndim = read_pod<std::uint8_t>(buf, pos);
        for (std::uint8_t d = 0; d < ndim; ++d)
            a.dims.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(buf, pos)));
        const std::size_t n = a.numel();
        if (a.dtype == DType::f64) {
            if (pos + n * sizeof(double) > buf.size())
                throw DataError("checkpoint: truncated array data for " + a.name);
            a.f64.resize(n);
            std::memcpy(a.f64.data(), buf.data() + pos, n * sizeof(double));
            pos += n * sizeof(double);
        } else if (a.dtype == DType::i64) {
            if (pos + n * sizeof(std::int64_t) > buf.size())
                throw DataError("checkpoint: truncated array data for " + a.name);
            a.i64.resize(n);
            std::memcpy(a.i64.data(), buf.data() + pos, n * sizeof(std::int64_t));
            pos += n * sizeof(std::int64_t);
        } else {
            throw DataError("checkpoint: unknown dtype for array " + a.name);
        }
        ckpt.arrays_.push_back(std::move(a));
    }
    return ckpt;
}

}  // namespace mbrec
