#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>

#include "rtgs/optim.hpp"

namespace rtgs {

// Flat binary parameter container, little endian:
//   "RTGS" | u32 version | u64 count
//   per parameter: u32 name length | name bytes | u32 rank | u64 dims... | f64 data...

namespace detail {

constexpr char kCkptMagic[4] = {'R', 'T', 'G', 'S'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        fail("checkpoint: truncated while reading ", what);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("checkpoint: cannot open '", path, "' for writing");
    os.write(detail::kCkptMagic, 4);
    detail::write_pod(os, detail::kCkptVersion);
    detail::write_pod(os, uint64_t(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.names[i];
        const auto& t = params.tensors[i];
        detail::write_pod(os, uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        detail::write_pod(os, uint32_t(t.shape().size()));
        for (size_t d : t.shape()) detail::write_pod(os, uint64_t(d));
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 std::streamsize(t.numel() * sizeof(double)));
    }
    if (!os) fail("checkpoint: write failure on '", path, "'");
}

inline ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("checkpoint: cannot open '", path, "'");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
        fail("checkpoint: '", path, "' is not a parameter container");
    uint32_t version = detail::read_pod<uint32_t>(is, "version");
    if (version != detail::kCkptVersion)
        fail("checkpoint: unsupported version ", version, " in '", path, "'");
    uint64_t count = detail::read_pod<uint64_t>(is, "parameter count");
    ParamSet out;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t name_len = detail::read_pod<uint32_t>(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) fail("checkpoint: truncated parameter name");
        uint32_t rank = detail::read_pod<uint32_t>(is, "rank");
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d)
            shape[d] = size_t(detail::read_pod<uint64_t>(is, "dimension"));
        std::vector<double> data(shape_numel(shape));
        if (!is.read(reinterpret_cast<char*>(data.data()),
                     std::streamsize(data.size() * sizeof(double))))
            fail("checkpoint: truncated data for parameter '", name, "'");
        out.add(name, Tensor::from_data(shape, std::move(data), true));
    }
    return out;
}

// Copy values from a loaded container into an existing parameter set.
inline void restore_params(ParamSet& dst, const ParamSet& src) {
    if (dst.size() != src.size())
        fail("checkpoint: parameter count mismatch, have ", dst.size(), " want ", src.size());
    for (size_t i = 0; i < dst.size(); ++i) {
        if (dst.names[i] != src.names[i])
            fail("checkpoint: parameter name mismatch '", dst.names[i], "' vs '", src.names[i],
                 "'");
        if (dst.tensors[i].shape() != src.tensors[i].shape())
            fail("checkpoint: shape mismatch for '", dst.names[i], "'");
        dst.tensors[i].data() = src.tensors[i].data();
    }
}

}  // namespace rtgs
