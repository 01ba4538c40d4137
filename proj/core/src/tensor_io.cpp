#include "olab/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace olab {

namespace {

constexpr char kMagic[7] = {'O', 'L', 'T', 'E', 'N', 'S', '1'};

static_assert(std::endian::native == std::endian::little,
              "OLTENS1 writer assumes a little-endian host");

template <typename T> void write_pod(std::ofstream &os, T v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T> T read_pod(std::ifstream &is, const std::string &path) {
    T v{};
    is.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!is) {
        throw std::runtime_error("corrupt tensor file: " + path);
    }
    return v;
}

} // namespace

void write_tensor(const std::string &path, const Tensor &t, int element_width) {
    if (element_width != 4 && element_width != 8) {
        throw std::invalid_argument("tensor element width must be 4 or 8");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) {
        write_pod<std::uint64_t>(os, t.extent(i));
    }
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(element_width));
    if (element_width == 8) {
        os.write(reinterpret_cast<const char *>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
        std::vector<float> buf(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            buf[i] = static_cast<float>(t(i));
        }
        os.write(reinterpret_cast<const char *>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!os) {
        throw std::runtime_error("write failed: " + path);
    }
}

Tensor read_tensor(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open tensor file: " + path);
    }
    char magic[7];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("corrupt tensor file (bad magic): " + path);
    }
    const auto rank = read_pod<std::uint32_t>(is, path);
    if (rank < 1 || rank > 3) {
        throw std::runtime_error("corrupt tensor file (rank " + std::to_string(rank) +
                                 "): " + path);
    }
    std::vector<std::size_t> shape(rank);
    for (auto &e : shape) {
        e = static_cast<std::size_t>(read_pod<std::uint64_t>(is, path));
    }
    const auto width = read_pod<std::uint32_t>(is, path);
    Tensor t(shape);
    if (width == 8) {
        is.read(reinterpret_cast<char *>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else if (width == 4) {
        std::vector<float> buf(t.size());
        is.read(reinterpret_cast<char *>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        for (std::size_t i = 0; i < t.size(); ++i) {
            t(i) = static_cast<double>(buf[i]);
        }
    } else {
        throw std::runtime_error("corrupt tensor file (width " + std::to_string(width) +
                                 "): " + path);
    }
    if (!is) {
        throw std::runtime_error("corrupt tensor file (truncated): " + path);
    }
    return t;
}

} // namespace olab
