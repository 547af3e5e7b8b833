// SPDX-License-Identifier: Apache-2.0
#include "csmoe/tnsr_io.hpp"

#include "csmoe/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace csmoe {

namespace {

static_assert(std::endian::native == std::endian::little, "TNSR1 IO assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'T', 'N', 'S', 'R'};
constexpr std::uint8_t kVersion = 1;

void read_exact(std::istream& is, void* dst, std::size_t n, const char* what)
{
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw FormatError(std::string("TNSR1: truncated while reading ") + what);
}

}  // namespace

void write_tnsr(std::ostream& os, const Tensor& t)
{
    if (t.rank() > 255)
        throw DimensionError("TNSR1: rank " + std::to_string(t.rank()) + " exceeds 255");
    os.write(kMagic.data(), kMagic.size());
    const std::uint8_t header[2] = {kVersion, static_cast<std::uint8_t>(t.rank())};
    os.write(reinterpret_cast<const char*>(header), 2);
    for (std::size_t d : t.shape()) {
        if (d > UINT32_MAX)
            throw DimensionError("TNSR1: dimension " + std::to_string(d) + " exceeds u32");
        const auto d32 = static_cast<std::uint32_t>(d);
        os.write(reinterpret_cast<const char*>(&d32), sizeof d32);
    }
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tnsr(std::istream& is)
{
    std::array<char, 4> magic{};
    read_exact(is, magic.data(), magic.size(), "magic");
    if (magic != kMagic)
        throw FormatError("TNSR1: bad magic bytes");
    std::uint8_t header[2];
    read_exact(is, header, 2, "header");
    if (header[0] != kVersion)
        throw FormatError("TNSR1: unsupported version " + std::to_string(header[0]));
    Shape shape(header[1]);
    for (auto& d : shape) {
        std::uint32_t d32;
        read_exact(is, &d32, sizeof d32, "dimensions");
        d = d32;
    }
    std::vector<double> data(shape_numel(shape));
    read_exact(is, data.data(), data.size() * sizeof(double), "payload");
    return Tensor::from(std::move(shape), std::move(data));
}

void save_tnsr(const std::filesystem::path& path, const Tensor& t)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw FormatError("cannot open " + path.string() + " for writing");
    write_tnsr(os, t);
    if (!os)
        throw FormatError("failed writing " + path.string());
}

Tensor load_tnsr(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open " + path.string());
    try {
        return read_tnsr(is);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace csmoe
