// SPDX-License-Identifier: Apache-2.0
//
// TNSR1 binary tensor format:
//   "TNSR" | u8 version (=1) | u8 rank | rank × u32 LE dims | row-major f64 LE payload
#pragma once

#include "csmoe/tensor.hpp"

#include <filesystem>
#include <iosfwd>

namespace csmoe {

void write_tnsr(std::ostream& os, const Tensor& t);
/// Reads one TNSR1 block. Throws FormatError on bad magic, version, or truncation.
Tensor read_tnsr(std::istream& is);

void save_tnsr(const std::filesystem::path& path, const Tensor& t);
Tensor load_tnsr(const std::filesystem::path& path);

}  // namespace csmoe
