#pragma once

#include "olab/tensor.hpp"

#include <string>

namespace olab {

/// OLTENS1 file format:
///   magic "OLTENS1" (7 bytes)
///   rank          uint32 little-endian
///   extents       rank x uint64 little-endian
///   element width uint32 little-endian (4 or 8)
///   payload       raw little-endian IEEE values, row-major
///
/// Width-4 files are read/written by converting through float.
void write_tensor(const std::string &path, const Tensor &t, int element_width = 8);
Tensor read_tensor(const std::string &path);

} // namespace olab
