#pragma once

#include <filesystem>

#include "popcorn/data.hpp"

namespace popcorn {

// RAW_TENSOR: a minimal self-describing binary tensor container readable
// from any language without an imaging dependency.
//
//   bytes 0-3   magic "RTNS"
//   byte  4     version, currently 1
//   byte  5     dtype code: 4 = float32, 8 = float64 (byte width)
//   byte  6     rank r, 1..8
//   next r*8    dims, int64 little-endian
//   payload     row-major values, little-endian
enum class RawDType { F32, F64 };

void save_raw_tensor(const std::filesystem::path& path, const NdArray& a, RawDType dtype);
NdArray load_raw_tensor(const std::filesystem::path& path);

enum class VolumeFormat { Nifti1, RawTensor };

// Reads a volume from disk. NIfTI-1: uncompressed .nii, little-endian,
// float32/float64 data, 348-byte header; scl_slope/scl_inter are applied.
// RAW_TENSOR: the container above, spacing 1.0.
Volume load_volume(const std::filesystem::path& path, VolumeFormat format);

// NIfTI-1 volumes are written as float32, RAW_TENSOR as the given dtype.
void save_volume(const std::filesystem::path& path, const Volume& v, VolumeFormat format,
                 RawDType raw_dtype = RawDType::F64);

// Picks the format from the file extension (.nii -> NIfTI-1, .rt -> RAW_TENSOR).
VolumeFormat format_from_extension(const std::filesystem::path& path);

}  // namespace popcorn
