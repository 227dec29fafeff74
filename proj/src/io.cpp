#include "popcorn/io.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "popcorn/errors.hpp"

namespace popcorn {

namespace {

constexpr char kRawMagic[4] = {'R', 'T', 'N', 'S'};
constexpr unsigned char kRawVersion = 1;

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, void* p, std::size_t n, const std::string& what) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    throw DataError("truncated file while reading " + what);
}

std::ifstream open_read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw DataError("file not found: " + path.string());
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path.string());
  return f;
}

std::ofstream open_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write file: " + path.string());
  return f;
}

}  // namespace

void save_raw_tensor(const std::filesystem::path& path, const NdArray& a, RawDType dtype) {
  if (a.rank() < 1 || a.rank() > 8)
    throw Error("save_raw_tensor: rank must be in 1..8");
  auto f = open_write(path);
  write_bytes(f, kRawMagic, 4);
  unsigned char ver = kRawVersion;
  unsigned char code = dtype == RawDType::F32 ? 4 : 8;
  unsigned char rank = static_cast<unsigned char>(a.rank());
  write_bytes(f, &ver, 1);
  write_bytes(f, &code, 1);
  write_bytes(f, &rank, 1);
  for (auto d : a.shape) {
    std::int64_t le = d;  // build targets are little-endian
    write_bytes(f, &le, 8);
  }
  if (dtype == RawDType::F64) {
    write_bytes(f, a.data.data(), a.data.size() * 8);
  } else {
    std::vector<float> buf(a.data.begin(), a.data.end());
    write_bytes(f, buf.data(), buf.size() * 4);
  }
  if (!f) throw DataError("write failed: " + path.string());
}

NdArray load_raw_tensor(const std::filesystem::path& path) {
  auto f = open_read(path);
  char magic[4];
  read_bytes(f, magic, 4, "RAW_TENSOR magic");
  if (std::memcmp(magic, kRawMagic, 4) != 0)
    throw DataError("malformed RAW_TENSOR header (bad magic): " + path.string());
  unsigned char ver, code, rank;
  read_bytes(f, &ver, 1, "RAW_TENSOR version");
  read_bytes(f, &code, 1, "RAW_TENSOR dtype");
  read_bytes(f, &rank, 1, "RAW_TENSOR rank");
  if (ver != kRawVersion)
    throw DataError("unsupported RAW_TENSOR version " + std::to_string(ver));
  if (code != 4 && code != 8)
    throw DataError("unsupported RAW_TENSOR dtype code " + std::to_string(code));
  if (rank < 1 || rank > 8)
    throw DataError("malformed RAW_TENSOR header (rank " + std::to_string(rank) + ")");
  Shape shape(rank);
  for (auto& d : shape) {
    read_bytes(f, &d, 8, "RAW_TENSOR dims");
    if (d < 1) throw DataError("malformed RAW_TENSOR header (dim " + std::to_string(d) + ")");
  }
  const std::int64_t n = numel(shape);
  NdArray out(shape);
  if (code == 8) {
    f.read(reinterpret_cast<char*>(out.data.data()), n * 8);
    if (f.gcount() != n * 8)
      throw DataError("malformed RAW_TENSOR: payload shorter than header declares: " + path.string());
  } else {
    std::vector<float> buf(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(buf.data()), n * 4);
    if (f.gcount() != n * 4)
      throw DataError("malformed RAW_TENSOR: payload shorter than header declares: " + path.string());
    for (std::int64_t i = 0; i < n; ++i) out[i] = buf[static_cast<std::size_t>(i)];
  }
  return out;
}

namespace {

// The NIfTI-1 header fields this reader/writer cares about, at their fixed
// offsets within the 348-byte header.
struct NiftiHeader {
  std::array<char, 348> raw{};

  template <typename T>
  void put(std::size_t off, T v) {
    std::memcpy(raw.data() + off, &v, sizeof(T));
  }
  template <typename T>
  T get(std::size_t off) const {
    T v;
    std::memcpy(&v, raw.data() + off, sizeof(T));
    return v;
  }
};

}  // namespace

void save_volume(const std::filesystem::path& path, const Volume& v, VolumeFormat format,
                 RawDType raw_dtype) {
  validate_volume(v);
  if (format == VolumeFormat::RawTensor) {
    save_raw_tensor(path, v.voxels, raw_dtype);
    return;
  }
  const int r = v.voxels.rank();
  if (r > 7) throw Error("NIfTI-1 supports at most 7 dimensions");

  NiftiHeader h;
  h.put<std::int32_t>(0, 348);
  // dim[1] is the fastest-varying axis on disk; our arrays are row-major with
  // the last axis fastest, so axes are reversed going to and from the file.
  h.put<std::int16_t>(40, static_cast<std::int16_t>(r));
  for (int i = 0; i < 7; ++i) {
    std::int16_t d = 1;
    if (i < r) d = static_cast<std::int16_t>(v.voxels.shape[static_cast<std::size_t>(r - 1 - i)]);
    h.put<std::int16_t>(40 + 2 * (i + 1), d);
  }
  h.put<std::int16_t>(70, 16);  // DT_FLOAT32
  h.put<std::int16_t>(72, 32);  // bitpix
  h.put<float>(76, 1.0f);
  for (int i = 0; i < 7; ++i) {
    float s = 1.0f;
    if (i < r) s = static_cast<float>(v.spacing[static_cast<std::size_t>(r - 1 - i)]);
    h.put<float>(76 + 4 * (i + 1), s);
  }
  h.put<float>(108, 352.0f);  // vox_offset
  h.put<float>(112, 1.0f);    // scl_slope
  h.put<float>(116, 0.0f);    // scl_inter
  std::memcpy(h.raw.data() + 344, "n+1\0", 4);

  auto f = open_write(path);
  write_bytes(f, h.raw.data(), 348);
  const char pad[4] = {0, 0, 0, 0};
  write_bytes(f, pad, 4);
  std::vector<float> buf(v.voxels.data.begin(), v.voxels.data.end());
  write_bytes(f, buf.data(), buf.size() * 4);
  if (!f) throw DataError("write failed: " + path.string());
}

static Volume load_nifti(const std::filesystem::path& path) {
  auto f = open_read(path);
  NiftiHeader h;
  read_bytes(f, h.raw.data(), 348, "NIfTI-1 header");
  if (h.get<std::int32_t>(0) != 348)
    throw DataError("malformed NIfTI-1 header (sizeof_hdr != 348; byte-swapped files are not supported): " +
                    path.string());
  const char* magic = h.raw.data() + 344;
  if (std::memcmp(magic, "n+1", 3) != 0 && std::memcmp(magic, "ni1", 3) != 0)
    throw DataError("malformed NIfTI-1 header (bad magic): " + path.string());

  const int r = h.get<std::int16_t>(40);
  if (r < 1 || r > 7)
    throw DataError("malformed NIfTI-1 header (dim[0] = " + std::to_string(r) + ")");
  Shape shape(static_cast<std::size_t>(r));
  std::vector<double> spacing(static_cast<std::size_t>(r), 1.0);
  for (int i = 0; i < r; ++i) {
    const std::int16_t d = h.get<std::int16_t>(40 + 2 * (i + 1));
    if (d < 1) throw DataError("malformed NIfTI-1 header (dim " + std::to_string(d) + ")");
    shape[static_cast<std::size_t>(r - 1 - i)] = d;
    const float s = h.get<float>(76 + 4 * (i + 1));
    spacing[static_cast<std::size_t>(r - 1 - i)] = s > 0.0f ? s : 1.0;
  }

  const std::int16_t datatype = h.get<std::int16_t>(70);
  if (datatype != 16 && datatype != 64)
    throw DataError("unsupported NIfTI-1 datatype " + std::to_string(datatype) +
                    " (only float32/float64): " + path.string());
  float vox_offset = h.get<float>(108);
  if (vox_offset < 348.0f) vox_offset = 352.0f;
  f.seekg(static_cast<std::streamoff>(vox_offset), std::ios::beg);
  if (!f) throw DataError("malformed NIfTI-1 file (bad vox_offset): " + path.string());

  const std::int64_t n = numel(shape);
  Volume v;
  v.voxels = NdArray(shape);
  v.spacing = std::move(spacing);
  if (datatype == 16) {
    std::vector<float> buf(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(buf.data()), n * 4);
    if (f.gcount() != n * 4) throw DataError("truncated NIfTI-1 payload: " + path.string());
    for (std::int64_t i = 0; i < n; ++i) v.voxels[i] = buf[static_cast<std::size_t>(i)];
  } else {
    f.read(reinterpret_cast<char*>(v.voxels.data.data()), n * 8);
    if (f.gcount() != n * 8) throw DataError("truncated NIfTI-1 payload: " + path.string());
  }

  const float slope = h.get<float>(112);
  const float inter = h.get<float>(116);
  if (slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) {
    for (auto& x : v.voxels.data) x = x * slope + inter;
  }
  return v;
}

Volume load_volume(const std::filesystem::path& path, VolumeFormat format) {
  Volume v;
  if (format == VolumeFormat::RawTensor) {
    v = make_volume(load_raw_tensor(path));
  } else {
    v = load_nifti(path);
  }
  if (!all_finite(v.voxels.data))
    throw DataError("non-finite voxel values in " + path.string());
  return v;
}

VolumeFormat format_from_extension(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".nii") return VolumeFormat::Nifti1;
  if (ext == ".rt") return VolumeFormat::RawTensor;
  throw DataError("cannot infer volume format from extension '" + ext + "' (expected .nii or .rt)");
}

}  // namespace popcorn
