// nifti.cpp - part of volsynth: single-file NIfTI-1 subset.
//
// Subset: .nii (header+data in one file), little-endian, datatypes float32
// and int16, scl_slope/scl_inter applied on read, axis-aligned sform only.
// Everything else in the 348-byte header is written as zeros and ignored on
// read.
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "volume.hpp"

namespace volsynth {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtInt16 = 4;

// Header byte offsets per the NIfTI-1 standard.
constexpr int kOffSizeofHdr = 0;
constexpr int kOffDim = 40;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffSformCode = 254;
constexpr int kOffSrowX = 280;
constexpr int kOffSrowY = 296;
constexpr int kOffSrowZ = 312;
constexpr int kOffMagic = 344;

template <typename T>
T get_le(const uint8_t* hdr, int off) {
  T v;
  std::memcpy(&v, hdr + off, sizeof(T));
  return v;  // host is little-endian on every supported target
}

template <typename T>
void put_le(uint8_t* hdr, int off, T v) {
  std::memcpy(hdr + off, &v, sizeof(T));
}

}  // namespace

Volume read_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), errc::io, "cannot open " + path);

  uint8_t hdr[kHeaderSize];
  f.read(reinterpret_cast<char*>(hdr), kHeaderSize);
  require(f.gcount() == kHeaderSize, errc::corrupt, path + ": truncated header");

  const int32_t sizeof_hdr = get_le<int32_t>(hdr, kOffSizeofHdr);
  if (sizeof_hdr != kHeaderSize) {
    if (__builtin_bswap32(static_cast<uint32_t>(sizeof_hdr)) == kHeaderSize)
      fail(errc::unsupported, path + ": big-endian NIfTI is not supported");
    fail(errc::format, path + ": not a NIfTI-1 file (sizeof_hdr)");
  }
  const char* magic = reinterpret_cast<const char*>(hdr + kOffMagic);
  require(std::memcmp(magic, "n+1\0", 4) == 0, errc::format,
          path + ": bad magic bytes");

  int16_t dim[8];
  std::memcpy(dim, hdr + kOffDim, sizeof(dim));
  require(dim[0] >= 3 && dim[0] <= 7, errc::format, path + ": bad dim[0]");
  for (int d = 4; d <= dim[0]; ++d)
    require(dim[d] <= 1, errc::unsupported, path + ": only 3D volumes supported");
  const int64_t nx = dim[1], ny = dim[2], nz = dim[3];
  require(nx > 0 && ny > 0 && nz > 0, errc::format, path + ": non-positive dim");

  const int16_t datatype = get_le<int16_t>(hdr, kOffDatatype);
  require(datatype == kDtFloat32 || datatype == kDtInt16, errc::unsupported,
          path + ": unsupported datatype code " + std::to_string(datatype));
  const int bytes_per = datatype == kDtFloat32 ? 4 : 2;

  float pixdim[4];
  std::memcpy(pixdim, hdr + kOffPixdim, sizeof(pixdim));
  const float vox_offset_f = get_le<float>(hdr, kOffVoxOffset);
  require(vox_offset_f >= kHeaderSize, errc::format, path + ": bad vox_offset");
  const std::streamoff vox_offset = static_cast<std::streamoff>(vox_offset_f);

  float scl_slope = get_le<float>(hdr, kOffSclSlope);
  const float scl_inter = get_le<float>(hdr, kOffSclInter);
  if (scl_slope == 0.0f) scl_slope = 1.0f;

  Volume v;
  v.shape = {nx, ny, nz};
  for (int a = 0; a < 3; ++a) {
    float s = pixdim[a + 1];
    if (s <= 0.0f || !std::isfinite(s)) s = 1.0f;
    v.spacing_mm[a] = s;
  }

  const int16_t sform_code = get_le<int16_t>(hdr, kOffSformCode);
  if (sform_code > 0) {
    float srow[3][4];
    std::memcpy(srow[0], hdr + kOffSrowX, 16);
    std::memcpy(srow[1], hdr + kOffSrowY, 16);
    std::memcpy(srow[2], hdr + kOffSrowZ, 16);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (r != c)
          require(srow[r][c] == 0.0f, errc::unsupported,
                  path + ": oblique affine is outside the supported subset");
    for (int a = 0; a < 3; ++a) v.origin_mm[a] = srow[a][3];
  }

  const int64_t n = nx * ny * nz;
  f.seekg(0, std::ios::end);
  const std::streamoff file_size = f.tellg();
  require(file_size >= vox_offset + n * bytes_per, errc::corrupt,
          path + ": truncated payload");
  f.seekg(vox_offset);

  std::vector<uint8_t> raw(static_cast<size_t>(n) * bytes_per);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(f.gcount() == static_cast<std::streamsize>(raw.size()), errc::corrupt,
          path + ": truncated payload");

  v.data.resize(static_cast<size_t>(n));
  // Disk order is x-fastest; internal order is z-fastest.
  size_t i = 0;
  const bool apply_scl = !(scl_slope == 1.0f && scl_inter == 0.0f);
  for (int64_t z = 0; z < nz; ++z)
    for (int64_t y = 0; y < ny; ++y)
      for (int64_t x = 0; x < nx; ++x, ++i) {
        float val;
        if (datatype == kDtFloat32) {
          std::memcpy(&val, raw.data() + i * 4, 4);
        } else {
          int16_t s16;
          std::memcpy(&s16, raw.data() + i * 2, 2);
          val = static_cast<float>(s16);
        }
        if (apply_scl) val = scl_slope * val + scl_inter;
        v.data[v.index(x, y, z)] = val;
      }

  for (const float val : v.data)
    require(std::isfinite(val), errc::corrupt, path + ": non-finite intensity");
  return v;
}

static void write_nifti(const Volume& v, const std::string& path, int16_t datatype) {
  v.validate("write_volume");

  uint8_t hdr[kHeaderSize];
  std::memset(hdr, 0, sizeof(hdr));
  put_le<int32_t>(hdr, kOffSizeofHdr, kHeaderSize);
  int16_t dim[8] = {3, static_cast<int16_t>(v.shape[0]),
                    static_cast<int16_t>(v.shape[1]),
                    static_cast<int16_t>(v.shape[2]), 1, 1, 1, 1};
  require(v.shape[0] <= 32767 && v.shape[1] <= 32767 && v.shape[2] <= 32767,
          errc::invalid, "volume too large for NIfTI-1 dims");
  std::memcpy(hdr + kOffDim, dim, sizeof(dim));
  put_le<int16_t>(hdr, kOffDatatype, datatype);
  put_le<int16_t>(hdr, kOffBitpix, datatype == kDtFloat32 ? 32 : 16);
  float pixdim[4] = {0.0f, v.spacing_mm[0], v.spacing_mm[1], v.spacing_mm[2]};
  std::memcpy(hdr + kOffPixdim, pixdim, sizeof(pixdim));
  put_le<float>(hdr, kOffVoxOffset, static_cast<float>(kVoxOffset));
  put_le<float>(hdr, kOffSclSlope, 1.0f);
  put_le<float>(hdr, kOffSclInter, 0.0f);
  put_le<int16_t>(hdr, kOffSformCode, 1);
  float srow[3][4] = {{v.spacing_mm[0], 0, 0, v.origin_mm[0]},
                      {0, v.spacing_mm[1], 0, v.origin_mm[1]},
                      {0, 0, v.spacing_mm[2], v.origin_mm[2]}};
  std::memcpy(hdr + kOffSrowX, srow[0], 16);
  std::memcpy(hdr + kOffSrowY, srow[1], 16);
  std::memcpy(hdr + kOffSrowZ, srow[2], 16);
  std::memcpy(hdr + kOffMagic, "n+1\0", 4);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), errc::io, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(hdr), kHeaderSize);
  const uint8_t ext[4] = {0, 0, 0, 0};  // no header extensions
  f.write(reinterpret_cast<const char*>(ext), 4);

  const int64_t nx = v.shape[0], ny = v.shape[1], nz = v.shape[2];
  std::vector<uint8_t> raw(static_cast<size_t>(v.numel()) *
                           (datatype == kDtFloat32 ? 4 : 2));
  size_t i = 0;
  for (int64_t z = 0; z < nz; ++z)
    for (int64_t y = 0; y < ny; ++y)
      for (int64_t x = 0; x < nx; ++x, ++i) {
        const float val = v.data[v.index(x, y, z)];
        if (datatype == kDtFloat32) {
          std::memcpy(raw.data() + i * 4, &val, 4);
        } else {
          const double r = std::nearbyint(static_cast<double>(val));
          require(r >= -32768.0 && r <= 32767.0, errc::invalid,
                  "int16 write: intensity out of range");
          const int16_t s16 = static_cast<int16_t>(r);
          std::memcpy(raw.data() + i * 2, &s16, 2);
        }
      }
  f.write(reinterpret_cast<const char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  require(f.good(), errc::io, "short write to " + path);
}

void write_volume(const Volume& v, const std::string& path) {
  write_nifti(v, path, kDtFloat32);
}

void write_volume_int16(const Volume& v, const std::string& path) {
  write_nifti(v, path, kDtInt16);
}

}  // namespace volsynth
