// test_volume.cpp - volume type, NIfTI subset I/O, normalization, resampling,
// patch extraction/stitching, phantom generation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "augment.hpp"
#include "volume.hpp"

using namespace volsynth;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "volsynth_test_volume";
  fs::create_directories(dir);
  return (dir / name).string();
}

Volume random_volume(std::array<int64_t, 3> shape, uint64_t seed,
                     float lo = 0.0f, float hi = 1.0f) {
  Volume v(shape);
  Rng rng(seed);
  for (auto& f : v.data) f = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

// Independent oracle: nearest-rank percentile over a full sort, per the
// published definition (rank = ceil(p/100 * n)).
double oracle_percentile(std::vector<float> vals, double pct) {
  std::sort(vals.begin(), vals.end());
  const double n = static_cast<double>(vals.size());
  size_t rank = static_cast<size_t>(std::ceil(pct / 100.0 * n));
  if (rank < 1) rank = 1;
  if (rank > vals.size()) rank = vals.size();
  return vals[rank - 1];
}

// Independent third-party-style NIfTI writer: bytes assembled from the
// published NIfTI-1 field offsets, sharing no code with the implementation.
void write_reference_nifti(const std::string& path, int nx, int ny, int nz,
                           float spacing, const std::vector<float>& data_xyz,
                           int16_t datatype, float scl_slope, float scl_inter) {
  std::vector<uint8_t> hdr(352, 0);
  auto put32 = [&](int off, uint32_t v) { std::memcpy(&hdr[off], &v, 4); };
  auto put16 = [&](int off, uint16_t v) { std::memcpy(&hdr[off], &v, 2); };
  auto putf = [&](int off, float v) { std::memcpy(&hdr[off], &v, 4); };
  put32(0, 348);                       // sizeof_hdr
  put16(40, 3);                        // dim[0]
  put16(42, static_cast<uint16_t>(nx));
  put16(44, static_cast<uint16_t>(ny));
  put16(46, static_cast<uint16_t>(nz));
  put16(70, static_cast<uint16_t>(datatype));
  put16(72, datatype == 16 ? 32 : 16);  // bitpix
  putf(80, spacing);                    // pixdim[1..3]
  putf(84, spacing);
  putf(88, spacing);
  putf(108, 352.0f);  // vox_offset
  putf(112, scl_slope);
  putf(116, scl_inter);
  hdr[344] = 'n';
  hdr[345] = '+';
  hdr[346] = '1';
  hdr[347] = 0;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(hdr.data()), 352);
  if (datatype == 16) {
    f.write(reinterpret_cast<const char*>(data_xyz.data()),
            static_cast<std::streamsize>(data_xyz.size() * 4));
  } else {
    for (const float v : data_xyz) {
      const int16_t s = static_cast<int16_t>(v);
      f.write(reinterpret_cast<const char*>(&s), 2);
    }
  }
}

}  // namespace

TEST_CASE("nifti round trip is bit exact") {
  Volume v = random_volume({9, 7, 5}, 42, -3.0f, 11.0f);
  v.spacing_mm = {0.7f, 0.7f, 0.7f};
  v.origin_mm = {-12.5f, 3.25f, 90.0f};
  const std::string path = tmp_path("roundtrip.nii");
  write_volume(v, path);
  const Volume r = read_volume(path);
  CHECK(r.shape == v.shape);
  CHECK(r.spacing_mm == v.spacing_mm);  // 0.7mm survives exactly
  CHECK(r.origin_mm == v.origin_mm);
  CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
}

TEST_CASE("nifti int16 round trip is exact for integral data") {
  Volume v({4, 4, 4});
  for (size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = static_cast<float>(static_cast<int>(i) - 30);
  const std::string path = tmp_path("int16.nii");
  write_volume_int16(v, path);
  const Volume r = read_volume(path);
  CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
}

TEST_CASE("nifti error paths") {
  const std::string path = tmp_path("bad.nii");

  SUBCASE("wrong magic -> format error") {
    Volume v = random_volume({4, 4, 4}, 1);
    write_volume(v, path);
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(344);
    f.write("XXX", 3);
    f.close();
    CHECK_THROWS_WITH_AS(read_volume(path), doctest::Contains("magic"), Error);
    try {
      read_volume(path);
    } catch (const Error& e) {
      CHECK(e.code() == errc::format);
    }
  }

  SUBCASE("unsupported datatype code") {
    Volume v = random_volume({4, 4, 4}, 1);
    write_volume(v, path);
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    const int16_t dt = 64;  // float64: outside the subset
    f.seekp(70);
    f.write(reinterpret_cast<const char*>(&dt), 2);
    f.close();
    try {
      read_volume(path);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == errc::unsupported);
    }
  }

  SUBCASE("truncated payload -> corrupt") {
    Volume v = random_volume({8, 8, 8}, 1);
    write_volume(v, path);
    fs::resize_file(path, 352 + 100);
    try {
      read_volume(path);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == errc::corrupt);
    }
  }

  SUBCASE("big endian -> unsupported") {
    Volume v = random_volume({4, 4, 4}, 1);
    write_volume(v, path);
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    const uint32_t swapped = __builtin_bswap32(348);
    f.seekp(0);
    f.write(reinterpret_cast<const char*>(&swapped), 4);
    f.close();
    try {
      read_volume(path);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == errc::unsupported);
    }
  }

  SUBCASE("NaN volume rejected on write") {
    Volume v = random_volume({4, 4, 4}, 1);
    v.data[10] = std::nanf("");
    try {
      write_volume(v, path);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == errc::invalid);
    }
  }
}

TEST_CASE("third-party nifti bytes decode to matching voxel values") {
  // 16^3 ramp phantom written by the independent byte-level writer above.
  const int n = 16;
  std::vector<float> disk(n * n * n);  // x fastest on disk
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        disk[(z * n + y) * n + x] = static_cast<float>(x + 10 * y + 100 * z);

  SUBCASE("float32") {
    const std::string path = tmp_path("thirdparty_f32.nii");
    write_reference_nifti(path, n, n, n, 0.8f, disk, 16, 0.0f, 0.0f);
    const Volume v = read_volume(path);
    CHECK(v.shape == std::array<int64_t, 3>{n, n, n});
    CHECK(v.spacing_mm[0] == 0.8f);
    for (int x = 0; x < n; ++x)
      for (int y = 0; y < n; ++y)
        for (int z = 0; z < n; ++z)
          CHECK(v.at(x, y, z) == static_cast<float>(x + 10 * y + 100 * z));
  }

  SUBCASE("int16 with scl_slope applied on read") {
    const std::string path = tmp_path("thirdparty_i16.nii");
    write_reference_nifti(path, n, n, n, 1.0f, disk, 4, 0.5f, 10.0f);
    const Volume v = read_volume(path);
    for (int x = 0; x < n; ++x)
      for (int y = 0; y < n; ++y)
        for (int z = 0; z < n; ++z) {
          const float raw = static_cast<float>(x + 10 * y + 100 * z);
          CHECK(v.at(x, y, z) == 0.5f * raw + 10.0f);
        }
  }
}

TEST_CASE("normalize_intensity") {
  SUBCASE("constant volume maps to zeros") {
    Volume v({8, 8, 8}, 3.5f);
    const Volume n = normalize_intensity(v, 0, 100);
    for (const float f : n.data) CHECK(f == 0.0f);
  }

  SUBCASE("volume already spanning [0,1] is unchanged") {
    Volume v = random_volume({8, 8, 8}, 5);
    v.data[0] = 0.0f;
    v.data[1] = 1.0f;
    const Volume n = normalize_intensity(v, 0, 100);
    for (size_t i = 0; i < v.data.size(); ++i)
      CHECK(std::abs(n.data[i] - v.data[i]) < 1e-12);
  }

  SUBCASE("linear ramp, inner clips, against the brute-force oracle") {
    // Odd voxel count so the 50th-percentile rank sits exactly mid-ramp.
    Volume v({17, 17, 17});
    const int64_t n = v.numel();
    for (int64_t i = 0; i < n; ++i)
      v.data[i] = static_cast<float>(1000.0 * i / (n - 1));
    const Volume out = normalize_intensity(v, 0.5, 99.5);

    const double lo = oracle_percentile(v.data, 0.5);
    const double hi = oracle_percentile(v.data, 99.5);
    double got_min = 1e9, got_max = -1e9;
    for (const float f : out.data) {
      got_min = std::min(got_min, (double)f);
      got_max = std::max(got_max, (double)f);
    }
    CHECK(got_min == 0.0);
    CHECK(got_max == 1.0);
    const double med_expected = (oracle_percentile(v.data, 50.0) - lo) / (hi - lo);
    const double med_got = oracle_percentile(out.data, 50.0);
    CHECK(std::abs(med_got - med_expected) < 1e-6);
    CHECK(std::abs(med_got - 0.5) < 1e-6);  // frozen from the oracle
  }

  SUBCASE("output within [0,1] and idempotent within 1e-12") {
    Volume v = random_volume({12, 12, 12}, 7, -50.0f, 150.0f);
    for (const double clips : {0.0, 0.5, 5.0}) {
      const Volume once = normalize_intensity(v, clips, 100.0 - clips);
      for (const float f : once.data) {
        CHECK(f >= 0.0f);
        CHECK(f <= 1.0f);
      }
      const Volume twice = normalize_intensity(once, clips, 100.0 - clips);
      for (size_t i = 0; i < once.data.size(); ++i)
        CHECK(std::abs(twice.data[i] - once.data[i]) <= 1e-12);
    }
  }

  SUBCASE("bad clip order rejected") {
    Volume v({4, 4, 4}, 1.0f);
    CHECK_THROWS_AS(normalize_intensity(v, 60, 40), Error);
  }
}

TEST_CASE("resample_trilinear") {
  SUBCASE("identity shape is exact") {
    Volume v = random_volume({9, 8, 7}, 11);
    const Volume r = resample_trilinear(v, v.shape);
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
  }

  SUBCASE("constant volume stays constant at any target") {
    Volume v({8, 8, 8}, 0.37f);
    for (const auto target : {std::array<int64_t, 3>{3, 5, 9},
                              std::array<int64_t, 3>{16, 16, 16},
                              std::array<int64_t, 3>{1, 1, 1}}) {
      const Volume r = resample_trilinear(v, target);
      for (const float f : r.data) CHECK(f == doctest::Approx(0.37f).epsilon(1e-6));
    }
  }

  SUBCASE("down-up round trip on a smooth separable ramp") {
    // Oracle: direct evaluation of the ramp at the resampled coordinates.
    Volume v({32, 32, 32});
    for (int64_t x = 0; x < 32; ++x)
      for (int64_t y = 0; y < 32; ++y)
        for (int64_t z = 0; z < 32; ++z)
          v.at(x, y, z) = static_cast<float>((x + y + z) / 93.0);
    const Volume down = resample_trilinear(v, {16, 16, 16});
    const Volume up = resample_trilinear(down, {32, 32, 32});
    double max_err = 0.0;
    for (size_t i = 0; i < v.data.size(); ++i)
      max_err = std::max(max_err, std::abs((double)up.data[i] - v.data[i]));
    CHECK(max_err < 0.02);  // of the unit intensity range
  }

  SUBCASE("spacing rescales with the physical extent") {
    Volume v({16, 16, 16}, 0.0f, {1.0f, 1.0f, 1.0f});
    const Volume r = resample_trilinear(v, {8, 8, 8});
    CHECK(r.spacing_mm[0] == doctest::Approx(2.0f));
  }
}

TEST_CASE("extract_patches / stitch_patches") {
  SUBCASE("128^3 with 64^3 patches at stride 64 gives exactly 8") {
    Volume v = random_volume({128, 128, 128}, 3);
    auto [layout, patches] = extract_patches(v, {64, 64, 64}, {64, 64, 64});
    CHECK(patches.size() == 8);
  }

  SUBCASE("100^3 with 64^3 patches clamps the last position to 36") {
    Volume v({100, 100, 100});
    auto [layout, patches] = extract_patches(v, {64, 64, 64}, {64, 64, 64});
    CHECK(patches.size() == 8);
    CHECK(layout.positions.back() == std::array<int64_t, 3>{36, 36, 36});
  }

  SUBCASE("patch larger than volume is a size error") {
    Volume v({64, 64, 64});
    CHECK_THROWS_AS(extract_patches(v, {65, 65, 65}, {1, 1, 1}), Error);
  }

  SUBCASE("stitch(extract(V)) is exact for several strides") {
    Volume v = random_volume({48, 40, 33}, 17);
    for (const auto stride : {std::array<int64_t, 3>{16, 16, 16},
                              std::array<int64_t, 3>{8, 8, 8},
                              std::array<int64_t, 3>{5, 7, 3}}) {
      auto [layout, patches] = extract_patches(v, {16, 16, 16}, stride);
      const Volume r = stitch_patches(layout, patches, v.shape);
      for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
    }
  }

  SUBCASE("two fully overlapping constant patches average") {
    PatchLayout layout;
    layout.patch_shape = {4, 4, 4};
    layout.stride = {1, 1, 1};
    layout.source_shape = {4, 4, 4};
    layout.positions = {{0, 0, 0}, {0, 0, 0}};
    std::vector<std::vector<float>> patches{std::vector<float>(64, 1.0f),
                                            std::vector<float>(64, 2.0f)};
    const Volume r = stitch_patches(layout, patches, {4, 4, 4});
    for (const float f : r.data) CHECK(f == 1.5f);
  }

  SUBCASE("random volume, 32^3 patches, stride 16: zero reconstruction error") {
    // Brute-force per-voxel contribution-count oracle.
    Volume v = random_volume({48, 48, 48}, 23);
    auto [layout, patches] = extract_patches(v, {32, 32, 32}, {16, 16, 16});
    std::vector<int> count(v.data.size(), 0);
    for (const auto& pos : layout.positions)
      for (int64_t x = 0; x < 32; ++x)
        for (int64_t y = 0; y < 32; ++y)
          for (int64_t z = 0; z < 32; ++z)
            count[v.index(pos[0] + x, pos[1] + y, pos[2] + z)] += 1;
    for (const int c : count) CHECK(c >= 1);
    const Volume r = stitch_patches(layout, patches, v.shape);
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
  }
}

TEST_CASE("make_phantom_pair") {
  SUBCASE("deterministic per seed") {
    const PairedSample a = make_phantom_pair(7, {32, 32, 32}, 3);
    const PairedSample b = make_phantom_pair(7, {32, 32, 32}, 3);
    CHECK(a.low_field.data == b.low_field.data);
    CHECK(a.high_field.data == b.high_field.data);
    const PairedSample c = make_phantom_pair(8, {32, 32, 32}, 3);
    CHECK(a.high_field.data != c.high_field.data);
  }

  SUBCASE("members share one grid and stay in [0,1]") {
    const PairedSample p = make_phantom_pair(1, {24, 20, 28}, 2);
    p.validate();
    for (const float f : p.low_field.data) {
      CHECK(f >= 0.0f);
      CHECK(f <= 1.0f);
    }
  }

  SUBCASE("lesion_count 0 differs from high only by blur/contrast/noise") {
    const PairedSample p = make_phantom_pair(3, {32, 32, 32}, 0);
    // No bright lesion voxels: the high-field maximum band value stays at the
    // WM plateau after normalization, and intensities form <= 4 bands.
    std::vector<float> uniq(p.high_field.data);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    CHECK(uniq.size() <= 4);
  }

  SUBCASE("shape below 16 rejected") {
    CHECK_THROWS_AS(make_phantom_pair(1, {8, 32, 32}, 0), Error);
  }
}
