#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fmrifuse/bytes.hpp"
#include "fmrifuse/volume.hpp"
#include "oracles.hpp"

using namespace fmrifuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "fmrifuse_volume_tests";
  fs::create_directories(dir);
  return dir;
}

Volume4D random_volume(Eigen::Index t, Eigen::Index h, Eigen::Index w, Eigen::Index d,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::ArrayXd data(t * h * w * d);
  for (Eigen::Index i = 0; i < data.size(); ++i) data(i) = dist(rng);
  return Volume4D::create(t, h, w, d, std::move(data));
}

// Test-side inverse of extract_patches: scatters token rows back into a
// volume, so the bijection can be checked without touching the library path.
Volume4D reconstruct_from_patches(const TokenSequence& tokens, Eigen::Index t, Eigen::Index h,
                                  Eigen::Index w, Eigen::Index d, const PatchSpec& spec) {
  Eigen::ArrayXd data(t * h * w * d);
  const Eigen::Index bh = h / spec.ph, bw = w / spec.pw, bd = d / spec.pd;
  for (Eigen::Index row = 0; row < tokens.count(); ++row) {
    Eigen::Index rest = row;
    const Eigen::Index db = rest % bd;
    rest /= bd;
    const Eigen::Index wb = rest % bw;
    rest /= bw;
    const Eigen::Index hb = rest % bh;
    const Eigen::Index tb = rest / bh;
    Eigen::Index col = 0;
    for (Eigen::Index ti = 0; ti < spec.pt; ++ti)
      for (Eigen::Index hi = 0; hi < spec.ph; ++hi)
        for (Eigen::Index wi = 0; wi < spec.pw; ++wi)
          for (Eigen::Index di = 0; di < spec.pd; ++di, ++col) {
            Eigen::Index flat = (((tb * spec.pt + ti) * h + hb * spec.ph + hi) * w + wb * spec.pw +
                                 wi) *
                                    d +
                                db * spec.pd + di;
            data(flat) = tokens.values(row, col);
          }
  }
  return Volume4D::create(t, h, w, d, std::move(data));
}

}  // namespace

TEST_SUITE_BEGIN("volume");

TEST_CASE("FVOL round trip reads back the written values") {
  Eigen::ArrayXd data(16);
  for (int i = 0; i < 16; ++i) data(i) = i;
  Volume4D v = Volume4D::create(2, 2, 2, 2, data);
  fs::path path = temp_dir() / "round.fvol";
  save_volume(v, path);
  Volume4D loaded = load_volume(path);
  CHECK(loaded.t == 2);
  CHECK(loaded.data(0) == 0.0);
  CHECK(loaded.data(15) == 15.0);
}

TEST_CASE("FVOL round trip of a random volume is exact to float32") {
  Volume4D v = random_volume(4, 8, 8, 8, 99);
  fs::path path = temp_dir() / "random.fvol";
  save_volume(v, path);
  Volume4D loaded = load_volume(path);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    CHECK(loaded.data(i) == double(float(v.data(i))));
  }
}

TEST_CASE("truncated payload is a format error") {
  Volume4D v = random_volume(2, 4, 4, 4, 7);
  fs::path path = temp_dir() / "short.fvol";
  save_volume(v, path);
  auto bytes = read_file(path);
  bytes.resize(bytes.size() - 5);
  write_file_atomic(path, std::span<const std::uint8_t>(bytes));
  CHECK_THROWS_AS(load_volume(path), FormatError);
}

TEST_CASE("zero dimension is rejected with its byte offset") {
  ByteWriter writer;
  writer.ascii("FVOL");
  writer.u32le(1);
  writer.u32le(0);
  writer.u32le(4);
  writer.u32le(4);
  writer.u32le(4);
  fs::path path = temp_dir() / "zerodim.fvol";
  write_file_atomic(path, writer.bytes());
  CHECK_THROWS_WITH_AS(load_volume(path), doctest::Contains("byte offset 8"), FormatError);
}

TEST_CASE("bad magic is rejected") {
  ByteWriter writer;
  writer.ascii("ABCD");
  writer.u32le(1);
  fs::path path = temp_dir() / "badmagic.fvol";
  write_file_atomic(path, writer.bytes());
  CHECK_THROWS_WITH_AS(load_volume(path), doctest::Contains("magic"), FormatError);
}

TEST_CASE("flipping a payload byte changes the loaded data or fails") {
  Volume4D v = random_volume(2, 4, 4, 4, 21);
  fs::path path = temp_dir() / "flip.fvol";
  save_volume(v, path);
  auto bytes = read_file(path);
  bytes[24 + 10] ^= 0x40;  // inside the first voxels of the payload
  write_file_atomic(path, std::span<const std::uint8_t>(bytes));
  bool differs = false;
  try {
    Volume4D loaded = load_volume(path);
    differs = (loaded.data != v.data).any();
  } catch (const FormatError&) {
    differs = true;
  }
  CHECK(differs);
}

TEST_CASE("saving to an unwritable path is an I/O error") {
  Volume4D v = random_volume(1, 2, 2, 2, 3);
  CHECK_THROWS_AS(save_volume(v, "/nonexistent_dir_zz/x.fvol"), IoError);
}

TEST_CASE("patch counts follow the tiling arithmetic") {
  Volume4D v = random_volume(8, 16, 16, 16, 5);
  TokenSequence tokens = extract_patches(v, PatchSpec{2, 4, 4, 4});
  CHECK(tokens.count() == 256);
  CHECK(tokens.width() == 128);
}

TEST_CASE("degenerate patching flattens the whole volume") {
  Volume4D v = random_volume(2, 3, 4, 5, 8);
  TokenSequence tokens = extract_patches(v, PatchSpec{2, 3, 4, 5});
  CHECK(tokens.count() == 1);
  for (Eigen::Index i = 0; i < v.size(); ++i) CHECK(tokens.values(0, i) == v.data(i));
}

TEST_CASE("constant volume yields constant tokens") {
  Volume4D v = Volume4D::create(2, 4, 4, 4, Eigen::ArrayXd::Constant(128, 3.5));
  TokenSequence tokens = extract_patches(v, PatchSpec{1, 2, 2, 2});
  CHECK((tokens.values.array() == 3.5).all());
}

TEST_CASE("non-divisible patch spec names the axis") {
  Volume4D v = random_volume(4, 6, 6, 6, 2);
  CHECK_THROWS_WITH_AS(extract_patches(v, PatchSpec{3, 2, 2, 2}), doctest::Contains("'t'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(extract_patches(v, PatchSpec{2, 4, 2, 2}), doctest::Contains("'h'"),
                       ConfigError);
}

TEST_CASE("patch extraction is a bijection") {
  std::mt19937_64 rng(123);
  const Eigen::Index dims[][4] = {{2, 4, 4, 4}, {4, 8, 6, 4}, {1, 2, 2, 2}, {6, 4, 4, 8}};
  const PatchSpec specs[] = {{1, 2, 2, 2}, {2, 4, 3, 2}, {1, 1, 1, 1}, {3, 2, 4, 2}};
  for (int c = 0; c < 4; ++c) {
    Volume4D v = random_volume(dims[c][0], dims[c][1], dims[c][2], dims[c][3], 100 + c);
    TokenSequence tokens = extract_patches(v, specs[c]);
    CHECK(tokens.count() * tokens.width() == v.size());
    Volume4D back = reconstruct_from_patches(tokens, v.t, v.h, v.w, v.d, specs[c]);
    CHECK((back.data == v.data).all());
  }
}

TEST_CASE("patch extraction is linear in the data") {
  Volume4D v = random_volume(2, 4, 4, 4, 55);
  Volume4D shifted = Volume4D::create(v.t, v.h, v.w, v.d, v.data + 2.25);
  TokenSequence a = extract_patches(v, PatchSpec{1, 2, 2, 2});
  TokenSequence b = extract_patches(shifted, PatchSpec{1, 2, 2, 2});
  CHECK(((b.values.array() - a.values.array()) == 2.25).all());
}

TEST_SUITE_END();
