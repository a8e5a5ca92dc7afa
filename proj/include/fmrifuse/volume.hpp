#pragma once

#include <filesystem>

#include "fmrifuse/common.hpp"
#include "fmrifuse/tokens.hpp"

namespace fmrifuse {

// One fMRI scan: T time points of an HxWxD grid, [t][h][w][d] row-major.
// Stored float32 on disk, promoted to float64 in memory.
struct Volume4D {
  Eigen::Index t = 0, h = 0, w = 0, d = 0;
  Eigen::ArrayXd data;

  static Volume4D create(Eigen::Index t, Eigen::Index h, Eigen::Index w, Eigen::Index d,
                         Eigen::ArrayXd data);

  Eigen::Index size() const { return t * h * w * d; }
  Eigen::Index index(Eigen::Index ti, Eigen::Index hi, Eigen::Index wi, Eigen::Index di) const {
    return ((ti * h + hi) * w + wi) * d + di;
  }
  double at(Eigen::Index ti, Eigen::Index hi, Eigen::Index wi, Eigen::Index di) const {
    return data(index(ti, hi, wi, di));
  }
};

// Patch dimensions; each must divide the matching volume dimension exactly.
struct PatchSpec {
  Eigen::Index pt = 1, ph = 1, pw = 1, pd = 1;

  Eigen::Index width() const { return pt * ph * pw * pd; }
};

// FVOL container: "FVOL" magic, u32 LE version (=1), four u32 LE dims
// T,H,W,D, then T*H*W*D float32 LE values in [t][h][w][d] row-major order.
Volume4D load_volume(const std::filesystem::path& path);
void save_volume(const Volume4D& v, const std::filesystem::path& path);

// Tiles the volume into patches and flattens each one into a token row.
// Patch order is lexicographic over (time block, h block, w block, d block);
// within a token, values keep the [t][h][w][d] row-major order of the patch.
TokenSequence extract_patches(const Volume4D& v, const PatchSpec& spec);

}  // namespace fmrifuse
