#include "fmrifuse/volume.hpp"

#include <cmath>

#include "fmrifuse/bytes.hpp"

namespace fmrifuse {

namespace {
constexpr char kMagic[4] = {'F', 'V', 'O', 'L'};
constexpr std::uint32_t kVersion = 1;
// Dim sanity cap; also guards the payload size computation from overflow.
constexpr std::uint64_t kMaxVoxels = std::uint64_t(1) << 31;
}  // namespace

Volume4D Volume4D::create(Eigen::Index t, Eigen::Index h, Eigen::Index w, Eigen::Index d,
                          Eigen::ArrayXd data) {
  if (t < 1 || h < 1 || w < 1 || d < 1) {
    throw ShapeError("volume dimensions must be positive, got " +
                     shape_str({t, h, w, d}));
  }
  if (data.size() != t * h * w * d) {
    throw ShapeError("volume data length " + std::to_string(data.size()) +
                     " does not match dims " + shape_str({t, h, w, d}));
  }
  if (!data.isFinite().all()) throw FormatError("volume contains non-finite values");
  Volume4D v;
  v.t = t;
  v.h = h;
  v.w = w;
  v.d = d;
  v.data = std::move(data);
  return v;
}

Volume4D load_volume(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  ByteReader reader(bytes);

  std::string magic = reader.ascii(4);
  if (magic != std::string(kMagic, 4)) {
    throw FormatError("bad magic \"" + magic + "\" at byte offset 0 in " + path.string());
  }
  std::uint32_t version = reader.u32le();
  if (version != kVersion) {
    throw FormatError("unsupported FVOL version " + std::to_string(version) +
                      " at byte offset 4");
  }
  std::uint32_t dims[4];
  for (int i = 0; i < 4; ++i) {
    std::size_t at = reader.offset();
    dims[i] = reader.u32le();
    if (dims[i] == 0) {
      throw FormatError("zero dimension at byte offset " + std::to_string(at));
    }
  }
  std::uint64_t voxels = std::uint64_t(dims[0]) * dims[1] * dims[2] * dims[3];
  if (voxels > kMaxVoxels) {
    throw FormatError("dimension overflow (" + std::to_string(voxels) +
                      " voxels) declared at byte offset 8");
  }
  if (reader.remaining() < voxels * 4) {
    throw FormatError("truncated payload: expected " + std::to_string(voxels * 4) +
                      " bytes at byte offset " + std::to_string(reader.offset()) + ", have " +
                      std::to_string(reader.remaining()));
  }
  Eigen::ArrayXd data(static_cast<Eigen::Index>(voxels));
  for (std::uint64_t i = 0; i < voxels; ++i) {
    float f = reader.f32le();
    if (!std::isfinite(f)) {
      throw FormatError("non-finite voxel at byte offset " + std::to_string(reader.offset() - 4));
    }
    data(static_cast<Eigen::Index>(i)) = double(f);
  }
  return Volume4D::create(dims[0], dims[1], dims[2], dims[3], std::move(data));
}

void save_volume(const Volume4D& v, const std::filesystem::path& path) {
  ByteWriter writer;
  writer.ascii(std::string(kMagic, 4));
  writer.u32le(kVersion);
  writer.u32le(std::uint32_t(v.t));
  writer.u32le(std::uint32_t(v.h));
  writer.u32le(std::uint32_t(v.w));
  writer.u32le(std::uint32_t(v.d));
  for (Eigen::Index i = 0; i < v.data.size(); ++i) {
    writer.f32le(float(v.data(i)));
  }
  write_file_atomic(path, writer.bytes());
}

TokenSequence extract_patches(const Volume4D& v, const PatchSpec& spec) {
  if (spec.pt < 1 || spec.ph < 1 || spec.pw < 1 || spec.pd < 1) {
    throw ConfigError("patch dimensions must be positive");
  }
  const char* axes = "thwd";
  const Eigen::Index vol_dims[4] = {v.t, v.h, v.w, v.d};
  const Eigen::Index patch_dims[4] = {spec.pt, spec.ph, spec.pw, spec.pd};
  for (int a = 0; a < 4; ++a) {
    if (vol_dims[a] % patch_dims[a] != 0) {
      throw ConfigError(std::string("patch axis '") + axes[a] + "' (" +
                        std::to_string(patch_dims[a]) + ") does not divide volume dimension " +
                        std::to_string(vol_dims[a]));
    }
  }

  const Eigen::Index bt = v.t / spec.pt, bh = v.h / spec.ph, bw = v.w / spec.pw,
                     bd = v.d / spec.pd;
  const Eigen::Index count = bt * bh * bw * bd;
  const Eigen::Index width = spec.width();

  TokenSequence tokens;
  tokens.kind = TokenKind::fmri;
  tokens.values.resize(count, width);
  Eigen::Index row = 0;
  for (Eigen::Index tb = 0; tb < bt; ++tb) {
    for (Eigen::Index hb = 0; hb < bh; ++hb) {
      for (Eigen::Index wb = 0; wb < bw; ++wb) {
        for (Eigen::Index db = 0; db < bd; ++db, ++row) {
          Eigen::Index col = 0;
          for (Eigen::Index ti = 0; ti < spec.pt; ++ti) {
            for (Eigen::Index hi = 0; hi < spec.ph; ++hi) {
              for (Eigen::Index wi = 0; wi < spec.pw; ++wi) {
                for (Eigen::Index di = 0; di < spec.pd; ++di, ++col) {
                  tokens.values(row, col) = v.at(tb * spec.pt + ti, hb * spec.ph + hi,
                                                 wb * spec.pw + wi, db * spec.pd + di);
                }
              }
            }
          }
        }
      }
    }
  }
  return tokens;
}

}  // namespace fmrifuse
