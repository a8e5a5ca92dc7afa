#pragma once

#include "fmrifuse/common.hpp"

namespace fmrifuse {

enum class TokenKind { fmri, metadata };

// Pre-embedding token matrix: one row per flattened fMRI patch or per
// encoded metadata attribute.
struct TokenSequence {
  TokenKind kind = TokenKind::fmri;
  MatrixRM values;  // count x width

  Eigen::Index count() const { return values.rows(); }
  Eigen::Index width() const { return values.cols(); }
};

}  // namespace fmrifuse
