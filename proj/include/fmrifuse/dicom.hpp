#pragma once

#include <cstdint>
#include <span>

#include "fmrifuse/metadata.hpp"

namespace fmrifuse {

// Stream is not a DICOM Part-10 file (short, bad preamble, or bad magic).
struct NotDicomError : FormatError {
  using FormatError::FormatError;
};

// Transfer syntax other than Explicit VR Little Endian.
struct UnsupportedSyntaxError : FormatError {
  using FormatError::FormatError;
};

inline constexpr const char* kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

// Parses a DICOM Part-10 byte stream (Explicit VR Little Endian only) and
// extracts the schema attributes. Unknown elements are skipped by their
// declared lengths; undefined-length sequences are skipped by item and
// delimiter scanning. Absent tags yield missing attributes; malformed
// attribute values are recorded as missing with a warning.
MetadataRecord parse_dicom(std::span<const std::uint8_t> bytes, const MetadataSchema& schema);

}  // namespace fmrifuse
