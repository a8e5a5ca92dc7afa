#include "fmrifuse/dicom.hpp"

#include <array>
#include <cstdlib>
#include <optional>

#include "fmrifuse/bytes.hpp"

namespace fmrifuse {

namespace {

constexpr std::size_t kPreambleSize = 128;

constexpr std::array<const char*, 31> kKnownVrs = {
    "AE", "AS", "AT", "CS", "DA", "DS", "DT", "FL", "FD", "IS", "LO",
    "LT", "OB", "OD", "OF", "OL", "OW", "PN", "SH", "SL", "SQ", "SS",
    "ST", "TM", "UC", "UI", "UL", "UN", "UR", "US", "UT"};

bool vr_known(const std::string& vr) {
  for (const char* known : kKnownVrs) {
    if (vr == known) return true;
  }
  return false;
}

// VRs whose headers carry a 2-byte reserved field and a 32-bit length.
bool vr_long_form(const std::string& vr) {
  return vr == "OB" || vr == "OD" || vr == "OF" || vr == "OL" || vr == "OW" || vr == "SQ" ||
         vr == "UC" || vr == "UN" || vr == "UR" || vr == "UT";
}

bool vr_text(const std::string& vr) {
  return vr == "AE" || vr == "AS" || vr == "CS" || vr == "DA" || vr == "DS" || vr == "DT" ||
         vr == "IS" || vr == "LO" || vr == "LT" || vr == "PN" || vr == "SH" || vr == "ST" ||
         vr == "TM" || vr == "UI";
}

constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

struct ElementHeader {
  DicomTag tag;
  std::string vr;
  std::uint32_t length = 0;
  std::size_t header_offset = 0;
};

std::string trim_padding(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

ElementHeader read_header(ByteReader& reader) {
  ElementHeader h;
  h.header_offset = reader.offset();
  h.tag.group = reader.u16le();
  h.tag.element = reader.u16le();
  h.vr = reader.ascii(2);
  if (!vr_known(h.vr)) {
    throw FormatError("unknown VR \"" + h.vr + "\" for tag (" + h.tag.str() +
                      ") at byte offset " + std::to_string(h.header_offset + 4));
  }
  if (vr_long_form(h.vr)) {
    reader.skip(2);
    h.length = reader.u32le();
  } else {
    h.length = reader.u16le();
  }
  if (h.length != kUndefinedLength && h.length % 2 != 0) {
    throw FormatError("odd value length " + std::to_string(h.length) + " for tag (" +
                      h.tag.str() + ") at byte offset " + std::to_string(h.header_offset));
  }
  return h;
}

bool at_tag(ByteReader& reader, std::uint16_t group, std::uint16_t element) {
  if (reader.remaining() < 4) return false;
  std::size_t mark = reader.offset();
  std::uint16_t g = reader.u16le();
  std::uint16_t e = reader.u16le();
  reader.seek(mark);
  return g == group && e == element;
}

void skip_element_body(ByteReader& reader, const ElementHeader& h);

// Scans items until the sequence delimitation item (FFFE,E0DD).
void skip_undefined_sequence(ByteReader& reader, const std::string& vr) {
  for (;;) {
    std::size_t at = reader.offset();
    std::uint16_t group = reader.u16le();
    std::uint16_t element = reader.u16le();
    std::uint32_t length = reader.u32le();
    if (group == 0xFFFE && element == 0xE0DD) return;
    if (group != 0xFFFE || element != 0xE000) {
      throw FormatError("expected sequence item tag, got (" + DicomTag{group, element}.str() +
                        ") at byte offset " + std::to_string(at));
    }
    if (length != kUndefinedLength) {
      reader.skip(length);
    } else if (vr == "SQ") {
      // Undefined-length item: parse nested elements until (FFFE,E00D).
      while (!at_tag(reader, 0xFFFE, 0xE00D)) {
        ElementHeader nested = read_header(reader);
        skip_element_body(reader, nested);
      }
      reader.skip(4);            // item delimitation tag
      reader.u32le();            // its zero length
    } else {
      throw FormatError("undefined-length item inside non-SQ element at byte offset " +
                        std::to_string(at));
    }
  }
}

void skip_element_body(ByteReader& reader, const ElementHeader& h) {
  if (h.length == kUndefinedLength) {
    if (h.vr != "SQ" && h.vr != "UN" && h.vr != "OB" && h.vr != "OW") {
      throw FormatError("undefined length on VR " + h.vr + " at byte offset " +
                        std::to_string(h.header_offset));
    }
    skip_undefined_sequence(reader, h.vr == "UN" ? "SQ" : h.vr);
  } else {
    reader.skip(h.length);
  }
}

// "nnnY|M|W|D" converted to years.
std::optional<double> parse_age_string(const std::string& raw) {
  std::string s = trim_padding(raw);
  if (s.size() < 2) return std::nullopt;
  char unit = s.back();
  std::string digits = s.substr(0, s.size() - 1);
  if (digits.empty()) return std::nullopt;
  for (char c : digits) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  double n = std::strtod(digits.c_str(), nullptr);
  switch (unit) {
    case 'Y':
      return n;
    case 'M':
      return n / 12.0;
    case 'W':
      return n / 52.18;
    case 'D':
      return n / 365.25;
    default:
      return std::nullopt;
  }
}

std::optional<double> parse_decimal_string(const std::string& raw) {
  std::string s = trim_padding(raw);
  // Multi-valued DS: take the first component.
  std::size_t slash = s.find('\\');
  if (slash != std::string::npos) s = trim_padding(s.substr(0, slash));
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

void extract_value(const ElementHeader& h, const std::string& raw, const AttributeSpec& attr,
                   MetadataRecord& record) {
  AttributeValue& slot = record.values[attr.name];
  if (attr.kind == AttributeKind::numeric) {
    std::optional<double> value;
    if (h.vr == "AS") {
      value = parse_age_string(raw);
    } else if (h.vr == "DS" || h.vr == "IS") {
      value = parse_decimal_string(raw);
    }
    if (!value) {
      record.warnings.push_back("attribute \"" + attr.name + "\" (" + attr.tag.str() +
                                "): cannot read value \"" + trim_padding(raw) + "\" as " + h.vr +
                                "; treated as missing");
      return;
    }
    slot.number = value;
  } else {
    if (!vr_text(h.vr)) {
      record.warnings.push_back("attribute \"" + attr.name + "\" (" + attr.tag.str() +
                                "): unexpected VR " + h.vr + "; treated as missing");
      return;
    }
    slot.category = trim_padding(raw);
  }
  slot.observed = true;
}

}  // namespace

MetadataRecord parse_dicom(std::span<const std::uint8_t> bytes, const MetadataSchema& schema) {
  if (bytes.size() < kPreambleSize + 4) {
    throw NotDicomError("stream of " + std::to_string(bytes.size()) +
                        " bytes is too short for a DICOM Part-10 file");
  }
  ByteReader reader(bytes);
  reader.skip(kPreambleSize);
  std::string magic = reader.ascii(4);
  if (magic != "DICM") {
    throw NotDicomError("missing \"DICM\" magic at byte offset 128 (found \"" + magic + "\")");
  }

  auto peek_group = [&reader]() -> std::optional<std::uint16_t> {
    if (reader.remaining() < 4) return std::nullopt;
    std::size_t mark = reader.offset();
    std::uint16_t g = reader.u16le();
    reader.seek(mark);
    return g;
  };

  // File meta group (0002), always Explicit VR Little Endian.
  std::optional<std::string> transfer_syntax;
  while (peek_group() == std::uint16_t{0x0002}) {
    ElementHeader h = read_header(reader);
    if (h.length == kUndefinedLength) {
      throw FormatError("undefined length in file meta group at byte offset " +
                        std::to_string(h.header_offset));
    }
    if (h.tag == DicomTag{0x0002, 0x0010}) {
      transfer_syntax = trim_padding(reader.ascii(h.length));
    } else {
      reader.skip(h.length);
    }
  }
  if (!transfer_syntax) {
    throw UnsupportedSyntaxError("no TransferSyntaxUID (0002,0010) in file meta group");
  }
  if (*transfer_syntax != kExplicitVrLittleEndian) {
    throw UnsupportedSyntaxError("unsupported transfer syntax UID \"" + *transfer_syntax +
                                 "\" (only " + std::string(kExplicitVrLittleEndian) +
                                 " is supported)");
  }

  MetadataRecord record = empty_record(schema);
  record.source = MetadataRecord::Source::dicom;

  DicomTag previous{0x0002, 0xFFFF};
  while (!reader.eof()) {
    ElementHeader h = read_header(reader);
    if (h.tag <= previous) {
      throw FormatError("tags out of ascending order: (" + h.tag.str() + ") after (" +
                        previous.str() + ") at byte offset " + std::to_string(h.header_offset));
    }
    previous = h.tag;

    const AttributeSpec* attr = schema.find_tag(h.tag);
    if (attr != nullptr && h.length != kUndefinedLength) {
      std::string raw = reader.ascii(h.length);
      extract_value(h, raw, *attr, record);
    } else {
      skip_element_body(reader, h);
    }
  }

  const AttributeSpec* manufacturer = schema.find("manufacturer");
  if (manufacturer != nullptr) {
    const AttributeValue& v = record.values[manufacturer->name];
    if (v.category.has_value()) record.domain_hint = v.category;
  }
  return record;
}

}  // namespace fmrifuse
