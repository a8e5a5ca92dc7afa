#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fmrifuse/common.hpp"
#include "fmrifuse/tokens.hpp"

namespace fmrifuse {

struct DicomTag {
  std::uint16_t group = 0;
  std::uint16_t element = 0;
  auto operator<=>(const DicomTag&) const = default;
  std::string str() const;
};

enum class AttributeKind { numeric, categorical };

struct AttributeSpec {
  std::string name;
  DicomTag tag;
  AttributeKind kind = AttributeKind::numeric;
  std::vector<std::string> categories;  // categorical only; must include "unknown"
  // Slot in the global feature layout; filled in by MetadataSchema.
  Eigen::Index slot_offset = 0;
  Eigen::Index slot_width = 0;
};

// Ordered attribute list plus the disjoint slot layout it induces. Numeric
// slots are [value, presence]; categorical slots are one-hot ++ [presence].
class MetadataSchema {
 public:
  explicit MetadataSchema(std::vector<AttributeSpec> attributes);

  static MetadataSchema default_schema();
  static MetadataSchema from_json(const std::string& text);
  std::string to_json() const;

  const std::vector<AttributeSpec>& attributes() const { return attributes_; }
  Eigen::Index count() const { return static_cast<Eigen::Index>(attributes_.size()); }  // K
  Eigen::Index total_width() const { return total_width_; }                             // f

  const AttributeSpec* find(std::string_view name) const;
  const AttributeSpec* find_tag(DicomTag tag) const;

 private:
  std::vector<AttributeSpec> attributes_;
  Eigen::Index total_width_ = 0;
};

struct AttributeValue {
  std::optional<double> number;
  std::optional<std::string> category;
  bool observed = false;  // true only for values read from the source file

  bool missing() const { return !number.has_value() && !category.has_value(); }
};

struct MetadataRecord {
  enum class Source { dicom, json };
  Source source = Source::json;
  std::map<std::string, AttributeValue> values;  // one entry per schema attribute
  std::vector<std::string> warnings;
  std::optional<std::string> domain_hint;  // manufacturer, when present

  const AttributeValue& at(std::string_view name) const;
};

// Per-attribute normalization statistics, fitted on the training split only.
struct NormStats {
  struct Moments {
    double mean = 0.0;
    double stddev = 1.0;  // floored at 1e-8
  };
  std::map<std::string, Moments> numeric;

  std::string to_json() const;
  static NormStats from_json(const std::string& text);
};

MetadataRecord empty_record(const MetadataSchema& schema);

// Flat JSON object keyed by attribute name. Unknown keys are ignored;
// absent keys yield missing attributes.
MetadataRecord parse_json_meta(const std::string& text, const MetadataSchema& schema);

// Population mean/std over the non-missing values of each numeric attribute.
NormStats fit_normalization(std::span<const MetadataRecord> records, const MetadataSchema& schema);

// Missing numerics take the training mean, missing categoricals the
// "unknown" category; both keep observed=false so the encoding's presence
// flag distinguishes imputed from observed values.
MetadataRecord impute_missing(const MetadataRecord& record, const NormStats& stats,
                              const MetadataSchema& schema);

// K tokens of width f, one per attribute, zero outside the attribute's slot.
TokenSequence encode_record(const MetadataRecord& record, const NormStats& stats,
                            const MetadataSchema& schema);

}  // namespace fmrifuse
