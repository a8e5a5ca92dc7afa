#include "fmrifuse/metadata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fmrifuse {

using nlohmann::json;

std::string DicomTag::str() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04x,%04x", group, element);
  return buf;
}

namespace {

DicomTag tag_from_string(const std::string& s) {
  unsigned g = 0, e = 0;
  if (std::sscanf(s.c_str(), "%4x,%4x", &g, &e) != 2 || g > 0xFFFF || e > 0xFFFF) {
    throw FormatError("invalid DICOM tag \"" + s + "\" (expected \"gggg,eeee\")");
  }
  return DicomTag{std::uint16_t(g), std::uint16_t(e)};
}

}  // namespace

MetadataSchema::MetadataSchema(std::vector<AttributeSpec> attributes)
    : attributes_(std::move(attributes)) {
  if (attributes_.empty()) throw ConfigError("metadata schema must have at least one attribute");
  Eigen::Index offset = 0;
  for (AttributeSpec& attr : attributes_) {
    if (attr.name.empty()) throw ConfigError("metadata attribute with empty name");
    if (attr.kind == AttributeKind::categorical) {
      if (attr.categories.empty()) {
        throw ConfigError("categorical attribute \"" + attr.name + "\" has no categories");
      }
      if (std::find(attr.categories.begin(), attr.categories.end(), "unknown") ==
          attr.categories.end()) {
        throw ConfigError("categorical attribute \"" + attr.name +
                          "\" must include an \"unknown\" category");
      }
      attr.slot_width = static_cast<Eigen::Index>(attr.categories.size()) + 1;
    } else {
      attr.slot_width = 2;  // value, presence
    }
    attr.slot_offset = offset;
    offset += attr.slot_width;
  }
  total_width_ = offset;
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    for (std::size_t j = i + 1; j < attributes_.size(); ++j) {
      if (attributes_[i].name == attributes_[j].name) {
        throw ConfigError("duplicate attribute name \"" + attributes_[i].name + "\"");
      }
    }
  }
}

MetadataSchema MetadataSchema::default_schema() {
  std::vector<AttributeSpec> attrs;
  attrs.push_back({"repetition_time", {0x0018, 0x0080}, AttributeKind::numeric, {}});
  attrs.push_back({"echo_time", {0x0018, 0x0081}, AttributeKind::numeric, {}});
  attrs.push_back({"field_strength", {0x0018, 0x0087}, AttributeKind::numeric, {}});
  attrs.push_back({"age", {0x0010, 0x1010}, AttributeKind::numeric, {}});
  attrs.push_back({"sex", {0x0010, 0x0040}, AttributeKind::categorical, {"M", "F", "unknown"}});
  attrs.push_back({"manufacturer",
                   {0x0008, 0x0070},
                   AttributeKind::categorical,
                   {"SIEMENS", "GE MEDICAL SYSTEMS", "Philips Medical Systems", "unknown"}});
  attrs.push_back({"model_name",
                   {0x0008, 0x1090},
                   AttributeKind::categorical,
                   {"Prisma", "Signa", "Achieva", "unknown"}});
  return MetadataSchema(std::move(attrs));
}

MetadataSchema MetadataSchema::from_json(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("attributes") ||
      !doc["attributes"].is_array()) {
    throw FormatError("schema JSON must be an object with an \"attributes\" array");
  }
  std::vector<AttributeSpec> attrs;
  for (const json& item : doc["attributes"]) {
    AttributeSpec spec;
    spec.name = item.at("name").get<std::string>();
    spec.tag = tag_from_string(item.at("tag").get<std::string>());
    std::string kind = item.at("kind").get<std::string>();
    if (kind == "numeric") {
      spec.kind = AttributeKind::numeric;
    } else if (kind == "categorical") {
      spec.kind = AttributeKind::categorical;
      spec.categories = item.at("categories").get<std::vector<std::string>>();
    } else {
      throw FormatError("attribute \"" + spec.name + "\" has unknown kind \"" + kind + "\"");
    }
    attrs.push_back(std::move(spec));
  }
  return MetadataSchema(std::move(attrs));
}

std::string MetadataSchema::to_json() const {
  json items = json::array();
  for (const AttributeSpec& attr : attributes_) {
    json item{{"name", attr.name},
              {"tag", attr.tag.str()},
              {"kind", attr.kind == AttributeKind::numeric ? "numeric" : "categorical"}};
    if (attr.kind == AttributeKind::categorical) item["categories"] = attr.categories;
    items.push_back(std::move(item));
  }
  return json{{"attributes", items}}.dump();
}

const AttributeSpec* MetadataSchema::find(std::string_view name) const {
  for (const AttributeSpec& attr : attributes_) {
    if (attr.name == name) return &attr;
  }
  return nullptr;
}

const AttributeSpec* MetadataSchema::find_tag(DicomTag tag) const {
  for (const AttributeSpec& attr : attributes_) {
    if (attr.tag == tag) return &attr;
  }
  return nullptr;
}

const AttributeValue& MetadataRecord::at(std::string_view name) const {
  auto it = values.find(std::string(name));
  if (it == values.end()) throw ContractError("record has no attribute \"" + std::string(name) + "\"");
  return it->second;
}

MetadataRecord empty_record(const MetadataSchema& schema) {
  MetadataRecord record;
  for (const AttributeSpec& attr : schema.attributes()) {
    record.values.emplace(attr.name, AttributeValue{});
  }
  return record;
}

MetadataRecord parse_json_meta(const std::string& text, const MetadataSchema& schema) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw FormatError("malformed JSON metadata");
  if (!doc.is_object()) throw FormatError("JSON metadata must be an object");

  MetadataRecord record = empty_record(schema);
  record.source = MetadataRecord::Source::json;
  for (const AttributeSpec& attr : schema.attributes()) {
    if (!doc.contains(attr.name)) continue;
    const json& v = doc[attr.name];
    AttributeValue& slot = record.values[attr.name];
    if (attr.kind == AttributeKind::numeric) {
      if (!v.is_number()) {
        throw FormatError("type mismatch for \"" + attr.name + "\": expected a number");
      }
      slot.number = v.get<double>();
    } else {
      if (!v.is_string()) {
        throw FormatError("type mismatch for \"" + attr.name + "\": expected a string");
      }
      slot.category = v.get<std::string>();
    }
    slot.observed = true;
  }
  const AttributeValue* manufacturer =
      record.values.count("manufacturer") ? &record.values.at("manufacturer") : nullptr;
  if (manufacturer && manufacturer->category.has_value()) {
    record.domain_hint = manufacturer->category;
  }
  return record;
}

NormStats fit_normalization(std::span<const MetadataRecord> records,
                            const MetadataSchema& schema) {
  NormStats stats;
  for (const AttributeSpec& attr : schema.attributes()) {
    if (attr.kind != AttributeKind::numeric) continue;
    std::vector<double> xs;
    for (const MetadataRecord& record : records) {
      const AttributeValue& v = record.at(attr.name);
      if (v.number.has_value()) xs.push_back(*v.number);
    }
    if (xs.empty()) {
      throw Error("cannot fit normalization: attribute \"" + attr.name +
                  "\" has no observed values");
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= double(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= double(xs.size());
    stats.numeric[attr.name] = {mean, std::max(std::sqrt(var), 1e-8)};
  }
  return stats;
}

MetadataRecord impute_missing(const MetadataRecord& record, const NormStats& stats,
                              const MetadataSchema& schema) {
  MetadataRecord out = record;
  for (const AttributeSpec& attr : schema.attributes()) {
    AttributeValue& v = out.values[attr.name];
    if (!v.missing()) continue;
    if (attr.kind == AttributeKind::numeric) {
      auto it = stats.numeric.find(attr.name);
      if (it == stats.numeric.end()) {
        throw ContractError("no fitted statistics for attribute \"" + attr.name + "\"");
      }
      v.number = it->second.mean;
    } else {
      v.category = "unknown";
    }
    v.observed = false;
  }
  return out;
}

TokenSequence encode_record(const MetadataRecord& record, const NormStats& stats,
                            const MetadataSchema& schema) {
  TokenSequence tokens;
  tokens.kind = TokenKind::metadata;
  tokens.values = MatrixRM::Zero(schema.count(), schema.total_width());

  Eigen::Index row = 0;
  for (const AttributeSpec& attr : schema.attributes()) {
    const AttributeValue& v = record.at(attr.name);
    if (v.missing()) {
      throw ContractError("cannot encode missing attribute \"" + attr.name +
                          "\"; impute the record first");
    }
    const double presence = v.observed ? 1.0 : 0.0;
    if (attr.kind == AttributeKind::numeric) {
      if (!v.number.has_value()) {
        throw ContractError("attribute \"" + attr.name + "\" has a non-numeric value");
      }
      auto it = stats.numeric.find(attr.name);
      if (it == stats.numeric.end()) {
        throw ContractError("no fitted statistics for attribute \"" + attr.name + "\"");
      }
      tokens.values(row, attr.slot_offset) = (*v.number - it->second.mean) / it->second.stddev;
      tokens.values(row, attr.slot_offset + 1) = presence;
    } else {
      if (!v.category.has_value()) {
        throw ContractError("attribute \"" + attr.name + "\" has a non-categorical value");
      }
      auto pos = std::find(attr.categories.begin(), attr.categories.end(), *v.category);
      if (pos == attr.categories.end()) {
        throw Error("cannot encode attribute \"" + attr.name + "\": value \"" + *v.category +
                    "\" is not in the schema categories");
      }
      tokens.values(row, attr.slot_offset + (pos - attr.categories.begin())) = 1.0;
      tokens.values(row, attr.slot_offset + attr.slot_width - 1) = presence;
    }
    ++row;
  }
  return tokens;
}

std::string NormStats::to_json() const {
  json doc = json::object();
  for (const auto& [name, m] : numeric) {
    doc[name] = {{"mean", m.mean}, {"std", m.stddev}};
  }
  return doc.dump();
}

NormStats NormStats::from_json(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw FormatError("malformed NormStats JSON");
  NormStats stats;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    stats.numeric[it.key()] = {it.value().at("mean").get<double>(),
                               it.value().at("std").get<double>()};
  }
  return stats;
}

}  // namespace fmrifuse
