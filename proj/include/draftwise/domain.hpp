#pragma once

#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace draftwise {

using Json = nlohmann::ordered_json;

enum class DatasetKind { yelp, amazon, goodreads };

std::string_view to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view name);

/// Item description fields in their fixed rendering order.
std::span<const std::string_view> declared_fields(DatasetKind kind);

/// "business", "product" or "book"; also names the template directory.
std::string_view domain_noun(DatasetKind kind);

struct RatingScale {
  double min = 1.0;
  double max = 5.0;
  bool contains(double r) const { return r >= min && r <= max; }
};

RatingScale default_rating_scale(DatasetKind kind);

/// One review: an edge (user, item) of the interaction graph.
struct ReviewRecord {
  std::string record_id;
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::string text;

  bool operator==(const ReviewRecord&) const = default;
};

/// Deterministic id for sources that do not carry one.
std::string derive_record_id(std::string_view user_id, std::string_view item_id,
                             std::string_view text);

struct ItemMeta {
  std::string item_id;
  DatasetKind dataset_kind = DatasetKind::yelp;
  /// Ordered object: field name -> string, or (for yelp attributes) a nested
  /// object whose values are strings or one more level of objects.
  Json fields = Json::object();
  /// Synthesized because the corpus had no metadata for this item.
  bool placeholder = false;

  bool operator==(const ItemMeta&) const = default;
};

void to_json(Json& j, const ReviewRecord& r);
void from_json(const Json& j, ReviewRecord& r);
void to_json(Json& j, const ItemMeta& m);
void from_json(const Json& j, ItemMeta& m);

}  // namespace draftwise
