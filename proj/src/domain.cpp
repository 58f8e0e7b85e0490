#include "draftwise/domain.hpp"

#include <array>

#include <fmt/format.h>

#include "draftwise/errors.hpp"
#include "draftwise/text.hpp"

namespace draftwise {
namespace {

constexpr std::array<std::string_view, 4> kYelpFields{"city", "state", "attributes", "categories"};
constexpr std::array<std::string_view, 3> kAmazonFields{"title", "description", "categories"};
constexpr std::array<std::string_view, 2> kGoodreadsFields{"title", "description"};

}  // namespace

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::yelp:
      return "yelp";
    case DatasetKind::amazon:
      return "amazon";
    case DatasetKind::goodreads:
      return "goodreads";
  }
  return "yelp";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "yelp") return DatasetKind::yelp;
  if (name == "amazon") return DatasetKind::amazon;
  if (name == "goodreads") return DatasetKind::goodreads;
  throw ConfigError(fmt::format("unknown dataset kind '{}'", name));
}

std::span<const std::string_view> declared_fields(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::yelp:
      return kYelpFields;
    case DatasetKind::amazon:
      return kAmazonFields;
    case DatasetKind::goodreads:
      return kGoodreadsFields;
  }
  return kYelpFields;
}

std::string_view domain_noun(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::yelp:
      return "business";
    case DatasetKind::amazon:
      return "product";
    case DatasetKind::goodreads:
      return "book";
  }
  return "business";
}

RatingScale default_rating_scale(DatasetKind kind) {
  // Goodreads uses 0 for "read, not rated".
  if (kind == DatasetKind::goodreads) return {0.0, 5.0};
  return {1.0, 5.0};
}

std::string derive_record_id(std::string_view user_id, std::string_view item_id,
                             std::string_view text) {
  std::uint64_t h = text::fnv1a64(user_id);
  h = text::fnv1a64("\x1f", h);
  h = text::fnv1a64(item_id, h);
  h = text::fnv1a64("\x1f", h);
  h = text::fnv1a64(text, h);
  return fmt::format("r{:016x}", h);
}

void to_json(Json& j, const ReviewRecord& r) {
  j = Json{{"record_id", r.record_id},
           {"user_id", r.user_id},
           {"item_id", r.item_id},
           {"rating", r.rating},
           {"text", r.text}};
}

void from_json(const Json& j, ReviewRecord& r) {
  r.user_id = j.at("user_id").get<std::string>();
  r.item_id = j.at("item_id").get<std::string>();
  r.rating = j.at("rating").get<double>();
  r.text = j.at("text").get<std::string>();
  if (auto it = j.find("record_id"); it != j.end() && !it->is_null())
    r.record_id = it->get<std::string>();
  else
    r.record_id = derive_record_id(r.user_id, r.item_id, r.text);
}

void to_json(Json& j, const ItemMeta& m) {
  j = Json{{"item_id", m.item_id}, {"dataset_kind", to_string(m.dataset_kind)}, {"fields", m.fields}};
  if (m.placeholder) j["placeholder"] = true;
}

void from_json(const Json& j, ItemMeta& m) {
  m.item_id = j.at("item_id").get<std::string>();
  m.dataset_kind = parse_dataset_kind(j.at("dataset_kind").get<std::string>());
  m.fields = j.value("fields", Json::object());
  m.placeholder = j.value("placeholder", false);
}

}  // namespace draftwise
