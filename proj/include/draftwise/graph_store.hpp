#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "draftwise/domain.hpp"

namespace draftwise {

struct GraphBuildOptions {
  /// Reject records whose item has no metadata. When false a placeholder
  /// ItemMeta (empty fields, placeholder=true) is synthesized instead.
  bool strict = true;
  /// Used for synthesized placeholders.
  DatasetKind dataset_kind = DatasetKind::yelp;
};

/// Bipartite user-item graph. Edges are reviews. Immutable once built, so
/// concurrent readers need no locking.
class InteractionGraph {
 public:
  /// Sorted user ids.
  const std::vector<std::string>& users() const noexcept { return users_; }
  /// Sorted item ids.
  const std::vector<std::string>& items() const noexcept { return items_; }
  /// All edges ordered by record_id.
  std::span<const ReviewRecord> edges() const noexcept { return edges_; }

  bool has_user(std::string_view user_id) const;
  bool has_item(std::string_view item_id) const;
  const ItemMeta& item_meta(std::string_view item_id) const;
  const ReviewRecord* find_record(std::string_view record_id) const;

  /// Indices into edges() of the user's reviews, in record_id order.
  std::span<const std::size_t> edges_of_user(std::string_view user_id) const;
  /// Indices into edges() of reviews of the item, in record_id order.
  std::span<const std::size_t> edges_of_item(std::string_view item_id) const;

  std::size_t placeholder_item_count() const noexcept { return placeholder_items_; }

 private:
  friend InteractionGraph build_graph(std::vector<ReviewRecord>, std::vector<ItemMeta>,
                                      const GraphBuildOptions&);
  InteractionGraph() = default;

  std::vector<std::string> users_;
  std::vector<std::string> items_;
  std::vector<ReviewRecord> edges_;
  std::unordered_map<std::string, ItemMeta> meta_;
  std::unordered_map<std::string, std::size_t> record_index_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_user_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_item_;
  std::size_t placeholder_items_ = 0;
};

/// Throws DuplicateRecord, DanglingItem (strict mode) or ConfigError for
/// duplicate metadata.
InteractionGraph build_graph(std::vector<ReviewRecord> records, std::vector<ItemMeta> meta,
                             const GraphBuildOptions& options = {});

/// P_u: the user's own reviews plus other users' reviews of the items the
/// user reviewed.
struct Profile {
  std::string user_id;
  std::vector<ReviewRecord> user_entries;
  std::vector<ReviewRecord> neighbor_entries;
};

/// `exclude` is the held-out record. It is removed from the user entries, but
/// its item still counts as connected to the user when collecting neighbors.
/// Throws UnknownUser, or std::invalid_argument when `exclude` is not one of
/// the user's records.
Profile user_profile(const InteractionGraph& graph, std::string_view user_id,
                     std::optional<std::string_view> exclude = std::nullopt);

}  // namespace draftwise
