#include "draftwise/graph_store.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "draftwise/errors.hpp"

namespace draftwise {

bool InteractionGraph::has_user(std::string_view user_id) const {
  return by_user_.contains(std::string(user_id));
}

bool InteractionGraph::has_item(std::string_view item_id) const {
  return meta_.contains(std::string(item_id));
}

const ItemMeta& InteractionGraph::item_meta(std::string_view item_id) const {
  auto it = meta_.find(std::string(item_id));
  if (it == meta_.end()) throw DanglingItem(std::string(item_id));
  return it->second;
}

const ReviewRecord* InteractionGraph::find_record(std::string_view record_id) const {
  auto it = record_index_.find(std::string(record_id));
  return it == record_index_.end() ? nullptr : &edges_[it->second];
}

std::span<const std::size_t> InteractionGraph::edges_of_user(std::string_view user_id) const {
  auto it = by_user_.find(std::string(user_id));
  if (it == by_user_.end()) return {};
  return it->second;
}

std::span<const std::size_t> InteractionGraph::edges_of_item(std::string_view item_id) const {
  auto it = by_item_.find(std::string(item_id));
  if (it == by_item_.end()) return {};
  return it->second;
}

InteractionGraph build_graph(std::vector<ReviewRecord> records, std::vector<ItemMeta> meta,
                             const GraphBuildOptions& options) {
  InteractionGraph g;
  for (auto& m : meta) {
    std::string id = m.item_id;
    if (!g.meta_.emplace(id, std::move(m)).second)
      throw ConfigError("duplicate item metadata: " + id);
  }

  std::sort(records.begin(), records.end(),
            [](const ReviewRecord& a, const ReviewRecord& b) { return a.record_id < b.record_id; });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].record_id == records[i - 1].record_id)
      throw DuplicateRecord(records[i].record_id);
  }

  std::set<std::string> users;
  std::set<std::string> items;
  for (const auto& r : records) {
    if (!g.meta_.contains(r.item_id)) {
      if (options.strict) throw DanglingItem(r.item_id);
      ItemMeta placeholder;
      placeholder.item_id = r.item_id;
      placeholder.dataset_kind = options.dataset_kind;
      placeholder.placeholder = true;
      g.meta_.emplace(r.item_id, std::move(placeholder));
      ++g.placeholder_items_;
    }
    users.insert(r.user_id);
    items.insert(r.item_id);
  }

  g.edges_ = std::move(records);
  for (std::size_t i = 0; i < g.edges_.size(); ++i) {
    const auto& r = g.edges_[i];
    g.record_index_.emplace(r.record_id, i);
    g.by_user_[r.user_id].push_back(i);
    g.by_item_[r.item_id].push_back(i);
  }
  g.users_.assign(users.begin(), users.end());
  g.items_.assign(items.begin(), items.end());
  return g;
}

Profile user_profile(const InteractionGraph& graph, std::string_view user_id,
                     std::optional<std::string_view> exclude) {
  if (!graph.has_user(user_id)) throw UnknownUser(std::string(user_id));
  const auto edges = graph.edges();
  const auto own = graph.edges_of_user(user_id);

  if (exclude) {
    bool found = std::any_of(own.begin(), own.end(),
                             [&](std::size_t i) { return edges[i].record_id == *exclude; });
    if (!found)
      throw std::invalid_argument("excluded record " + std::string(*exclude) +
                                  " does not belong to user " + std::string(user_id));
  }

  Profile p;
  p.user_id = std::string(user_id);
  std::set<std::string_view> connected_items;
  for (std::size_t i : own) {
    connected_items.insert(edges[i].item_id);
    if (exclude && edges[i].record_id == *exclude) continue;
    p.user_entries.push_back(edges[i]);
  }

  std::vector<std::size_t> neighbor_idx;
  for (auto item : connected_items) {
    for (std::size_t i : graph.edges_of_item(item)) {
      if (edges[i].user_id != user_id) neighbor_idx.push_back(i);
    }
  }
  // edges() is sorted by record_id, so index order is record_id order.
  std::sort(neighbor_idx.begin(), neighbor_idx.end());
  neighbor_idx.erase(std::unique(neighbor_idx.begin(), neighbor_idx.end()), neighbor_idx.end());
  p.neighbor_entries.reserve(neighbor_idx.size());
  for (std::size_t i : neighbor_idx) p.neighbor_entries.push_back(edges[i]);
  return p;
}

}  // namespace draftwise
