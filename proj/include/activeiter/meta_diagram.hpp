#pragma once

// Inter-network meta paths and the meta diagrams obtained by stacking them.
//
// Every path and diagram is oriented from a user of the first network
// (source) to a user of the second network (sink).  Stacking merges the
// source positions, the sink positions, and intermediate positions that sit
// at the same index with the same kind; everything else stays distinct.

#include <algorithm>
#include <cstdint>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "activeiter/errors.hpp"

namespace activeiter {

enum class PositionKind : std::uint8_t { User1, Post1, User2, Post2, Timestamp, Location, Word };

enum class Relation : std::uint8_t { Follow, Write, At, Checkin, Contains, Anchor };

inline std::string_view to_string(PositionKind k) {
  switch (k) {
    case PositionKind::User1: return "User1";
    case PositionKind::Post1: return "Post1";
    case PositionKind::User2: return "User2";
    case PositionKind::Post2: return "Post2";
    case PositionKind::Timestamp: return "Timestamp";
    case PositionKind::Location: return "Location";
    case PositionKind::Word: return "Word";
  }
  return "?";
}

inline std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::Follow: return "follow";
    case Relation::Write: return "write";
    case Relation::At: return "at";
    case Relation::Checkin: return "checkin";
    case Relation::Contains: return "contains";
    case Relation::Anchor: return "anchor";
  }
  return "?";
}

inline bool is_first_network(PositionKind k) {
  return k == PositionKind::User1 || k == PositionKind::Post1;
}
inline bool is_second_network(PositionKind k) {
  return k == PositionKind::User2 || k == PositionKind::Post2;
}
inline bool is_attribute(PositionKind k) {
  return k == PositionKind::Timestamp || k == PositionKind::Location || k == PositionKind::Word;
}
inline bool is_user(PositionKind k) { return k == PositionKind::User1 || k == PositionKind::User2; }
inline bool is_post(PositionKind k) { return k == PositionKind::Post1 || k == PositionKind::Post2; }

/// Whether `relation` may connect a `source` position to a `target`
/// position in its canonical direction.
inline bool relation_admits(Relation relation, PositionKind source, PositionKind target) {
  switch (relation) {
    case Relation::Follow:
      return is_user(source) && source == target;
    case Relation::Write:
      return (source == PositionKind::User1 && target == PositionKind::Post1) ||
             (source == PositionKind::User2 && target == PositionKind::Post2);
    case Relation::At:
      return is_post(source) && target == PositionKind::Timestamp;
    case Relation::Checkin:
      return is_post(source) && target == PositionKind::Location;
    case Relation::Contains:
      return is_post(source) && target == PositionKind::Word;
    case Relation::Anchor:
      return source == PositionKind::User1 && target == PositionKind::User2;
  }
  return false;
}

/// One hop of a meta path. `forward` means the underlying link points from
/// the earlier position to the later one.
struct Step {
  Relation relation;
  bool forward;
  friend bool operator==(const Step&, const Step&) = default;
};

struct MetaPath {
  std::string name;
  std::vector<PositionKind> positions;
  std::vector<Step> steps;

  std::size_t length() const noexcept { return steps.size(); }

  friend bool operator==(const MetaPath& a, const MetaPath& b) {
    return a.positions == b.positions && a.steps == b.steps;
  }
};

inline void validate(const MetaPath& p) {
  if (p.steps.empty()) throw IncompatiblePathsError("meta path '" + p.name + "' has no steps");
  if (p.positions.size() != p.steps.size() + 1) {
    throw IncompatiblePathsError("meta path '" + p.name + "' positions/steps mismatch");
  }
  if (p.positions.front() != PositionKind::User1 || p.positions.back() != PositionKind::User2) {
    throw IncompatiblePathsError("meta path '" + p.name +
                                 "' must run from a first-network user to a second-network user");
  }
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    auto [s, t] = p.steps[i].forward ? std::pair{p.positions[i], p.positions[i + 1]}
                                     : std::pair{p.positions[i + 1], p.positions[i]};
    if (!relation_admits(p.steps[i].relation, s, t)) {
      throw IncompatiblePathsError("meta path '" + p.name + "' step " + std::to_string(i) + " (" +
                                   std::string(to_string(p.steps[i].relation)) + ") cannot join " +
                                   std::string(to_string(s)) + " to " + std::string(to_string(t)));
    }
  }
}

namespace paths {

namespace detail {
inline MetaPath social(std::string name, bool first_forward, bool last_forward) {
  using K = PositionKind;
  return {std::move(name),
          {K::User1, K::User1, K::User2, K::User2},
          {{Relation::Follow, first_forward}, {Relation::Anchor, true}, {Relation::Follow, last_forward}}};
}
inline MetaPath attribute(std::string name, PositionKind attr, Relation rel) {
  using K = PositionKind;
  return {std::move(name),
          {K::User1, K::Post1, attr, K::Post2, K::User2},
          {{Relation::Write, true}, {rel, true}, {rel, false}, {Relation::Write, false}}};
}
}  // namespace detail

/// U -> U <-> U <- U, common anchored followee
inline MetaPath p1() { return detail::social("P1", true, false); }
/// U <- U <-> U -> U, common anchored follower
inline MetaPath p2() { return detail::social("P2", false, true); }
/// U -> U <-> U -> U, common anchored followee-follower
inline MetaPath p3() { return detail::social("P3", true, true); }
/// U <- U <-> U <- U, common anchored follower-followee
inline MetaPath p4() { return detail::social("P4", false, false); }
/// U -> P -> T <- P <- U, common timestamp
inline MetaPath p5() { return detail::attribute("P5", PositionKind::Timestamp, Relation::At); }
/// U -> P -> L <- P <- U, common check-in
inline MetaPath p6() { return detail::attribute("P6", PositionKind::Location, Relation::Checkin); }
/// U -> P -> W <- P <- U, common word. Not part of the default feature set.
inline MetaPath word() { return detail::attribute("PW", PositionKind::Word, Relation::Contains); }

inline std::vector<MetaPath> social_paths() { return {p1(), p2(), p3(), p4()}; }
inline std::vector<MetaPath> attribute_paths() { return {p5(), p6()}; }

}  // namespace paths

/// Edge between two diagram positions. `from` precedes `to` along the
/// source-to-sink orientation; `forward` tells whether the underlying link
/// runs from -> to.
struct DiagramEdge {
  std::size_t from;
  std::size_t to;
  Relation relation;
  bool forward;
  friend auto operator<=>(const DiagramEdge&, const DiagramEdge&) = default;
};

struct MetaDiagram {
  std::string name;
  std::vector<PositionKind> positions;
  std::vector<DiagramEdge> edges;
  std::size_t source = 0;
  std::size_t sink = 0;
  /// Stacked meta paths, in stacking order.
  std::vector<MetaPath> paths;
  /// embedding[i][k] is the diagram position of position k of paths[i].
  std::vector<std::vector<std::size_t>> embedding;

  bool is_path() const noexcept { return paths.size() == 1; }
};

/// Checks acyclicity, endpoint kinds and that every position lies on some
/// source-to-sink walk. Throws IncompatiblePathsError.
inline void validate(const MetaDiagram& d) {
  const auto n = d.positions.size();
  if (d.source >= n || d.sink >= n) throw IncompatiblePathsError("diagram endpoints out of range");
  if (d.positions[d.source] != PositionKind::User1 || d.positions[d.sink] != PositionKind::User2) {
    throw IncompatiblePathsError("diagram '" + d.name + "' endpoints must be User1 -> User2");
  }
  std::vector<std::vector<std::size_t>> out(n), in(n);
  std::vector<std::size_t> indeg(n, 0);
  for (const auto& e : d.edges) {
    out[e.from].push_back(e.to);
    in[e.to].push_back(e.from);
    ++indeg[e.to];
  }
  std::queue<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push(i);
  std::size_t visited = 0;
  while (!ready.empty()) {
    auto v = ready.front();
    ready.pop();
    ++visited;
    for (auto w : out[v])
      if (--indeg[w] == 0) ready.push(w);
  }
  if (visited != n) throw IncompatiblePathsError("diagram '" + d.name + "' is not acyclic");

  auto reach = [n](std::size_t start, const std::vector<std::vector<std::size_t>>& adj) {
    std::vector<char> seen(n, 0);
    std::vector<std::size_t> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto w : adj[v])
        if (!seen[w]) seen[w] = 1, stack.push_back(w);
    }
    return seen;
  };
  auto from_source = reach(d.source, out);
  auto to_sink = reach(d.sink, in);
  for (std::size_t i = 0; i < n; ++i) {
    if (!from_source[i] || !to_sink[i]) {
      throw IncompatiblePathsError("diagram '" + d.name + "' position " + std::to_string(i) +
                                   " is not on a source-to-sink walk");
    }
  }
}

/// Stacks meta paths into a diagram by positional-and-typed merging.
inline MetaDiagram stack(const std::vector<MetaPath>& input) {
  if (input.empty()) throw IncompatiblePathsError("cannot stack an empty set of paths");
  for (const auto& p : input) validate(p);

  MetaDiagram d;
  d.paths = input;
  d.positions = {PositionKind::User1, PositionKind::User2};
  d.source = 0;
  d.sink = 1;
  std::map<std::pair<std::size_t, PositionKind>, std::size_t> merged;
  std::set<DiagramEdge> edges;

  for (const auto& p : input) {
    std::vector<std::size_t> where(p.positions.size());
    where.front() = d.source;
    where.back() = d.sink;
    for (std::size_t k = 1; k + 1 < p.positions.size(); ++k) {
      auto [it, fresh] = merged.try_emplace({k, p.positions[k]}, d.positions.size());
      if (fresh) d.positions.push_back(p.positions[k]);
      where[k] = it->second;
    }
    for (std::size_t k = 0; k < p.steps.size(); ++k) {
      edges.insert({where[k], where[k + 1], p.steps[k].relation, p.steps[k].forward});
    }
    d.embedding.push_back(std::move(where));
  }
  d.edges.assign(edges.begin(), edges.end());

  for (std::size_t i = 0; i < input.size(); ++i) {
    if (i) d.name += 'x';
    d.name += input[i].name;
  }
  validate(d);
  return d;
}

/// Minimum covering set: the distinct stacked paths, by name.
inline std::vector<std::string> covering_set(const MetaDiagram& d) {
  std::set<std::string> names;
  for (const auto& p : d.paths) names.insert(p.name);
  return {names.begin(), names.end()};
}

struct DiagramPolicy {
  bool include_paths = true;
  bool include_families = true;
  /// Allow P_i x P_i inside a family. Such stacks collapse onto the path.
  bool allow_self_stacking = false;
  /// Adds the word path to the attribute paths.
  bool include_word = false;

  static DiagramPolicy paths_only() {
    DiagramPolicy p;
    p.include_families = false;
    return p;
  }
};

namespace detail {

// All size-r combinations (or multisets, with repetition) of indices [0, n).
inline std::vector<std::vector<std::size_t>> choose(std::size_t n, std::size_t r, bool repeat) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  auto rec = [&](auto&& self, std::size_t start) -> void {
    if (cur.size() == r) {
      out.push_back(cur);
      return;
    }
    for (std::size_t i = start; i < n; ++i) {
      cur.push_back(i);
      self(self, repeat ? i : i + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

}  // namespace detail

/// The feature set: the six meta paths followed by the families f^2, a^2,
/// (f,a), (f,a^2) and (f^2,a^2).
inline std::vector<MetaDiagram> enumerate_diagrams(const DiagramPolicy& policy = {}) {
  auto social = paths::social_paths();
  auto attrs = paths::attribute_paths();
  if (policy.include_word) attrs.push_back(paths::word());

  std::vector<MetaDiagram> out;
  if (policy.include_paths) {
    for (const auto& p : social) out.push_back(stack({p}));
    for (const auto& p : attrs) out.push_back(stack({p}));
  }
  if (!policy.include_families) return out;

  const bool rep = policy.allow_self_stacking;
  auto pick = [](const std::vector<MetaPath>& from, const std::vector<std::size_t>& idx) {
    std::vector<MetaPath> v;
    for (auto i : idx) v.push_back(from[i]);
    return v;
  };
  auto concat = [](std::vector<MetaPath> a, const std::vector<MetaPath>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  auto f1 = detail::choose(social.size(), 1, rep);
  auto f2 = detail::choose(social.size(), 2, rep);
  auto a1 = detail::choose(attrs.size(), 1, rep);
  auto a2 = detail::choose(attrs.size(), 2, rep);

  for (const auto& f : f2) out.push_back(stack(pick(social, f)));
  for (const auto& a : a2) out.push_back(stack(pick(attrs, a)));
  for (const auto& f : f1)
    for (const auto& a : a1) out.push_back(stack(concat(pick(social, f), pick(attrs, a))));
  for (const auto& f : f1)
    for (const auto& a : a2) out.push_back(stack(concat(pick(social, f), pick(attrs, a))));
  for (const auto& f : f2)
    for (const auto& a : a2) out.push_back(stack(concat(pick(social, f), pick(attrs, a))));
  return out;
}

}  // namespace activeiter
