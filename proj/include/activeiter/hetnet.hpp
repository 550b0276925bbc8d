#pragma once

// Attributed heterogeneous networks, aligned pairs and the candidate
// anchor-link space.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "activeiter/errors.hpp"

namespace activeiter {

enum class NodeType : std::uint8_t { User, Post };
enum class LinkType : std::uint8_t { Follow, Write };
enum class AttrType : std::uint8_t { Word, Location, Timestamp };

using UserIndex = std::uint32_t;
using LinkId = std::uint32_t;

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

// Calls fn(line_number, fields) for every non-blank, non-comment line.
template <typename Fn>
void for_each_record(std::istream& in, const std::string& source, std::size_t arity, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != arity) {
      throw ParseError(source, line_no,
                       "expected " + std::to_string(arity) + " tab-separated fields, got " +
                           std::to_string(fields.size()));
    }
    for (auto f : fields) {
      if (f.empty()) throw ParseError(source, line_no, "empty field");
    }
    fn(line_no, fields);
  }
}

}  // namespace detail

inline std::string_view to_string(NodeType t) { return t == NodeType::User ? "User" : "Post"; }
inline std::string_view to_string(LinkType t) { return t == LinkType::Follow ? "follow" : "write"; }
inline std::string_view to_string(AttrType t) {
  switch (t) {
    case AttrType::Word: return "word";
    case AttrType::Location: return "location";
    case AttrType::Timestamp: return "timestamp";
  }
  return "?";
}

inline std::optional<NodeType> parse_node_type(std::string_view s) {
  auto l = detail::lower(s);
  if (l == "user") return NodeType::User;
  if (l == "post") return NodeType::Post;
  return std::nullopt;
}

inline std::optional<LinkType> parse_link_type(std::string_view s) {
  auto l = detail::lower(s);
  if (l == "follow") return LinkType::Follow;
  if (l == "write") return LinkType::Write;
  return std::nullopt;
}

inline std::optional<AttrType> parse_attr_type(std::string_view s) {
  auto l = detail::lower(s);
  if (l == "word") return AttrType::Word;
  if (l == "location") return AttrType::Location;
  if (l == "timestamp") return AttrType::Timestamp;
  return std::nullopt;
}

struct LinkSchema {
  NodeType source;
  NodeType target;
  bool directed;
};

constexpr LinkSchema schema_of(LinkType t) {
  return t == LinkType::Follow ? LinkSchema{NodeType::User, NodeType::User, true}
                               : LinkSchema{NodeType::User, NodeType::Post, true};
}

// Every attribute type is associated with posts (at, checkin, contains).
constexpr NodeType attribute_owner(AttrType) { return NodeType::Post; }

struct Node {
  std::string id;
  NodeType type;
  friend bool operator==(const Node&, const Node&) = default;
  friend auto operator<=>(const Node&, const Node&) = default;
};

struct Link {
  std::string source;
  std::string target;
  LinkType type;
  friend bool operator==(const Link&, const Link&) = default;
  friend auto operator<=>(const Link&, const Link&) = default;
};

struct Attribute {
  std::string node;
  AttrType type;
  std::string value;
  friend bool operator==(const Attribute&, const Attribute&) = default;
  friend auto operator<=>(const Attribute&, const Attribute&) = default;
};

/// One attributed heterogeneous social network. Nodes keep insertion order;
/// users and posts get dense per-type ordinals used by the count matrices.
class HeterogeneousNetwork {
 public:
  HeterogeneousNetwork() = default;
  explicit HeterogeneousNetwork(std::string id) : id_(std::move(id)) {}

  const std::string& id() const noexcept { return id_; }

  void add_node(std::string id, NodeType type) {
    if (id.empty()) throw SchemaError("empty node id");
    if (index_.contains(id)) throw SchemaError("duplicate node id '" + id + "'");
    auto& ordinals = type == NodeType::User ? user_ids_ : post_ids_;
    index_.emplace(id, Slot{type, static_cast<std::uint32_t>(ordinals.size())});
    ordinals.push_back(id);
    nodes_.push_back(Node{std::move(id), type});
  }

  void add_link(const std::string& source, const std::string& target, LinkType type) {
    auto schema = schema_of(type);
    expect_node(source, schema.source, to_string(type));
    expect_node(target, schema.target, to_string(type));
    Link link{source, target, type};
    if (!link_keys_.insert(key(link)).second) {
      throw SchemaError("duplicate link (" + source + ", " + target + ", " +
                        std::string(to_string(type)) + ")");
    }
    if (type == LinkType::Follow) {
      follows_.emplace_back(index_.at(source).ordinal, index_.at(target).ordinal);
    } else {
      writes_.emplace_back(index_.at(source).ordinal, index_.at(target).ordinal);
    }
    links_.push_back(std::move(link));
  }

  void add_attribute(const std::string& node, AttrType type, std::string value) {
    expect_node(node, attribute_owner(type), to_string(type));
    Attribute attr{node, type, std::move(value)};
    if (!attr_keys_.insert(key(attr)).second) {
      throw SchemaError("duplicate attribute (" + node + ", " + std::string(to_string(type)) +
                        ", " + attr.value + ")");
    }
    post_attrs_[static_cast<std::size_t>(type)].emplace_back(index_.at(node).ordinal, attr.value);
    attributes_.push_back(std::move(attr));
  }

  std::optional<NodeType> node_type(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second.type;
  }

  std::optional<UserIndex> user_index(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end() || it->second.type != NodeType::User) return std::nullopt;
    return it->second.ordinal;
  }

  std::optional<std::uint32_t> post_index(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end() || it->second.type != NodeType::Post) return std::nullopt;
    return it->second.ordinal;
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<Link>& links() const noexcept { return links_; }
  const std::vector<Attribute>& attributes() const noexcept { return attributes_; }

  std::size_t user_count() const noexcept { return user_ids_.size(); }
  std::size_t post_count() const noexcept { return post_ids_.size(); }
  const std::vector<std::string>& user_ids() const noexcept { return user_ids_; }
  const std::vector<std::string>& post_ids() const noexcept { return post_ids_; }

  /// (follower ordinal, followee ordinal)
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& follow_edges() const noexcept {
    return follows_;
  }
  /// (user ordinal, post ordinal)
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& write_edges() const noexcept {
    return writes_;
  }
  /// (post ordinal, value) for one attribute type
  const std::vector<std::pair<std::uint32_t, std::string>>& post_attributes(AttrType t) const {
    return post_attrs_[static_cast<std::size_t>(t)];
  }

 private:
  struct Slot {
    NodeType type;
    std::uint32_t ordinal;
  };

  void expect_node(const std::string& id, NodeType expected, std::string_view rel) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw SchemaError(std::string(rel) + " references unknown node '" + id + "'");
    }
    if (it->second.type != expected) {
      throw SchemaError(std::string(rel) + " requires " + std::string(to_string(expected)) +
                        " but '" + id + "' is " + std::string(to_string(it->second.type)));
    }
  }

  static std::string key(const Link& l) {
    return l.source + '\t' + l.target + '\t' + std::string(to_string(l.type));
  }
  static std::string key(const Attribute& a) {
    return a.node + '\t' + std::string(to_string(a.type)) + '\t' + a.value;
  }

  std::string id_;
  std::vector<Node> nodes_;
  std::vector<Link> links_;
  std::vector<Attribute> attributes_;
  std::unordered_map<std::string, Slot> index_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> post_ids_;
  std::unordered_set<std::string> link_keys_;
  std::unordered_set<std::string> attr_keys_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> follows_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> writes_;
  std::vector<std::pair<std::uint32_t, std::string>> post_attrs_[3];
};

/// True when both networks hold the same node, link and attribute multisets.
inline bool same_content(const HeterogeneousNetwork& a, const HeterogeneousNetwork& b) {
  auto sorted = [](auto v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  return sorted(a.nodes()) == sorted(b.nodes()) && sorted(a.links()) == sorted(b.links()) &&
         sorted(a.attributes()) == sorted(b.attributes());
}

// Optional pre-bucketing of attribute values (e.g. coarsening timestamps).
using ValueTransform = std::function<std::string(AttrType, std::string_view)>;

struct LoadOptions {
  std::string network_id;
  ValueTransform transform;  // identity when empty
};

inline HeterogeneousNetwork load_network(std::istream& nodes, std::istream& links,
                                         std::istream& attrs, const LoadOptions& opts = {}) {
  HeterogeneousNetwork net(opts.network_id);
  auto wrap = [](const std::string& src, std::size_t line, auto&& fn) {
    try {
      fn();
    } catch (const SchemaError& e) {
      throw SchemaError(src + ":" + std::to_string(line) + ": " + e.what());
    }
  };
  detail::for_each_record(nodes, "nodes.tsv", 2, [&](std::size_t line, const auto& f) {
    auto type = parse_node_type(f[1]);
    if (!type) throw SchemaError("nodes.tsv:" + std::to_string(line) + ": unknown node type '" +
                                 std::string(f[1]) + "'");
    wrap("nodes.tsv", line, [&] { net.add_node(std::string(f[0]), *type); });
  });
  detail::for_each_record(links, "links.tsv", 3, [&](std::size_t line, const auto& f) {
    auto type = parse_link_type(f[2]);
    if (!type) throw SchemaError("links.tsv:" + std::to_string(line) + ": unknown link type '" +
                                 std::string(f[2]) + "'");
    wrap("links.tsv", line, [&] { net.add_link(std::string(f[0]), std::string(f[1]), *type); });
  });
  detail::for_each_record(attrs, "attrs.tsv", 3, [&](std::size_t line, const auto& f) {
    auto type = parse_attr_type(f[1]);
    if (!type) throw SchemaError("attrs.tsv:" + std::to_string(line) +
                                 ": unknown attribute type '" + std::string(f[1]) + "'");
    std::string value = opts.transform ? opts.transform(*type, f[2]) : std::string(f[2]);
    wrap("attrs.tsv", line, [&] { net.add_attribute(std::string(f[0]), *type, std::move(value)); });
  });
  return net;
}

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return in;
}

/// Loads nodes.tsv, links.tsv and attrs.tsv from a directory. Missing
/// links/attrs files are treated as empty.
inline HeterogeneousNetwork load_network_dir(const std::filesystem::path& dir,
                                             const LoadOptions& opts = {}) {
  auto nodes = open_input(dir / "nodes.tsv");
  std::istringstream empty;
  std::ifstream links(dir / "links.tsv"), attrs(dir / "attrs.tsv");
  LoadOptions o = opts;
  if (o.network_id.empty()) o.network_id = dir.filename().string();
  return load_network(nodes, links ? static_cast<std::istream&>(links) : empty,
                      attrs ? static_cast<std::istream&>(attrs) : empty, o);
}

inline void write_network(const HeterogeneousNetwork& net, std::ostream& nodes,
                          std::ostream& links, std::ostream& attrs) {
  nodes << "# node_id\tnode_type\n";
  for (const auto& n : net.nodes()) nodes << n.id << '\t' << to_string(n.type) << '\n';
  links << "# src\tdst\tlink_type\n";
  for (const auto& l : net.links()) {
    links << l.source << '\t' << l.target << '\t' << to_string(l.type) << '\n';
  }
  attrs << "# node_id\tattr_type\tvalue\n";
  for (const auto& a : net.attributes()) {
    attrs << a.node << '\t' << to_string(a.type) << '\t' << a.value << '\n';
  }
}

inline void write_network_dir(const HeterogeneousNetwork& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream nodes(dir / "nodes.tsv"), links(dir / "links.tsv"), attrs(dir / "attrs.tsv");
  if (!nodes || !links || !attrs) throw Error("cannot write network to " + dir.string());
  write_network(net, nodes, links, attrs);
}

/// Undirected anchor between a user of the first network and a user of the
/// second, both given by user ordinal.
struct AnchorLink {
  UserIndex user1;
  UserIndex user2;
  friend bool operator==(const AnchorLink&, const AnchorLink&) = default;
  friend auto operator<=>(const AnchorLink&, const AnchorLink&) = default;
};

struct AnchorHash {
  std::size_t operator()(const AnchorLink& a) const noexcept {
    return (static_cast<std::size_t>(a.user1) << 32) ^ a.user2;
  }
};

/// Throws CardinalityError if any user appears in more than one anchor.
inline void check_one_to_one(const std::vector<AnchorLink>& anchors, std::size_t users1,
                             std::size_t users2) {
  std::vector<char> seen1(users1, 0), seen2(users2, 0);
  for (const auto& a : anchors) {
    if (seen1[a.user1]++ || seen2[a.user2]++) {
      throw CardinalityError("anchor set violates one-to-one at (" + std::to_string(a.user1) +
                             ", " + std::to_string(a.user2) + ")");
    }
  }
}

struct AlignedNetworkPair {
  HeterogeneousNetwork first;
  HeterogeneousNetwork second;
  std::vector<AnchorLink> anchors;

  AnchorLink anchor_of(std::string_view id1, std::string_view id2) const {
    auto u = first.user_index(id1);
    auto v = second.user_index(id2);
    if (!u) throw SchemaError("anchor endpoint '" + std::string(id1) + "' is not a user of " +
                              first.id());
    if (!v) throw SchemaError("anchor endpoint '" + std::string(id2) + "' is not a user of " +
                              second.id());
    return {*u, *v};
  }
};

inline std::vector<AnchorLink> parse_anchors(const HeterogeneousNetwork& g1,
                                             const HeterogeneousNetwork& g2, std::istream& in,
                                             const std::string& source = "anchors.tsv") {
  std::vector<AnchorLink> out;
  detail::for_each_record(in, source, 2, [&](std::size_t line, const auto& f) {
    auto u = g1.user_index(f[0]);
    auto v = g2.user_index(f[1]);
    if (!u || !v) {
      throw SchemaError(source + ":" + std::to_string(line) + ": anchor endpoint '" +
                        std::string(!u ? f[0] : f[1]) + "' is not a user of its network");
    }
    out.push_back({*u, *v});
  });
  return out;
}

inline AlignedNetworkPair load_aligned_pair(HeterogeneousNetwork net1, HeterogeneousNetwork net2,
                                            std::istream& anchors) {
  AlignedNetworkPair pair{std::move(net1), std::move(net2), {}};
  pair.anchors = parse_anchors(pair.first, pair.second, anchors);
  check_one_to_one(pair.anchors, pair.first.user_count(), pair.second.user_count());
  return pair;
}

inline void write_anchors(const AlignedNetworkPair& pair, const std::vector<AnchorLink>& anchors,
                          std::ostream& out) {
  out << "# user_id_net1\tuser_id_net2\n";
  for (const auto& a : anchors) {
    out << pair.first.user_ids()[a.user1] << '\t' << pair.second.user_ids()[a.user2] << '\n';
  }
}

/// Candidate anchor links H with dense ids and the user/link incidence maps
/// of both networks.
class CandidateLinkSpace {
 public:
  CandidateLinkSpace(std::size_t users1, std::size_t users2)
      : incidence1_(users1), incidence2_(users2) {}

  LinkId add(AnchorLink link) {
    if (link.user1 >= incidence1_.size() || link.user2 >= incidence2_.size()) {
      throw SchemaError("candidate link endpoint out of range");
    }
    if (!index_.emplace(link, static_cast<LinkId>(links_.size())).second) {
      throw DuplicateLinkError("duplicate candidate link (" + std::to_string(link.user1) + ", " +
                               std::to_string(link.user2) + ")");
    }
    auto id = static_cast<LinkId>(links_.size());
    links_.push_back(link);
    incidence1_[link.user1].push_back(id);
    incidence2_[link.user2].push_back(id);
    return id;
  }

  std::size_t size() const noexcept { return links_.size(); }
  const AnchorLink& operator[](LinkId id) const { return links_.at(id); }
  const std::vector<AnchorLink>& links() const noexcept { return links_; }

  std::optional<LinkId> find(AnchorLink link) const {
    auto it = index_.find(link);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Link ids incident to a user of the first / second network.
  const std::vector<LinkId>& incident1(UserIndex u) const { return incidence1_.at(u); }
  const std::vector<LinkId>& incident2(UserIndex v) const { return incidence2_.at(v); }
  std::size_t users1() const noexcept { return incidence1_.size(); }
  std::size_t users2() const noexcept { return incidence2_.size(); }

  /// Links sharing at least one endpoint with `id`, excluding `id` itself.
  std::vector<LinkId> conflicts(LinkId id) const {
    const auto& l = links_.at(id);
    std::vector<LinkId> out;
    for (auto other : incidence1_[l.user1])
      if (other != id) out.push_back(other);
    for (auto other : incidence2_[l.user2])
      if (other != id) out.push_back(other);
    return out;
  }

  // Number of leading ids that came in as positives.
  std::size_t positive_count() const noexcept { return positive_count_; }

 private:
  friend CandidateLinkSpace build_candidate_space(const AlignedNetworkPair&,
                                                  const std::vector<AnchorLink>&);
  std::vector<AnchorLink> links_;
  std::unordered_map<AnchorLink, LinkId, AnchorHash> index_;
  std::vector<std::vector<LinkId>> incidence1_;
  std::vector<std::vector<LinkId>> incidence2_;
  std::size_t positive_count_ = 0;
};

/// H = pair.anchors followed by `sampled_negatives` in input order.
inline CandidateLinkSpace build_candidate_space(const AlignedNetworkPair& pair,
                                                const std::vector<AnchorLink>& sampled_negatives) {
  CandidateLinkSpace space(pair.first.user_count(), pair.second.user_count());
  for (const auto& a : pair.anchors) space.add(a);
  space.positive_count_ = space.size();
  for (const auto& n : sampled_negatives) space.add(n);
  return space;
}

/// H = U1 x U2, anchors first. Only sensible for tiny graphs.
inline CandidateLinkSpace build_full_candidate_space(const AlignedNetworkPair& pair) {
  std::unordered_set<AnchorLink, AnchorHash> positives(pair.anchors.begin(), pair.anchors.end());
  std::vector<AnchorLink> rest;
  for (UserIndex u = 0; u < pair.first.user_count(); ++u) {
    for (UserIndex v = 0; v < pair.second.user_count(); ++v) {
      if (!positives.contains({u, v})) rest.push_back({u, v});
    }
  }
  return build_candidate_space(pair, rest);
}

}  // namespace activeiter
