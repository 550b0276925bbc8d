#pragma once

// Meta path / meta diagram instance counting and proximity features.
//
// Path counts are chain products of sparse relation matrices.  Diagram
// counts decompose the stacked paths at positions every path passes
// through (chain product across them) and, between two such positions,
// join independent branches with an element-wise product.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "activeiter/errors.hpp"
#include "activeiter/hetnet.hpp"
#include "activeiter/meta_diagram.hpp"

namespace activeiter {

using SparseCounts = Eigen::SparseMatrix<std::int64_t, Eigen::RowMajor>;
using SparseScores = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Relation matrices of an aligned pair in canonical orientation. Attribute
/// values share one vocabulary across both networks.
class RelationIndex {
 public:
  RelationIndex(const AlignedNetworkPair& pair, const std::vector<AnchorLink>& known_anchors) {
    const auto& g1 = pair.first;
    const auto& g2 = pair.second;
    dims_[idx(PositionKind::User1)] = g1.user_count();
    dims_[idx(PositionKind::Post1)] = g1.post_count();
    dims_[idx(PositionKind::User2)] = g2.user_count();
    dims_[idx(PositionKind::Post2)] = g2.post_count();

    follow_[0] = from_pairs(g1.user_count(), g1.user_count(), g1.follow_edges());
    follow_[1] = from_pairs(g2.user_count(), g2.user_count(), g2.follow_edges());
    write_[0] = from_pairs(g1.user_count(), g1.post_count(), g1.write_edges());
    write_[1] = from_pairs(g2.user_count(), g2.post_count(), g2.write_edges());

    constexpr AttrType attr_types[] = {AttrType::Timestamp, AttrType::Location, AttrType::Word};
    constexpr PositionKind attr_kinds[] = {PositionKind::Timestamp, PositionKind::Location,
                                           PositionKind::Word};
    for (int a = 0; a < 3; ++a) {
      std::unordered_map<std::string, std::uint32_t> vocab;
      auto encode = [&](const HeterogeneousNetwork& g) {
        std::vector<std::pair<std::uint32_t, std::uint32_t>> rows;
        for (const auto& [post, value] : g.post_attributes(attr_types[a])) {
          auto [it, _] = vocab.try_emplace(value, static_cast<std::uint32_t>(vocab.size()));
          rows.emplace_back(post, it->second);
        }
        return rows;
      };
      auto rows1 = encode(g1);
      auto rows2 = encode(g2);
      dims_[idx(attr_kinds[a])] = vocab.size();
      attr_[a][0] = from_pairs(g1.post_count(), vocab.size(), rows1);
      attr_[a][1] = from_pairs(g2.post_count(), vocab.size(), rows2);
    }

    std::vector<std::pair<std::uint32_t, std::uint32_t>> anchors;
    for (const auto& a : known_anchors) anchors.emplace_back(a.user1, a.user2);
    anchor_ = from_pairs(g1.user_count(), g2.user_count(), anchors);
  }

  std::size_t dimension(PositionKind k) const { return dims_[idx(k)]; }

  /// Canonical relation matrix whose rows are `source` positions.
  const SparseCounts& canonical(Relation rel, PositionKind source) const {
    const int side = is_second_network(source) ? 1 : 0;
    switch (rel) {
      case Relation::Follow: return follow_[side];
      case Relation::Write: return write_[side];
      case Relation::At: return attr_[0][side];
      case Relation::Checkin: return attr_[1][side];
      case Relation::Contains: return attr_[2][side];
      case Relation::Anchor: return anchor_;
    }
    throw Error("unknown relation");
  }

  /// Matrix of one path step from a `from` position to a `to` position.
  SparseCounts step(PositionKind from, PositionKind to, Step s) const {
    if (s.forward) return canonical(s.relation, from);
    return SparseCounts(canonical(s.relation, to).transpose());
  }

 private:
  static constexpr std::size_t idx(PositionKind k) { return static_cast<std::size_t>(k); }

  static SparseCounts from_pairs(std::size_t rows, std::size_t cols,
                                 const std::vector<std::pair<std::uint32_t, std::uint32_t>>& nz) {
    std::vector<Eigen::Triplet<std::int64_t>> trips;
    trips.reserve(nz.size());
    for (auto [r, c] : nz) trips.emplace_back(r, c, 1);
    SparseCounts m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    // Inputs are deduplicated upstream; keep entries 0/1 regardless.
    m.setFromTriplets(trips.begin(), trips.end(), [](std::int64_t, std::int64_t) { return 1; });
    return m;
  }

  std::size_t dims_[7] = {};
  SparseCounts follow_[2];
  SparseCounts write_[2];
  SparseCounts attr_[3][2];
  SparseCounts anchor_;
};

/// Instance counts between first-network users (rows) and second-network
/// users (columns), with their marginals.
struct CountMatrix {
  SparseCounts counts;
  std::vector<std::int64_t> row_totals;
  std::vector<std::int64_t> col_totals;

  std::int64_t at(UserIndex u, UserIndex v) const { return counts.coeff(u, v); }

  static CountMatrix from(SparseCounts m) {
    CountMatrix c;
    c.row_totals.assign(static_cast<std::size_t>(m.rows()), 0);
    c.col_totals.assign(static_cast<std::size_t>(m.cols()), 0);
    for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
      for (SparseCounts::InnerIterator it(m, r); it; ++it) {
        c.row_totals[static_cast<std::size_t>(it.row())] += it.value();
        c.col_totals[static_cast<std::size_t>(it.col())] += it.value();
      }
    }
    c.counts = std::move(m);
    return c;
  }
};

namespace detail {

// Product of a chain of sparse matrices, parenthesized by the classic
// matrix-chain DP on dense dimensions.
inline SparseCounts chain_product(const std::vector<SparseCounts>& chain) {
  const std::size_t n = chain.size();
  if (n == 1) return chain.front();
  std::vector<double> dim(n + 1);
  dim[0] = static_cast<double>(chain[0].rows());
  for (std::size_t i = 0; i < n; ++i) dim[i + 1] = static_cast<double>(chain[i].cols());
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  std::vector<std::vector<std::size_t>> split(n, std::vector<std::size_t>(n, 0));
  for (std::size_t len = 2; len <= n; ++len) {
    for (std::size_t i = 0; i + len <= n; ++i) {
      const std::size_t j = i + len - 1;
      cost[i][j] = std::numeric_limits<double>::infinity();
      for (std::size_t k = i; k < j; ++k) {
        double c = cost[i][k] + cost[k + 1][j] + dim[i] * dim[k + 1] * dim[j + 1];
        if (c < cost[i][j]) cost[i][j] = c, split[i][j] = k;
      }
    }
  }
  auto eval = [&](auto&& self, std::size_t i, std::size_t j) -> SparseCounts {
    if (i == j) return chain[i];
    auto k = split[i][j];
    SparseCounts left = self(self, i, k);
    SparseCounts right = self(self, k + 1, j);
    SparseCounts out = left * right;
    return out;
  };
  return eval(eval, 0, n - 1);
}

inline SparseCounts path_segment(const RelationIndex& rel, const MetaPath& p, std::size_t begin,
                                 std::size_t end) {
  std::vector<SparseCounts> chain;
  for (std::size_t k = begin; k < end; ++k) {
    chain.push_back(rel.step(p.positions[k], p.positions[k + 1], p.steps[k]));
  }
  return chain_product(chain);
}

}  // namespace detail

/// Counts of one meta path between all user pairs. Anchor steps traverse
/// only the anchors given to the RelationIndex.
inline CountMatrix count_path_instances(const RelationIndex& rel, const MetaPath& path) {
  validate(path);
  return CountMatrix::from(detail::path_segment(rel, path, 0, path.length()));
}

/// Memo of full source-to-sink count matrices keyed by the multiset of
/// stacked path names.
class CountCache {
 public:
  const SparseCounts* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  void store(const std::string& key, const SparseCounts& m) { entries_.emplace(key, m); }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t hits() const noexcept { return hits_; }
  void record_hit() noexcept { ++hits_; }

 private:
  std::map<std::string, SparseCounts> entries_;
  std::size_t hits_ = 0;
};

namespace detail {

class DiagramCounter {
 public:
  DiagramCounter(const RelationIndex& rel, const MetaDiagram& d, CountCache* cache)
      : rel_(rel), d_(d), cache_(cache) {}

  SparseCounts full() {
    std::vector<std::size_t> group(d_.paths.size());
    std::iota(group.begin(), group.end(), 0);
    std::vector<std::size_t> begin(group.size(), 0), end;
    for (const auto& p : d_.paths) end.push_back(p.length());
    return span(group, begin, end);
  }

 private:
  // Counts between the common start and common end positions of `group`;
  // begin[i]/end[i] are local indices inside d_.paths[group[i]].
  SparseCounts span(const std::vector<std::size_t>& group, const std::vector<std::size_t>& begin,
                    const std::vector<std::size_t>& end) {
    const bool whole = is_whole(group, begin, end);
    std::string key;
    if (whole && cache_) {
      key = cache_key(group);
      if (const auto* hit = cache_->find(key)) {
        cache_->record_hit();
        return *hit;
      }
    }
    SparseCounts out = compute(group, begin, end);
    if (whole && cache_) cache_->store(key, out);
    return out;
  }

  SparseCounts compute(const std::vector<std::size_t>& group,
                       const std::vector<std::size_t>& begin, const std::vector<std::size_t>& end) {
    if (group.size() == 1) {
      return path_segment(rel_, d_.paths[group[0]], begin[0], end[0]);
    }

    // Interior positions every path of the group passes through. Merged
    // intermediates share their local index across paths.
    std::vector<std::size_t> cuts;
    const auto& lead = d_.embedding[group[0]];
    for (std::size_t k = begin[0] + 1; k < end[0]; ++k) {
      bool shared = true;
      for (std::size_t i = 1; i < group.size() && shared; ++i) {
        const auto& emb = d_.embedding[group[i]];
        shared = k > begin[i] && k < end[i] && emb[k] == lead[k];
      }
      if (shared) cuts.push_back(k);
    }

    if (!cuts.empty()) {
      std::vector<SparseCounts> chain;
      std::vector<std::size_t> from = begin;
      for (auto k : cuts) {
        std::vector<std::size_t> to(group.size(), k);
        chain.push_back(span(group, from, to));
        from = to;
      }
      chain.push_back(span(group, from, end));
      return chain_product(chain);
    }

    // Split into branches with disjoint interiors.
    std::vector<std::size_t> parent(group.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    std::map<std::size_t, std::size_t> owner;  // diagram position -> group slot
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto& emb = d_.embedding[group[i]];
      for (std::size_t k = begin[i] + 1; k < end[i]; ++k) {
        auto [it, fresh] = owner.try_emplace(emb[k], i);
        if (!fresh) parent[find(i)] = find(it->second);
      }
    }
    std::map<std::size_t, std::vector<std::size_t>> branches;
    for (std::size_t i = 0; i < group.size(); ++i) branches[find(i)].push_back(i);
    if (branches.size() == 1) {
      throw IncompatiblePathsError("diagram '" + d_.name +
                                   "' is not decomposable into series/parallel segments");
    }

    SparseCounts joined;
    bool first = true;
    for (const auto& [_, slots] : branches) {
      std::vector<std::size_t> g, b, e;
      for (auto s : slots) g.push_back(group[s]), b.push_back(begin[s]), e.push_back(end[s]);
      SparseCounts part = span(g, b, e);
      if (first) {
        joined = std::move(part);
        first = false;
      } else {
        joined = joined.cwiseProduct(part);
      }
    }
    return joined;
  }

  bool is_whole(const std::vector<std::size_t>& group, const std::vector<std::size_t>& begin,
                const std::vector<std::size_t>& end) const {
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (begin[i] != 0 || end[i] != d_.paths[group[i]].length()) return false;
    }
    return true;
  }

  std::string cache_key(const std::vector<std::size_t>& group) const {
    std::vector<std::string> names;
    for (auto g : group) names.push_back(d_.paths[g].name);
    std::sort(names.begin(), names.end());
    std::string key;
    for (const auto& n : names) key += n + ',';
    return key;
  }

  const RelationIndex& rel_;
  const MetaDiagram& d_;
  CountCache* cache_;
};

}  // namespace detail

/// Counts of a meta diagram between all user pairs. Passing a cache lets
/// diagrams reuse counts of previously computed sub-diagrams whose covering
/// sets are subsets of this one's.
inline CountMatrix count_diagram_instances(const RelationIndex& rel, const MetaDiagram& diagram,
                                           CountCache* cache = nullptr) {
  validate(diagram);
  return CountMatrix::from(detail::DiagramCounter(rel, diagram, cache).full());
}

/// s(u,v) = 2 c(u,v) / (c(u,.) + c(.,v)); zero where both marginals vanish.
inline double proximity(std::int64_t pair, std::int64_t out_total, std::int64_t in_total) {
  const auto denom = out_total + in_total;
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(pair) / static_cast<double>(denom);
}

inline SparseScores proximity_matrix(const CountMatrix& c) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(c.counts.nonZeros()));
  for (Eigen::Index r = 0; r < c.counts.outerSize(); ++r) {
    for (SparseCounts::InnerIterator it(c.counts, r); it; ++it) {
      if (it.value() == 0) continue;
      trips.emplace_back(it.row(), it.col(),
                         proximity(it.value(), c.row_totals[static_cast<std::size_t>(it.row())],
                                   c.col_totals[static_cast<std::size_t>(it.col())]));
    }
  }
  SparseScores s(c.counts.rows(), c.counts.cols());
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

/// Dense |H| x (|diagrams| + 1) matrix; the last column is the constant bias.
struct FeatureMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> columns;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

inline FeatureMatrix build_feature_matrix(const CandidateLinkSpace& space,
                                          const std::vector<MetaDiagram>& diagrams,
                                          const AlignedNetworkPair& pair,
                                          const std::vector<AnchorLink>& known_anchors,
                                          bool use_cache = true) {
  RelationIndex rel(pair, known_anchors);
  CountCache cache;
  FeatureMatrix fm;
  const auto n = static_cast<Eigen::Index>(space.size());
  fm.values = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(diagrams.size() + 1));
  for (std::size_t k = 0; k < diagrams.size(); ++k) {
    auto counts = count_diagram_instances(rel, diagrams[k], use_cache ? &cache : nullptr);
    auto scores = proximity_matrix(counts);
    for (Eigen::Index l = 0; l < n; ++l) {
      const auto& link = space[static_cast<LinkId>(l)];
      fm.values(l, static_cast<Eigen::Index>(k)) = scores.coeff(link.user1, link.user2);
    }
    fm.columns.push_back(diagrams[k].name);
  }
  fm.values.col(static_cast<Eigen::Index>(diagrams.size())).setOnes();
  fm.columns.push_back("bias");
  return fm;
}

/// CSV with header link_id,<diagram names...>,bias,label.
inline void write_feature_csv(const FeatureMatrix& fm, const std::vector<int>& labels,
                              std::ostream& out) {
  out << "link_id";
  for (const auto& c : fm.columns) out << ',' << c;
  out << ",label\n";
  const auto old_precision = out.precision(17);
  for (Eigen::Index l = 0; l < fm.values.rows(); ++l) {
    out << l;
    for (Eigen::Index k = 0; k < fm.values.cols(); ++k) out << ',' << fm.values(l, k);
    out << ',' << (static_cast<std::size_t>(l) < labels.size() ? labels[static_cast<std::size_t>(l)] : 0)
        << '\n';
  }
  out.precision(old_precision);
}

}  // namespace activeiter
