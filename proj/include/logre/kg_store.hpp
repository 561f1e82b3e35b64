#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "logre/types.hpp"

namespace logre {

inline constexpr std::string_view kOthersType = "others";

struct Fact {
  EntityId head;
  RelationId relation;  // base relation
  EntityId tail;
  friend bool operator==(const Fact&, const Fact&) = default;
  friend auto operator<=>(const Fact&, const Fact&) = default;
};

struct Edge {
  RelationId relation;  // traversable label
  EntityId target;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Binary participation vector over the 2|R| traversable labels of an entity.
class RelationSignature {
 public:
  RelationSignature() = default;
  explicit RelationSignature(std::size_t bits) : bits_(bits), words_((bits + 63) / 64, 0) {}

  std::size_t size() const { return bits_; }
  bool test(std::size_t i) const { return (words_.at(i / 64) >> (i % 64)) & 1U; }
  void set(std::size_t i) { words_.at(i / 64) |= (std::uint64_t{1} << (i % 64)); }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }
  std::span<const std::uint64_t> words() const { return words_; }

  friend bool operator==(const RelationSignature&, const RelationSignature&) = default;

 private:
  std::size_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

// Cosine of two binary vectors, kept exact as dot / sqrt(norm_product).
struct Similarity {
  std::uint64_t dot = 0;
  std::uint64_t norm_product = 0;  // |a| * |b|; zero when either vector is all-zero

  double value() const {
    if (norm_product == 0) return 0.0;
    return static_cast<double>(dot) / std::sqrt(static_cast<double>(norm_product));
  }
  // value()^2 as an exact rational.
  Rational squared() const {
    if (norm_product == 0) return Rational(0);
    Rational q(mpz_class(dot) * mpz_class(dot), mpz_class(norm_product));
    q.canonicalize();
    return q;
  }
  static Similarity one() { return {1, 1}; }

  // Exact ordering by value: compares dot_a^2 * np_b with dot_b^2 * np_a.
  // A zero norm product means value 0.
  friend bool operator<(const Similarity& a, const Similarity& b) { return compare(a, b) < 0; }
  friend bool operator==(const Similarity& a, const Similarity& b) { return compare(a, b) == 0; }

  static int compare(const Similarity& a, const Similarity& b) {
    using u128 = unsigned __int128;
    const u128 lhs = a.norm_product == 0 ? 0 : u128(a.dot) * a.dot * (b.norm_product == 0 ? 1 : b.norm_product);
    const u128 rhs = b.norm_product == 0 ? 0 : u128(b.dot) * b.dot * (a.norm_product == 0 ? 1 : a.norm_product);
    return lhs < rhs ? -1 : (lhs > rhs ? 1 : 0);
  }
};

inline Similarity cosine_similarity(const RelationSignature& a, const RelationSignature& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  std::uint64_t dot = 0;
  auto wa = a.words();
  auto wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) dot += static_cast<std::uint64_t>(std::popcount(wa[i] & wb[i]));
  std::uint64_t na = a.count();
  std::uint64_t nb = b.count();
  if (na == 0 || nb == 0) return {0, 0};
  return {dot, na * nb};
}

struct LoadOptions {
  // Types dropped before the most-frequent selection (e.g. "/common/topic").
  std::vector<std::string> ignored_types;
};

// Immutable triple store over the training split, with inverse-augmented
// adjacency stored CSR-style: each entity owns a run of edges sorted by
// (relation, target).
class KnowledgeGraph {
 public:
  std::size_t num_entities() const { return entity_names_.size(); }
  std::size_t num_relations() const { return relation_names_.size(); }
  std::size_t num_labels() const { return 2 * relation_names_.size(); }
  std::size_t num_types() const { return type_names_.size(); }

  RelationId inverse(RelationId r) const {
    check_label(r);
    const auto R = static_cast<RelationId>(num_relations());
    return r < R ? r + R : r - R;
  }
  bool is_inverse(RelationId r) const { return r >= num_relations(); }
  RelationId base_of(RelationId r) const { return is_inverse(r) ? inverse(r) : r; }

  std::span<const Edge> out_edges(EntityId e) const {
    check_entity(e);
    return {edges_.data() + offsets_[e], edges_.data() + offsets_[e + 1]};
  }

  // Training neighbours of e under traversable label r, ascending entity id.
  std::span<const EntityId> successors(EntityId e, RelationId r) const {
    check_entity(e);
    check_label(r);
    auto edges = out_edges(e);
    auto lo = std::lower_bound(edges.begin(), edges.end(), Edge{r, 0});
    auto hi = std::lower_bound(lo, edges.end(), Edge{r + 1, 0});
    std::size_t first = offsets_[e] + static_cast<std::size_t>(lo - edges.begin());
    std::size_t last = offsets_[e] + static_cast<std::size_t>(hi - edges.begin());
    return {targets_.data() + first, targets_.data() + last};
  }

  bool has_edge(EntityId h, RelationId r, EntityId t) const {
    auto s = successors(h, r);
    return std::binary_search(s.begin(), s.end(), t);
  }

  // Base relations for which e is the head of at least one training fact.
  std::vector<RelationId> head_relations(EntityId e) const {
    std::vector<RelationId> out;
    for (const Edge& edge : out_edges(e)) {
      if (edge.relation >= num_relations()) break;
      if (out.empty() || out.back() != edge.relation) out.push_back(edge.relation);
    }
    return out;
  }

  const std::vector<Fact>& facts() const { return facts_; }

  TypeId type_of(EntityId e) const {
    check_entity(e);
    return entity_types_[e];
  }
  const std::string& type_name(TypeId t) const { return type_names_.at(t); }
  std::optional<TypeId> find_type(std::string_view name) const {
    auto it = std::find(type_names_.begin(), type_names_.end(), name);
    if (it == type_names_.end()) return std::nullopt;
    return static_cast<TypeId>(it - type_names_.begin());
  }

  const std::string& entity_name(EntityId e) const {
    check_entity(e);
    return entity_names_[e];
  }
  const std::string& relation_name(RelationId base) const { return relation_names_.at(base); }
  std::string label_name(RelationId r) const {
    check_label(r);
    return is_inverse(r) ? relation_display(base_of(r)) + "^-1" : relation_display(r);
  }

  // Human-readable names when a name map was supplied, identifiers otherwise.
  const std::string& entity_display(EntityId e) const {
    check_entity(e);
    auto it = entity_display_.find(e);
    return it == entity_display_.end() ? entity_names_[e] : it->second;
  }
  const std::string& relation_display(RelationId base) const {
    auto it = relation_display_.find(base);
    return it == relation_display_.end() ? relation_names_.at(base) : it->second;
  }
  bool has_entity_display_names() const { return !entity_display_.empty(); }
  const std::unordered_map<EntityId, std::string>& entity_display_map() const { return entity_display_; }
  const std::unordered_map<RelationId, std::string>& relation_display_map() const { return relation_display_; }

  std::optional<EntityId> find_entity(std::string_view id) const {
    auto it = entity_index_.find(std::string(id));
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<RelationId> find_relation(std::string_view id) const {
    auto it = relation_index_.find(std::string(id));
    if (it == relation_index_.end()) return std::nullopt;
    return it->second;
  }

  const RelationSignature& relation_signature(EntityId e) const {
    check_entity(e);
    return signatures_[e];
  }

  // Fingerprint of vocabularies, training facts and type assignment.
  const std::string& content_hash() const { return hash_; }

  void set_display_names(std::unordered_map<EntityId, std::string> entities,
                         std::unordered_map<RelationId, std::string> relations) {
    entity_display_ = std::move(entities);
    relation_display_ = std::move(relations);
  }

 private:
  friend class GraphBuilder;

  void check_entity(EntityId e) const {
    if (e >= num_entities()) throw LookupError("entity id out of vocabulary: " + std::to_string(e));
  }
  void check_label(RelationId r) const {
    if (r >= num_labels()) throw LookupError("relation id out of vocabulary: " + std::to_string(r));
  }

  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, EntityId> entity_index_;
  std::unordered_map<std::string, RelationId> relation_index_;
  std::vector<Fact> facts_;
  std::vector<std::size_t> offsets_;
  std::vector<Edge> edges_;
  std::vector<EntityId> targets_;  // edges_[i].target, contiguous for span access
  std::vector<TypeId> entity_types_;
  std::vector<std::string> type_names_;
  std::vector<RelationSignature> signatures_;
  std::unordered_map<EntityId, std::string> entity_display_;
  std::unordered_map<RelationId, std::string> relation_display_;
  std::string hash_;
};

// Accumulates vocabularies in first-seen order. Training facts feed the
// adjacency; evaluation facts only extend the vocabularies.
class GraphBuilder {
 public:
  Fact add_train(std::string_view head, std::string_view relation, std::string_view tail) {
    Fact f{entity(head), relation_id(relation), entity(tail)};
    train_.push_back(f);
    return f;
  }
  Fact add_eval(std::string_view head, std::string_view relation, std::string_view tail) {
    return Fact{entity(head), relation_id(relation), entity(tail)};
  }
  void add_type(std::string_view entity_name, std::string_view type) {
    type_pairs_.emplace_back(entity_name, type);
  }

  bool has_training_facts() const { return !train_.empty(); }

  KnowledgeGraph build(const LoadOptions& options = {}) const {
    KnowledgeGraph g;
    g.entity_names_ = entity_names_;
    g.relation_names_ = relation_names_;
    g.entity_index_ = entity_index_;
    g.relation_index_ = relation_index_;

    const auto E = entity_names_.size();
    const auto R = static_cast<RelationId>(relation_names_.size());

    std::set<Fact> seen;
    for (const Fact& f : train_) {
      if (seen.insert(f).second) g.facts_.push_back(f);
    }

    std::vector<std::vector<Edge>> per_entity(E);
    for (const Fact& f : g.facts_) {
      per_entity[f.head].push_back({f.relation, f.tail});
      per_entity[f.tail].push_back({f.relation + R, f.head});
    }
    g.offsets_.assign(E + 1, 0);
    for (std::size_t e = 0; e < E; ++e) {
      auto& edges = per_entity[e];
      std::sort(edges.begin(), edges.end());
      edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
      g.offsets_[e + 1] = g.offsets_[e] + edges.size();
    }
    g.edges_.reserve(g.offsets_[E]);
    for (auto& edges : per_entity) g.edges_.insert(g.edges_.end(), edges.begin(), edges.end());
    g.targets_.reserve(g.edges_.size());
    for (const Edge& edge : g.edges_) g.targets_.push_back(edge.target);

    g.signatures_.assign(E, RelationSignature(2 * R));
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t i = g.offsets_[e]; i < g.offsets_[e + 1]; ++i) g.signatures_[e].set(g.edges_[i].relation);
    }

    assign_types(g, options);

    Fingerprint fp;
    fp.update_u64(E);
    for (const auto& name : entity_names_) {
      fp.update(name);
      fp.update(std::string_view("\0", 1));
    }
    fp.update_u64(R);
    for (const auto& name : relation_names_) {
      fp.update(name);
      fp.update(std::string_view("\0", 1));
    }
    fp.update_u64(g.facts_.size());
    for (const Fact& f : g.facts_) {
      fp.update_u64(f.head);
      fp.update_u64(f.relation);
      fp.update_u64(f.tail);
    }
    for (std::size_t e = 0; e < E; ++e) {
      fp.update(g.type_names_[g.entity_types_[e]]);
      fp.update(std::string_view("\0", 1));
    }
    g.hash_ = fp.hex();
    return g;
  }

 private:
  EntityId entity(std::string_view name) {
    auto [it, inserted] = entity_index_.try_emplace(std::string(name), static_cast<EntityId>(entity_names_.size()));
    if (inserted) entity_names_.emplace_back(name);
    return it->second;
  }
  RelationId relation_id(std::string_view name) {
    auto [it, inserted] =
        relation_index_.try_emplace(std::string(name), static_cast<RelationId>(relation_names_.size()));
    if (inserted) relation_names_.emplace_back(name);
    return it->second;
  }

  // Most frequent type per entity, ties to the lexicographically smallest
  // name; entities without a (non-ignored) type fall back to "others".
  void assign_types(KnowledgeGraph& g, const LoadOptions& options) const {
    std::set<std::string, std::less<>> ignored(options.ignored_types.begin(), options.ignored_types.end());
    std::vector<std::map<std::string, std::size_t, std::less<>>> counts(entity_names_.size());
    for (const auto& [name, type] : type_pairs_) {
      if (ignored.contains(type)) continue;
      auto it = entity_index_.find(name);
      if (it == entity_index_.end()) continue;
      ++counts[it->second][type];
    }
    std::vector<std::string> chosen(entity_names_.size());
    std::set<std::string> used;
    for (std::size_t e = 0; e < counts.size(); ++e) {
      std::string best(kOthersType);
      std::size_t best_count = 0;
      for (const auto& [type, c] : counts[e]) {  // ascending name, so strict > keeps the smallest on ties
        if (c > best_count) {
          best = type;
          best_count = c;
        }
      }
      chosen[e] = best;
      used.insert(best);
    }
    g.type_names_.assign(used.begin(), used.end());
    g.entity_types_.resize(entity_names_.size());
    for (std::size_t e = 0; e < chosen.size(); ++e) {
      auto it = std::lower_bound(g.type_names_.begin(), g.type_names_.end(), chosen[e]);
      g.entity_types_[e] = static_cast<TypeId>(it - g.type_names_.begin());
    }
  }

  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, EntityId> entity_index_;
  std::unordered_map<std::string, RelationId> relation_index_;
  std::vector<Fact> train_;
  std::vector<std::pair<std::string, std::string>> type_pairs_;
};

struct Dataset {
  KnowledgeGraph graph;
  std::vector<Fact> valid;
  std::vector<Fact> test;
};

namespace detail {

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

// Calls fn(fields, line_number) for each line of a tab-separated file with
// exactly `columns` non-empty fields.
template <typename Fn>
void for_each_record(const std::filesystem::path& path, std::size_t columns, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError(path.string(), line_no, "blank line");
    auto fields = split_tabs(line);
    if (fields.size() != columns) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(columns) + " tab-separated fields, got " +
                           std::to_string(fields.size()));
    }
    for (auto f : fields) {
      if (f.empty()) throw ParseError(path.string(), line_no, "empty field");
    }
    fn(fields, line_no);
  }
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& train_path, const std::filesystem::path& valid_path,
                            const std::filesystem::path& test_path, const std::filesystem::path& types_path,
                            const LoadOptions& options = {}) {
  GraphBuilder builder;
  detail::for_each_record(train_path, 3, [&](const auto& f, std::size_t) { builder.add_train(f[0], f[1], f[2]); });
  if (!builder.has_training_facts()) throw InvalidDataset("empty training file: " + train_path.string());

  Dataset ds;
  std::vector<Fact> valid, test;
  detail::for_each_record(valid_path, 3,
                          [&](const auto& f, std::size_t) { valid.push_back(builder.add_eval(f[0], f[1], f[2])); });
  detail::for_each_record(test_path, 3,
                          [&](const auto& f, std::size_t) { test.push_back(builder.add_eval(f[0], f[1], f[2])); });
  detail::for_each_record(types_path, 2, [&](const auto& f, std::size_t) { builder.add_type(f[0], f[1]); });

  ds.graph = builder.build(options);
  ds.valid = std::move(valid);
  ds.test = std::move(test);
  return ds;
}

// Optional `identifier<TAB>display name` maps.
inline void load_display_names(KnowledgeGraph& g, const std::filesystem::path& entity_names,
                               const std::filesystem::path& relation_names) {
  std::unordered_map<EntityId, std::string> ents;
  std::unordered_map<RelationId, std::string> rels;
  if (std::filesystem::exists(entity_names)) {
    detail::for_each_record(entity_names, 2, [&](const auto& f, std::size_t) {
      if (auto e = g.find_entity(f[0])) ents[*e] = std::string(f[1]);
    });
  }
  if (std::filesystem::exists(relation_names)) {
    detail::for_each_record(relation_names, 2, [&](const auto& f, std::size_t) {
      if (auto r = g.find_relation(f[0])) rels[*r] = std::string(f[1]);
    });
  }
  g.set_display_names(std::move(ents), std::move(rels));
}

// Standard dataset directory: train/valid/test.triples, entity_types.tsv and
// optional entity_names.tsv / relation_names.tsv.
inline Dataset load_dataset_dir(const std::filesystem::path& dir, const LoadOptions& options = {}) {
  Dataset ds = load_dataset(dir / "train.triples", dir / "valid.triples", dir / "test.triples",
                            dir / "entity_types.tsv", options);
  load_display_names(ds.graph, dir / "entity_names.tsv", dir / "relation_names.tsv");
  return ds;
}

inline std::span<const EntityId> successors(const KnowledgeGraph& g, EntityId e, RelationId r) {
  return g.successors(e, r);
}

inline const RelationSignature& relation_signature(const KnowledgeGraph& g, EntityId e) {
  return g.relation_signature(e);
}

}  // namespace logre
