#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <boost/container_hash/hash.hpp>

#include "logre/kg_store.hpp"
#include "logre/path_sampler.hpp"

namespace logre {

inline constexpr std::size_t kDefaultTailCap = 64;

struct PathStats {
  std::uint64_t m = 0;  // occurrences among qualifying walks
  std::uint64_t n = 0;  // occurrences ending at a correct tail
  friend bool operator==(const PathStats&, const PathStats&) = default;
};

inline Rational path_precision(const PathStats& stats) {
  if (stats.m == 0) throw std::invalid_argument("path_precision: m must be >= 1");
  Rational q(mpz_class(static_cast<unsigned long>(stats.n)), mpz_class(static_cast<unsigned long>(stats.m)));
  q.canonicalize();
  return q;
}

inline void validate_decay(const Rational& d) {
  if (d <= 0 || d > 1) throw ConfigError("hop decay must lie in (0, 1], got " + to_string(d));
}

inline Rational apply_hop_decay(const Rational& raw_score, std::size_t length, const Rational& d) {
  validate_decay(d);
  if (length < 1) throw std::invalid_argument("apply_hop_decay: length must be >= 1");
  Rational factor = 1;
  for (std::size_t i = 0; i < length; ++i) factor *= d;
  return raw_score * factor;
}

struct ScoredPath {
  RelationSeq relations;
  PathStats stats;
  Rational raw_score;
  Rational final_score;
  std::vector<EntityId> example_tails;  // first-encountered order, capped

  std::size_t length() const { return relations.size(); }
  friend bool operator==(const ScoredPath&, const ScoredPath&) = default;
};

using PathList = std::vector<ScoredPath>;
using RelationPaths = std::map<RelationId, PathList>;

struct CrossTypeEntry {
  PathList paths;
  std::vector<TypeId> source_groups;  // ascending
  friend bool operator==(const CrossTypeEntry&, const CrossTypeEntry&) = default;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::size_t n_path = 0;
  std::size_t n_hop = 0;
  std::string graph_hash;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ReasoningSchema {
  std::map<TypeId, RelationPaths> type_groups;
  std::map<RelationId, CrossTypeEntry> cross_type;
  // Per-group lists of the relations moved to cross_type, kept for the
  // no-cross-type ablation and for checking the pooled scores.
  std::map<TypeId, RelationPaths> pre_lift;
  Rational decay = 1;
  Provenance provenance;
  std::size_t tail_cap = kDefaultTailCap;

  std::size_t total_paths() const {
    std::size_t n = 0;
    for (const auto& [t, rels] : type_groups)
      for (const auto& [r, paths] : rels) n += paths.size();
    for (const auto& [r, entry] : cross_type) n += entry.paths.size();
    return n;
  }

  friend bool operator==(const ReasoningSchema&, const ReasoningSchema&) = default;
};

// Sort order of every path list: final score descending, then shorter,
// then lexicographic relation sequence.
inline bool path_order(const ScoredPath& a, const ScoredPath& b) {
  if (a.final_score != b.final_score) return a.final_score > b.final_score;
  if (a.length() != b.length()) return a.length() < b.length();
  return a.relations < b.relations;
}

struct RelationSeqHash {
  std::size_t operator()(const RelationSeq& s) const { return boost::hash_range(s.begin(), s.end()); }
};

// Counts for one path under one (group, relation) before scoring.
struct CollectedPath {
  PathStats stats;
  std::vector<EntityId> example_tails;
};

using CollectedPaths = std::map<RelationSeq, CollectedPath>;

namespace detail {

inline void add_tail(std::vector<EntityId>& tails, EntityId t, std::size_t cap) {
  if (tails.size() >= cap) return;
  if (std::find(tails.begin(), tails.end(), t) == tails.end()) tails.push_back(t);
}

using Accumulator = std::unordered_map<RelationSeq, CollectedPath, RelationSeqHash>;

// Folds e's walks into the accumulator for base relation r.
inline void accumulate(const KnowledgeGraph& g, EntityId e, RelationId r, const std::vector<Walk>& walks,
                       std::size_t tail_cap, Accumulator& acc) {
  for (const Walk& w : walks) {
    auto& slot = acc[w.relations];
    ++slot.stats.m;
    if (g.has_edge(e, r, w.terminal)) {
      ++slot.stats.n;
      add_tail(slot.example_tails, w.terminal, tail_cap);
    }
  }
}

inline CollectedPaths drop_unproductive(Accumulator&& acc) {
  CollectedPaths out;
  for (auto& [seq, cp] : acc) {
    if (cp.stats.n > 0) out.emplace(seq, std::move(cp));
  }
  return out;
}

inline void merge_into(CollectedPath& into, const CollectedPath& from, std::size_t tail_cap) {
  into.stats.m += from.stats.m;
  into.stats.n += from.stats.n;
  for (EntityId t : from.example_tails) add_tail(into.example_tails, t, tail_cap);
}

}  // namespace detail

// Path statistics of base relation r over the entities of `group` that are
// heads of r. Paths that never reach a correct tail are dropped; an empty
// result means the pair has no schema entry.
template <typename WalkSource>
CollectedPaths collect_group_paths(const KnowledgeGraph& g, const WalkSource& walks, TypeId group, RelationId r,
                                   std::size_t tail_cap = kDefaultTailCap) {
  detail::Accumulator acc;
  for (EntityId e = 0; e < g.num_entities(); ++e) {
    if (g.type_of(e) != group) continue;
    if (g.successors(e, r).empty()) continue;
    detail::accumulate(g, e, r, walks.walks_of(e), tail_cap, acc);
  }
  return detail::drop_unproductive(std::move(acc));
}

using GroupCollections = std::map<TypeId, std::map<RelationId, CollectedPaths>>;

struct CrossTypeCollected {
  CollectedPaths pooled;
  std::vector<TypeId> source_groups;
};

struct LiftResult {
  std::map<RelationId, CrossTypeCollected> cross_type;
  GroupCollections residual;  // relations held by exactly one group
  GroupCollections lifted;    // per-group collections of the moved relations
};

// Moves every relation held by two or more groups into the cross-type group.
// A pooled path's counts are the sums over the groups where it appears, so
// its precision is sum(n) / sum(m).
inline LiftResult lift_cross_type(const GroupCollections& per_group, std::size_t tail_cap = kDefaultTailCap) {
  std::map<RelationId, std::vector<TypeId>> holders;
  for (const auto& [type, rels] : per_group)
    for (const auto& [r, paths] : rels)
      if (!paths.empty()) holders[r].push_back(type);

  LiftResult out;
  for (const auto& [type, rels] : per_group) {
    for (const auto& [r, paths] : rels) {
      if (paths.empty()) continue;
      if (holders[r].size() < 2) {
        out.residual[type][r] = paths;
        continue;
      }
      out.lifted[type][r] = paths;
      auto& entry = out.cross_type[r];
      entry.source_groups.push_back(type);
      for (const auto& [seq, cp] : paths) {
        auto [it, inserted] = entry.pooled.try_emplace(seq);
        detail::merge_into(it->second, cp, tail_cap);
      }
    }
  }
  return out;
}

inline PathList score_paths(const CollectedPaths& paths, const Rational& decay) {
  PathList out;
  out.reserve(paths.size());
  for (const auto& [seq, cp] : paths) {
    ScoredPath sp;
    sp.relations = seq;
    sp.stats = cp.stats;
    sp.raw_score = path_precision(cp.stats);
    sp.final_score = apply_hop_decay(sp.raw_score, seq.size(), decay);
    sp.example_tails = cp.example_tails;
    out.push_back(std::move(sp));
  }
  std::sort(out.begin(), out.end(), path_order);
  return out;
}

struct BuildStats {
  std::size_t walks = 0;
  std::size_t hops = 0;
  std::size_t productive_paths = 0;  // (group, relation, path) triples kept
};

struct SchemaBuildOptions {
  std::size_t tail_cap = kDefaultTailCap;
  std::size_t threads = 1;
  BuildStats* stats = nullptr;  // filled in when set
};

namespace detail {

// Varint bytes of a relation sequence; short paths stay in the string's
// inline buffer, which keeps the per-path maps small.
inline void encode_seq(const RelationSeq& seq, std::string& out) {
  out.clear();
  for (RelationId r : seq) {
    while (r >= 0x80) {
      out.push_back(static_cast<char>((r & 0x7f) | 0x80));
      r >>= 7;
    }
    out.push_back(static_cast<char>(r));
  }
}

inline RelationSeq decode_seq(std::string_view code) {
  RelationSeq seq;
  RelationId r = 0;
  int shift = 0;
  for (char c : code) {
    const auto byte = static_cast<unsigned char>(c);
    r |= static_cast<RelationId>(byte & 0x7f) << shift;
    if (byte & 0x80) {
      shift += 7;
    } else {
      seq.push_back(r);
      r = 0;
      shift = 0;
    }
  }
  return seq;
}

template <typename Fn>
void for_each_block(std::size_t entities, std::size_t threads, Fn&& fn) {
  const std::size_t block = entities == 0 ? 0 : (entities + threads - 1) / threads;
  parallel_for_entities(threads, threads, [&](EntityId t) {
    const std::size_t lo = t * block;
    fn(t, lo, std::min(entities, lo + block));
  });
}

}  // namespace detail

// Per (group, relation) statistics over every entity's walks.
//
// Two passes over the walks keep memory proportional to the paths that
// survive rather than to every sampled sequence: the first records which
// paths reach a correct tail at least once, the second counts occurrences
// of those paths only. Walk sources must return the same walks on every call.
template <typename WalkSource>
GroupCollections collect_all_groups(const KnowledgeGraph& g, const WalkSource& walks,
                                    const SchemaBuildOptions& options = {}) {
  using Key = std::pair<TypeId, RelationId>;
  const std::size_t E = g.num_entities();
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, E));

  // Pass 1: productive paths per key.
  std::vector<std::map<Key, std::unordered_set<std::string>>> found(threads);
  std::vector<BuildStats> tallies(threads);
  detail::for_each_block(E, threads, [&](std::size_t t, std::size_t lo, std::size_t hi) {
    std::string code;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto e = static_cast<EntityId>(i);
      auto rels = g.head_relations(e);
      if (rels.empty()) continue;
      const auto& ws = walks.walks_of(e);
      tallies[t].walks += ws.size();
      for (const Walk& w : ws) {
        tallies[t].hops += w.length();
        code.clear();
        for (RelationId r : rels) {
          if (!g.has_edge(e, r, w.terminal)) continue;
          if (code.empty()) detail::encode_seq(w.relations, code);
          found[t][{g.type_of(e), r}].insert(code);
        }
      }
    }
  });

  // Dense slot per (key, path).
  std::map<Key, std::unordered_map<std::string, std::uint32_t>> index;
  std::vector<std::pair<Key, const std::string*>> slots;
  for (auto& part : found) {
    for (auto& [key, codes] : part) {
      auto& into = index[key];
      for (auto& code : codes) into.try_emplace(code, 0);
    }
    part.clear();
  }
  for (auto& [key, codes] : index) {
    for (auto& [code, slot] : codes) {
      slot = static_cast<std::uint32_t>(slots.size());
      slots.emplace_back(key, &code);
    }
  }

  // Pass 2: counts and example tails of the productive paths.
  std::vector<std::vector<CollectedPath>> counts(threads);
  detail::for_each_block(E, threads, [&](std::size_t t, std::size_t lo, std::size_t hi) {
    auto& local = counts[t];
    local.resize(slots.size());
    std::string code;
    std::vector<std::pair<RelationId, const std::unordered_map<std::string, std::uint32_t>*>> lookups;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto e = static_cast<EntityId>(i);
      lookups.clear();
      for (RelationId r : g.head_relations(e)) {
        if (auto it = index.find({g.type_of(e), r}); it != index.end()) lookups.emplace_back(r, &it->second);
      }
      if (lookups.empty()) continue;
      for (const Walk& w : walks.walks_of(e)) {
        detail::encode_seq(w.relations, code);
        for (const auto& [r, table] : lookups) {
          auto it = table->find(code);
          if (it == table->end()) continue;
          auto& slot = local[it->second];
          ++slot.stats.m;
          if (g.has_edge(e, r, w.terminal)) {
            ++slot.stats.n;
            detail::add_tail(slot.example_tails, w.terminal, options.tail_cap);
          }
        }
      }
    }
  });

  // Blocks are merged in entity order so example tails keep sequential order.
  GroupCollections out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    CollectedPath merged;
    for (auto& part : counts) detail::merge_into(merged, part[i], options.tail_cap);
    const auto& [key, code] = slots[i];
    out[key.first][key.second].emplace(detail::decode_seq(*code), std::move(merged));
  }
  if (options.stats) {
    BuildStats total;
    for (const auto& t : tallies) {
      total.walks += t.walks;
      total.hops += t.hops;
    }
    total.productive_paths = slots.size();
    *options.stats = total;
  }
  return out;
}

template <typename WalkSource>
ReasoningSchema build_schema(const KnowledgeGraph& g, const WalkSource& walks, const Rational& decay,
                             const SchemaBuildOptions& options = {}) {
  validate_decay(decay);
  if (walks.graph_hash() != g.content_hash()) {
    throw ConsistencyError("walk dictionary was built for a different graph");
  }
  LiftResult lifted = lift_cross_type(collect_all_groups(g, walks, options), options.tail_cap);

  ReasoningSchema s;
  s.decay = decay;
  s.tail_cap = options.tail_cap;
  s.provenance = {walks.config().seed, walks.config().n_path, walks.config().n_hop, g.content_hash()};
  for (const auto& [type, rels] : lifted.residual)
    for (const auto& [r, paths] : rels) s.type_groups[type][r] = score_paths(paths, decay);
  for (const auto& [type, rels] : lifted.lifted)
    for (const auto& [r, paths] : rels) s.pre_lift[type][r] = score_paths(paths, decay);
  for (const auto& [r, entry] : lifted.cross_type) {
    s.cross_type[r] = CrossTypeEntry{score_paths(entry.pooled, decay), entry.source_groups};
  }
  return s;
}

// The same schema rescored and resorted under another decay factor.
inline ReasoningSchema with_decay(const ReasoningSchema& s, const Rational& decay) {
  validate_decay(decay);
  ReasoningSchema out = s;
  out.decay = decay;
  auto rescore = [&](PathList& paths) {
    for (auto& p : paths) p.final_score = apply_hop_decay(p.raw_score, p.length(), decay);
    std::sort(paths.begin(), paths.end(), path_order);
  };
  for (auto& [t, rels] : out.type_groups)
    for (auto& [r, paths] : rels) rescore(paths);
  for (auto& [t, rels] : out.pre_lift)
    for (auto& [r, paths] : rels) rescore(paths);
  for (auto& [r, entry] : out.cross_type) rescore(entry.paths);
  return out;
}

// ---------------------------------------------------------------------------
// Schema file: line-oriented text, one token group per line.
//
//   logre-schema 1
//   decay <p/q>
//   seed <u64>
//   n_path <n>
//   n_hop <n>
//   graph_hash <hex>
//   tail_cap <n>
//   type_groups <count>
//     group <type> <relation count>
//       relation <rel> <path count>
//         path <m> <n> <final p/q> <len> <r1 .. rlen> <tail count> <t1 ..>
//   cross_type <count>
//     relation <rel> <path count> <group count> <g1 ..>
//       path ...
//   pre_lift <count>
//     group ... (as type_groups)
//   end
// ---------------------------------------------------------------------------

inline constexpr int kSchemaFormatVersion = 1;

namespace detail {

inline void write_path(std::ostream& out, const ScoredPath& p) {
  out << "path " << p.stats.m << " " << p.stats.n << " " << to_string(p.final_score) << " " << p.length();
  for (auto r : p.relations) out << " " << r;
  out << " " << p.example_tails.size();
  for (auto t : p.example_tails) out << " " << t;
  out << "\n";
}

inline void write_groups(std::ostream& out, const char* section, const std::map<TypeId, RelationPaths>& groups) {
  out << section << " " << groups.size() << "\n";
  for (const auto& [type, rels] : groups) {
    out << "group " << type << " " << rels.size() << "\n";
    for (const auto& [r, paths] : rels) {
      out << "relation " << r << " " << paths.size() << "\n";
      for (const auto& p : paths) write_path(out, p);
    }
  }
}

class SchemaReader {
 public:
  SchemaReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::istringstream line(std::string_view expected_key) {
    std::string text;
    if (!std::getline(in_, text)) fail("unexpected end of file, expected '" + std::string(expected_key) + "'");
    ++line_no_;
    std::istringstream ls(text);
    std::string key;
    ls >> key;
    if (key != expected_key) fail("expected '" + std::string(expected_key) + "', found '" + key + "'");
    return ls;
  }

  template <typename T>
  T read(std::istringstream& ls, const char* what) {
    T v;
    if (!(ls >> v)) fail(std::string("bad ") + what);
    return v;
  }

  Rational read_rational(std::istringstream& ls, const char* what) {
    auto text = read<std::string>(ls, what);
    Rational q;
    if (q.set_str(text, 10) != 0 || q.get_den() == 0) fail(std::string("bad ") + what);
    q.canonicalize();
    return q;
  }

  void expect_end_of_line(std::istringstream& ls) {
    std::string extra;
    if (ls >> extra) fail("trailing data '" + extra + "'");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw SchemaFormatError(source_ + ":" + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

inline ScoredPath read_path(SchemaReader& rd, const Rational& decay) {
  auto ls = rd.line("path");
  ScoredPath p;
  p.stats.m = rd.read<std::uint64_t>(ls, "m");
  p.stats.n = rd.read<std::uint64_t>(ls, "n");
  p.final_score = rd.read_rational(ls, "final score");
  auto len = rd.read<std::size_t>(ls, "path length");
  if (len == 0) rd.fail("empty path");
  for (std::size_t i = 0; i < len; ++i) p.relations.push_back(rd.read<RelationId>(ls, "relation"));
  auto tails = rd.read<std::size_t>(ls, "tail count");
  for (std::size_t i = 0; i < tails; ++i) p.example_tails.push_back(rd.read<EntityId>(ls, "tail"));
  rd.expect_end_of_line(ls);
  if (p.stats.m == 0 || p.stats.n > p.stats.m) rd.fail("invalid path counts");
  p.raw_score = path_precision(p.stats);
  if (apply_hop_decay(p.raw_score, len, decay) != p.final_score) rd.fail("final score inconsistent with counts");
  return p;
}

inline PathList read_paths(SchemaReader& rd, std::size_t count, const Rational& decay) {
  PathList paths;
  paths.reserve(count);
  for (std::size_t i = 0; i < count; ++i) paths.push_back(read_path(rd, decay));
  return paths;
}

inline std::map<TypeId, RelationPaths> read_groups(SchemaReader& rd, const char* section, const Rational& decay) {
  auto head = rd.line(section);
  auto groups = rd.read<std::size_t>(head, "group count");
  std::map<TypeId, RelationPaths> out;
  for (std::size_t g = 0; g < groups; ++g) {
    auto gl = rd.line("group");
    auto type = rd.read<TypeId>(gl, "type");
    auto rels = rd.read<std::size_t>(gl, "relation count");
    auto& into = out[type];
    for (std::size_t i = 0; i < rels; ++i) {
      auto rl = rd.line("relation");
      auto r = rd.read<RelationId>(rl, "relation");
      auto count = rd.read<std::size_t>(rl, "path count");
      into[r] = read_paths(rd, count, decay);
    }
  }
  return out;
}

}  // namespace detail

inline void write_schema(std::ostream& out, const ReasoningSchema& s) {
  out << "logre-schema " << kSchemaFormatVersion << "\n";
  out << "decay " << to_string(s.decay) << "\n";
  out << "seed " << s.provenance.seed << "\n";
  out << "n_path " << s.provenance.n_path << "\n";
  out << "n_hop " << s.provenance.n_hop << "\n";
  out << "graph_hash " << s.provenance.graph_hash << "\n";
  out << "tail_cap " << s.tail_cap << "\n";
  detail::write_groups(out, "type_groups", s.type_groups);
  out << "cross_type " << s.cross_type.size() << "\n";
  for (const auto& [r, entry] : s.cross_type) {
    out << "relation " << r << " " << entry.paths.size() << " " << entry.source_groups.size();
    for (auto t : entry.source_groups) out << " " << t;
    out << "\n";
    for (const auto& p : entry.paths) detail::write_path(out, p);
  }
  detail::write_groups(out, "pre_lift", s.pre_lift);
  out << "end\n";
}

inline ReasoningSchema read_schema(std::istream& in, const std::string& source = "<schema>") {
  detail::SchemaReader rd(in, source);
  ReasoningSchema s;
  {
    auto ls = rd.line("logre-schema");
    auto version = rd.read<int>(ls, "format version");
    if (version != kSchemaFormatVersion) {
      rd.fail("unsupported schema format version " + std::to_string(version) + " (expected " +
              std::to_string(kSchemaFormatVersion) + ")");
    }
  }
  {
    auto ls = rd.line("decay");
    s.decay = rd.read_rational(ls, "decay");
    if (s.decay <= 0 || s.decay > 1) rd.fail("decay out of range");
  }
  {
    auto ls = rd.line("seed");
    s.provenance.seed = rd.read<std::uint64_t>(ls, "seed");
  }
  {
    auto ls = rd.line("n_path");
    s.provenance.n_path = rd.read<std::size_t>(ls, "n_path");
  }
  {
    auto ls = rd.line("n_hop");
    s.provenance.n_hop = rd.read<std::size_t>(ls, "n_hop");
  }
  {
    auto ls = rd.line("graph_hash");
    s.provenance.graph_hash = rd.read<std::string>(ls, "graph hash");
  }
  {
    auto ls = rd.line("tail_cap");
    s.tail_cap = rd.read<std::size_t>(ls, "tail cap");
  }
  s.type_groups = detail::read_groups(rd, "type_groups", s.decay);
  {
    auto ls = rd.line("cross_type");
    auto count = rd.read<std::size_t>(ls, "cross-type count");
    for (std::size_t i = 0; i < count; ++i) {
      auto rl = rd.line("relation");
      auto r = rd.read<RelationId>(rl, "relation");
      auto paths = rd.read<std::size_t>(rl, "path count");
      auto groups = rd.read<std::size_t>(rl, "group count");
      CrossTypeEntry entry;
      for (std::size_t k = 0; k < groups; ++k) entry.source_groups.push_back(rd.read<TypeId>(rl, "group"));
      rd.expect_end_of_line(rl);
      entry.paths = detail::read_paths(rd, paths, s.decay);
      s.cross_type[r] = std::move(entry);
    }
  }
  s.pre_lift = detail::read_groups(rd, "pre_lift", s.decay);
  rd.line("end");
  return s;
}

inline void save_schema(const ReasoningSchema& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_schema(out, s);
  if (!out) throw IoError("write failed: " + path.string());
}

inline ReasoningSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_schema(in, path.string());
}

}  // namespace logre
