#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <boost/container_hash/hash.hpp>

#include "logre/kg_store.hpp"

namespace logre {

struct Walk {
  RelationSeq relations;
  EntityId terminal = 0;

  std::size_t length() const { return relations.size(); }
  friend bool operator==(const Walk&, const Walk&) = default;
  friend auto operator<=>(const Walk&, const Walk&) = default;
};

struct WalkHash {
  std::size_t operator()(const Walk& w) const {
    std::size_t h = boost::hash_range(w.relations.begin(), w.relations.end());
    boost::hash_combine(h, w.terminal);
    return h;
  }
};

struct SamplerConfig {
  std::size_t n_path = 1000;  // max walks kept per entity
  std::size_t n_hop = 3;      // max hops per walk
  std::uint64_t seed = 0;

  void validate() const {
    if (n_path < 1) throw ConfigError("n_path must be >= 1");
    if (n_hop < 1) throw ConfigError("n_hop must be >= 1");
  }
  // Partial walks explored by exhaustive enumeration, and sampling attempts,
  // are both capped at this many per entity.
  std::size_t budget() const { return 4 * n_path; }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (master seed, entity) so results do not depend on
// the order or thread in which entities are sampled.
inline std::mt19937_64 entity_stream(std::uint64_t seed, EntityId e) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(0x4c6f475265ULL + e)));
}

namespace detail {

// All distinct (relations, terminal) walks of 1..n_hop hops, ordered by
// (length, relations, terminal). Returns nullopt when the space exceeds the
// enumeration budget or holds more than n_path walks.
inline std::optional<std::vector<Walk>> enumerate_walks(const KnowledgeGraph& g, EntityId e,
                                                        const SamplerConfig& cfg) {
  std::vector<Walk> all;
  std::vector<Walk> level{Walk{{}, e}};
  std::size_t generated = 0;
  for (std::size_t hop = 1; hop <= cfg.n_hop && !level.empty(); ++hop) {
    std::vector<Walk> next;
    for (const Walk& w : level) {
      auto edges = g.out_edges(w.terminal);
      generated += edges.size();
      if (generated > cfg.budget()) return std::nullopt;
      for (const Edge& edge : edges) {
        Walk extended{w.relations, edge.target};
        extended.relations.push_back(edge.relation);
        next.push_back(std::move(extended));
      }
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    if (all.size() + next.size() > cfg.n_path) return std::nullopt;
    all.insert(all.end(), next.begin(), next.end());
    level = std::move(next);
  }
  return all;
}

}  // namespace detail

// Up to n_path distinct walks starting at e. Small walk spaces are
// enumerated exhaustively; otherwise walks of uniformly drawn length take
// uniformly random outgoing edges, in first-discovered order.
template <typename Rng>
std::vector<Walk> sample_entity_walks(const KnowledgeGraph& g, EntityId e, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (g.out_edges(e).empty()) return {};
  if (auto all = detail::enumerate_walks(g, e, cfg)) return std::move(*all);

  std::vector<Walk> out;
  std::unordered_set<Walk, WalkHash> seen;
  std::uniform_int_distribution<std::size_t> length_dist(1, cfg.n_hop);
  Walk w;
  for (std::size_t attempt = 0; attempt < cfg.budget() && out.size() < cfg.n_path; ++attempt) {
    const std::size_t target_length = length_dist(rng);
    w.relations.clear();
    EntityId cur = e;
    for (std::size_t step = 0; step < target_length; ++step) {
      auto edges = g.out_edges(cur);
      if (edges.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, edges.size() - 1);
      const Edge& edge = edges[pick(rng)];
      w.relations.push_back(edge.relation);
      cur = edge.target;
    }
    if (w.relations.empty()) continue;
    w.terminal = cur;
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

inline std::vector<Walk> sample_entity_walks(const KnowledgeGraph& g, EntityId e, const SamplerConfig& cfg) {
  auto rng = entity_stream(cfg.seed, e);
  return sample_entity_walks(g, e, cfg, rng);
}

// Runs fn(e) for every entity, split into contiguous blocks across threads.
template <typename Fn>
void parallel_for_entities(std::size_t num_entities, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, num_entities));
  if (threads == 1) {
    for (std::size_t e = 0; e < num_entities; ++e) fn(static_cast<EntityId>(e));
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t block = (num_entities + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * block;
    const std::size_t hi = std::min(num_entities, lo + block);
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t e = lo; e < hi; ++e) fn(static_cast<EntityId>(e));
    });
  }
  for (auto& th : pool) th.join();
}

// The entity-path dictionary: walks per start entity.
class EntityPathDictionary {
 public:
  EntityPathDictionary() = default;
  EntityPathDictionary(SamplerConfig cfg, std::string graph_hash, std::vector<std::vector<Walk>> walks)
      : cfg_(cfg), graph_hash_(std::move(graph_hash)), walks_(std::move(walks)) {}

  const SamplerConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return cfg_.seed; }
  const std::string& graph_hash() const { return graph_hash_; }
  std::size_t num_entities() const { return walks_.size(); }

  const std::vector<Walk>& walks_of(EntityId e) const {
    static const std::vector<Walk> kEmpty;
    return e < walks_.size() ? walks_[e] : kEmpty;
  }

  std::size_t total_walks() const {
    std::size_t n = 0;
    for (const auto& ws : walks_) n += ws.size();
    return n;
  }
  std::size_t total_hops() const {
    std::size_t n = 0;
    for (const auto& ws : walks_)
      for (const auto& w : ws) n += w.length();
    return n;
  }

  friend bool operator==(const EntityPathDictionary& a, const EntityPathDictionary& b) {
    return a.cfg_.n_path == b.cfg_.n_path && a.cfg_.n_hop == b.cfg_.n_hop && a.cfg_.seed == b.cfg_.seed &&
           a.graph_hash_ == b.graph_hash_ && a.walks_ == b.walks_;
  }

 private:
  SamplerConfig cfg_;
  std::string graph_hash_;
  std::vector<std::vector<Walk>> walks_;
};

inline EntityPathDictionary build_dictionary(const KnowledgeGraph& g, const SamplerConfig& cfg,
                                             std::size_t threads = 1) {
  cfg.validate();
  std::vector<std::vector<Walk>> walks(g.num_entities());
  parallel_for_entities(g.num_entities(), threads,
                        [&](EntityId e) { walks[e] = sample_entity_walks(g, e, cfg); });
  return EntityPathDictionary(cfg, g.content_hash(), std::move(walks));
}

// Produces the same walks as build_dictionary on demand, without holding the
// whole dictionary in memory.
class LazyWalkSource {
 public:
  LazyWalkSource(const KnowledgeGraph& g, SamplerConfig cfg) : g_(&g), cfg_(cfg) { cfg_.validate(); }
  std::vector<Walk> walks_of(EntityId e) const { return sample_entity_walks(*g_, e, cfg_); }
  const SamplerConfig& config() const { return cfg_; }
  const std::string& graph_hash() const { return g_->content_hash(); }
  std::size_t num_entities() const { return g_->num_entities(); }

 private:
  const KnowledgeGraph* g_;
  SamplerConfig cfg_;
};

// Line-oriented dictionary cache:
//   logre-dictionary 1
//   seed <u64> / n_path <n> / n_hop <n> / graph_hash <hex> / entities <E>
//   entity <id> <count>, then one "<terminal> <r1> <r2> ..." line per walk
//   end
inline constexpr int kDictionaryFormatVersion = 1;

inline void save_dictionary(const EntityPathDictionary& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "logre-dictionary " << kDictionaryFormatVersion << "\n";
  out << "seed " << d.config().seed << "\n";
  out << "n_path " << d.config().n_path << "\n";
  out << "n_hop " << d.config().n_hop << "\n";
  out << "graph_hash " << d.graph_hash() << "\n";
  out << "entities " << d.num_entities() << "\n";
  for (EntityId e = 0; e < d.num_entities(); ++e) {
    const auto& ws = d.walks_of(e);
    out << "entity " << e << " " << ws.size() << "\n";
    for (const auto& w : ws) {
      out << w.terminal;
      for (auto r : w.relations) out << " " << r;
      out << "\n";
    }
  }
  out << "end\n";
  if (!out) throw IoError("write failed: " + path.string());
}

// Returns nullopt when the cache is missing, corrupt, or was built for a
// different (seed, n_path, n_hop, graph).
inline std::optional<EntityPathDictionary> load_dictionary_cache(const std::filesystem::path& path,
                                                                 const SamplerConfig& cfg,
                                                                 const std::string& graph_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string key;
  int version = 0;
  SamplerConfig stored;
  std::string hash;
  std::size_t entities = 0;
  if (!(in >> key >> version) || key != "logre-dictionary" || version != kDictionaryFormatVersion) return std::nullopt;
  if (!(in >> key >> stored.seed) || key != "seed") return std::nullopt;
  if (!(in >> key >> stored.n_path) || key != "n_path") return std::nullopt;
  if (!(in >> key >> stored.n_hop) || key != "n_hop") return std::nullopt;
  if (!(in >> key >> hash) || key != "graph_hash") return std::nullopt;
  if (!(in >> key >> entities) || key != "entities") return std::nullopt;
  if (stored.seed != cfg.seed || stored.n_path != cfg.n_path || stored.n_hop != cfg.n_hop || hash != graph_hash) {
    return std::nullopt;
  }
  std::vector<std::vector<Walk>> walks(entities);
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < entities; ++i) {
    std::size_t id = 0, count = 0;
    if (!std::getline(in, line)) return std::nullopt;
    std::istringstream head(line);
    if (!(head >> key >> id >> count) || key != "entity" || id != i) return std::nullopt;
    walks[i].reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      if (!std::getline(in, line)) return std::nullopt;
      std::istringstream ls(line);
      Walk w;
      if (!(ls >> w.terminal)) return std::nullopt;
      RelationId r;
      while (ls >> r) w.relations.push_back(r);
      if (w.relations.empty() || w.relations.size() > cfg.n_hop) return std::nullopt;
      walks[i].push_back(std::move(w));
    }
  }
  if (!std::getline(in, line) || line != "end") return std::nullopt;
  return EntityPathDictionary(cfg, graph_hash, std::move(walks));
}

}  // namespace logre
