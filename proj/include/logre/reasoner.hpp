#pragma once

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "logre/kg_store.hpp"
#include "logre/schema.hpp"

namespace logre {

struct Query {
  EntityId head;
  RelationId relation;  // base relation
};

struct ReasonerConfig {
  std::size_t n_top = 100;
  bool similarity_enabled = true;
  bool cross_type_enabled = true;

  void validate() const {
    if (n_top < 1) throw ConfigError("n_top must be >= 1");
  }
};

struct PathContribution {
  const ScoredPath* path;
  Rational score;  // the path's final score
};

struct CandidateScore {
  EntityId candidate = 0;
  Rational base_score;                 // sum of contributing path scores
  Similarity similarity = Similarity::one();
  Rational final_score_squared;        // (base_score * similarity)^2, exact
  std::vector<PathContribution> contributing_paths;  // schema order

  double final_score() const { return base_score.get_d() * similarity.value(); }
};

// Paths for (head type, r): the cross-type list when r was lifted, the
// group's own list otherwise. With cross-type disabled the per-group lists
// retained from before lifting stand in.
inline const PathList& lookup_paths(const ReasoningSchema& s, TypeId head_type, RelationId r,
                                    const ReasonerConfig& cfg) {
  static const PathList kEmpty;
  if (cfg.cross_type_enabled) {
    if (auto it = s.cross_type.find(r); it != s.cross_type.end()) return it->second.paths;
  } else if (auto g = s.pre_lift.find(head_type); g != s.pre_lift.end()) {
    if (auto it = g->second.find(r); it != g->second.end()) return it->second;
  }
  if (auto g = s.type_groups.find(head_type); g != s.type_groups.end()) {
    if (auto it = g->second.find(r); it != g->second.end()) return it->second;
  }
  return kEmpty;
}

// Distinct endpoints of `path` from h, ascending; empty as soon as any
// intermediate frontier is empty.
inline std::vector<EntityId> ground_path(const KnowledgeGraph& g, EntityId h, const RelationSeq& path) {
  std::vector<EntityId> frontier{h};
  g.out_edges(h);  // vocabulary check
  std::vector<EntityId> next;
  for (RelationId r : path) {
    next.clear();
    for (EntityId e : frontier) {
      auto succ = g.successors(e, r);
      next.insert(next.end(), succ.begin(), succ.end());
    }
    if (next.empty()) return {};
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    std::swap(frontier, next);
  }
  return frontier;
}

namespace detail {

inline Similarity best_similarity_on_path(const KnowledgeGraph& g, EntityId candidate, const ScoredPath& p,
                                          Similarity best, bool& found) {
  const auto& sig = g.relation_signature(candidate);
  for (EntityId t : p.example_tails) {
    if (t == candidate) continue;
    auto sim = cosine_similarity(sig, g.relation_signature(t));
    if (!found || best < sim) best = sim;
    found = true;
  }
  return best;
}

inline void finalize(CandidateScore& c) { c.final_score_squared = c.base_score * c.base_score * c.similarity.squared(); }

}  // namespace detail

// Multiplies the candidate's score by the best cosine similarity between its
// relation signature and the example tails (other than itself) recorded on
// its contributing paths. No example tails leaves the score unchanged.
inline CandidateScore similarity_update(const KnowledgeGraph& g, CandidateScore cand) {
  Similarity best{0, 0};
  bool found = false;
  for (const auto& contribution : cand.contributing_paths) {
    best = detail::best_similarity_on_path(g, cand.candidate, *contribution.path, best, found);
  }
  cand.similarity = found ? best : Similarity::one();
  detail::finalize(cand);
  return cand;
}

inline bool candidate_order(const CandidateScore& a, const CandidateScore& b) {
  if (a.final_score_squared != b.final_score_squared) return a.final_score_squared > b.final_score_squared;
  return a.candidate < b.candidate;
}

// Grounds the top n_top paths for the query and sums, per endpoint, the
// scores of the paths reaching it. Empty when the relation has no paths for
// the head's type or nothing grounds.
inline std::vector<CandidateScore> score_candidates(const KnowledgeGraph& g, const ReasoningSchema& s, const Query& q,
                                                    const ReasonerConfig& cfg) {
  cfg.validate();
  if (q.relation >= g.num_relations()) throw LookupError("query relation is not a base relation");
  const PathList& paths = lookup_paths(s, g.type_of(q.head), q.relation, cfg);
  const std::size_t top = std::min(cfg.n_top, paths.size());

  std::unordered_map<EntityId, std::size_t> slot;
  std::vector<CandidateScore> out;
  for (std::size_t i = 0; i < top; ++i) {
    const ScoredPath& p = paths[i];
    for (EntityId t : ground_path(g, q.head, p.relations)) {
      auto [it, inserted] = slot.try_emplace(t, out.size());
      if (inserted) {
        out.emplace_back();
        out.back().candidate = t;
      }
      auto& c = out[it->second];
      c.base_score += p.final_score;
      c.contributing_paths.push_back({&p, p.final_score});
    }
  }
  for (auto& c : out) {
    if (cfg.similarity_enabled) {
      c = similarity_update(g, std::move(c));
    } else {
      c.similarity = Similarity::one();
      detail::finalize(c);
    }
  }
  std::sort(out.begin(), out.end(), candidate_order);
  return out;
}

// Holds the immutable graph and schema; answer() is safe to call concurrently.
class Reasoner {
 public:
  Reasoner(const KnowledgeGraph& g, const ReasoningSchema& s, ReasonerConfig cfg) : g_(g), s_(s), cfg_(cfg) {
    cfg_.validate();
    if (s.provenance.graph_hash != g.content_hash()) {
      throw ConsistencyError("schema was built from a different dataset (graph hash " + s.provenance.graph_hash +
                             ", dataset " + g.content_hash() + ")");
    }
  }
  std::vector<CandidateScore> answer(const Query& q) const { return score_candidates(g_, s_, q, cfg_); }
  const ReasonerConfig& config() const { return cfg_; }
  const KnowledgeGraph& graph() const { return g_; }
  const ReasoningSchema& schema() const { return s_; }

 private:
  const KnowledgeGraph& g_;
  const ReasoningSchema& s_;
  ReasonerConfig cfg_;
};

// ---------------------------------------------------------------------------
// Explanations

struct ExplainedPath {
  std::vector<std::string> relations;  // display names, inverse marked "^-1"
  RelationSeq ids;
  double score;
};

struct Explanation {
  std::string candidate;
  EntityId candidate_id;
  double score;
  std::vector<ExplainedPath> paths;  // score descending
};

inline constexpr std::size_t kDefaultExplainPaths = 10;

inline Explanation explain(const CandidateScore& cand, const KnowledgeGraph& g,
                           std::size_t max_paths = kDefaultExplainPaths) {
  Explanation ex{g.entity_display(cand.candidate), cand.candidate, cand.final_score(), {}};
  std::vector<const PathContribution*> order;
  for (const auto& c : cand.contributing_paths) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->score > b->score; });
  if (order.size() > max_paths) order.resize(max_paths);
  for (const auto* c : order) {
    ExplainedPath ep{{}, c->path->relations, c->score.get_d()};
    for (RelationId r : c->path->relations) ep.relations.push_back(g.label_name(r));
    ex.paths.push_back(std::move(ep));
  }
  return ex;
}

inline std::string format_path(const ExplainedPath& p) {
  std::string out = "(";
  for (std::size_t i = 0; i < p.relations.size(); ++i) {
    if (i) out += ", ";
    out += p.relations[i];
  }
  return out + ")";
}

inline std::string format_score(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

// "<rank>. <candidate>  score=<s>" then one indented line per path.
inline std::string to_text(const Explanation& ex, std::size_t rank) {
  std::ostringstream os;
  os << rank << ". " << ex.candidate << "  score=" << format_score(ex.score) << "\n";
  for (const auto& p : ex.paths) os << "     " << format_path(p) << "  " << format_score(p.score) << "\n";
  return os.str();
}

// Structured record with fixed field order: candidate, score, paths[{path, score}].
inline nlohmann::ordered_json to_json(const Explanation& ex) {
  nlohmann::ordered_json j;
  j["candidate"] = ex.candidate;
  j["score"] = ex.score;
  auto paths = nlohmann::ordered_json::array();
  for (const auto& p : ex.paths) {
    nlohmann::ordered_json pj;
    pj["path"] = p.relations;
    pj["score"] = p.score;
    paths.push_back(std::move(pj));
  }
  j["paths"] = std::move(paths);
  return j;
}

}  // namespace logre
