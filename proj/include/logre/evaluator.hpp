#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "logre/kg_store.hpp"
#include "logre/path_sampler.hpp"
#include "logre/reasoner.hpp"

namespace logre {

inline constexpr std::array<std::size_t, 3> kHitsAt = {1, 3, 10};

// Position of the gold tail under the expected-rank convention: the gold is
// equally likely to sit anywhere among the candidates tied with it.
struct Rank {
  std::size_t higher = 0;  // candidates strictly above gold
  std::size_t tied = 0;    // other candidates with gold's exact score

  Rational expected() const {
    Rational r(mpz_class(static_cast<unsigned long>(2 * higher + tied + 2)), mpz_class(2));
    r.canonicalize();
    return r;
  }
  Rational reciprocal() const {
    Rational inv = 1 / expected();
    inv.canonicalize();
    return inv;
  }
  // Share of gold's equally likely positions that fall within the top k.
  Rational hits(std::size_t k) const {
    if (k <= higher) return 0;
    const std::size_t inside = std::min(k - higher, tied + 1);
    Rational r(mpz_class(static_cast<unsigned long>(inside)), mpz_class(static_cast<unsigned long>(tied + 1)));
    r.canonicalize();
    return r;
  }
  friend bool operator==(const Rank&, const Rank&) = default;
};

// Rank of gold among candidates after dropping every entity in filter_out;
// nullopt when gold is not among the remaining candidates.
inline std::optional<Rank> rank_of(std::span<const CandidateScore> candidates, EntityId gold,
                                   const std::unordered_set<EntityId>& filter_out) {
  const CandidateScore* gold_score = nullptr;
  for (const auto& c : candidates) {
    if (c.candidate == gold) {
      gold_score = &c;
      break;
    }
  }
  if (!gold_score) return std::nullopt;
  Rank rank;
  for (const auto& c : candidates) {
    if (c.candidate == gold || filter_out.contains(c.candidate)) continue;
    if (c.final_score_squared > gold_score->final_score_squared) {
      ++rank.higher;
    } else if (c.final_score_squared == gold_score->final_score_squared) {
      ++rank.tied;
    }
  }
  return rank;
}

// Every known tail of (h, r) over train, valid and test.
class KnownTails {
 public:
  KnownTails() = default;
  explicit KnownTails(const Dataset& ds) {
    for (const auto& f : ds.graph.facts()) add(f);
    for (const auto& f : ds.valid) add(f);
    for (const auto& f : ds.test) add(f);
  }
  void add(const Fact& f) { tails_[key(f.head, f.relation)].insert(f.tail); }

  // Known tails of (h, r) other than gold.
  std::unordered_set<EntityId> filter_for(const Fact& f) const {
    std::unordered_set<EntityId> out;
    if (auto it = tails_.find(key(f.head, f.relation)); it != tails_.end()) {
      out.insert(it->second.begin(), it->second.end());
    }
    out.erase(f.tail);
    return out;
  }

 private:
  static std::uint64_t key(EntityId h, RelationId r) { return (std::uint64_t{h} << 32) | r; }
  std::unordered_map<std::uint64_t, std::set<EntityId>> tails_;
};

struct QueryResult {
  Fact fact;
  std::optional<Rank> rank;  // nullopt: gold not ranked
};

struct EvalReport {
  std::size_t query_count = 0;
  std::size_t ranked_count = 0;
  Rational reciprocal_sum;
  std::map<std::size_t, Rational> hits_sum;
  std::vector<QueryResult> per_query;

  Rational mrr_exact() const { return query_count ? reciprocal_sum / query_count : Rational(0); }
  Rational hits_exact(std::size_t k) const {
    auto it = hits_sum.find(k);
    return query_count && it != hits_sum.end() ? it->second / query_count : Rational(0);
  }
  double mrr() const { return mrr_exact().get_d(); }
  double hits(std::size_t k) const { return hits_exact(k).get_d(); }

  friend bool operator==(const EvalReport& a, const EvalReport& b) {
    if (a.query_count != b.query_count || a.ranked_count != b.ranked_count || a.reciprocal_sum != b.reciprocal_sum ||
        a.hits_sum != b.hits_sum || a.per_query.size() != b.per_query.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.per_query.size(); ++i) {
      if (a.per_query[i].fact != b.per_query[i].fact || a.per_query[i].rank != b.per_query[i].rank) return false;
    }
    return true;
  }
};

struct EvalOptions {
  bool filtered = true;
  std::size_t threads = 1;
};

inline EvalReport evaluate(const Reasoner& reasoner, std::span<const Fact> split, const KnownTails& known,
                           const EvalOptions& options = {}) {
  std::vector<QueryResult> results(split.size());
  const std::unordered_set<EntityId> no_filter;
  parallel_for_entities(split.size(), options.threads, [&](EntityId i) {
    const Fact& f = split[i];
    auto candidates = reasoner.answer({f.head, f.relation});
    results[i].fact = f;
    if (options.filtered) {
      results[i].rank = rank_of(candidates, f.tail, known.filter_for(f));
    } else {
      results[i].rank = rank_of(candidates, f.tail, no_filter);
    }
  });

  EvalReport report;
  report.query_count = split.size();
  for (auto k : kHitsAt) report.hits_sum[k] = 0;
  for (const auto& r : results) {
    if (!r.rank) continue;
    ++report.ranked_count;
    report.reciprocal_sum += r.rank->reciprocal();
    for (auto k : kHitsAt) report.hits_sum[k] += r.rank->hits(k);
  }
  report.per_query = std::move(results);
  return report;
}

// Report document. Key names are stable: query_count, ranked_count, mrr,
// hits@1, hits@3, hits@10, and optionally per_query[{head, relation, tail, rank}].
inline nlohmann::ordered_json to_json(const EvalReport& r, const KnowledgeGraph& g, bool include_per_query) {
  nlohmann::ordered_json j;
  j["query_count"] = r.query_count;
  j["ranked_count"] = r.ranked_count;
  j["mrr"] = r.mrr();
  for (auto k : kHitsAt) j["hits@" + std::to_string(k)] = r.hits(k);
  j["mrr_exact"] = to_string(r.mrr_exact());
  if (include_per_query) {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& q : r.per_query) {
      nlohmann::ordered_json row;
      row["head"] = g.entity_name(q.fact.head);
      row["relation"] = g.relation_name(q.fact.relation);
      row["tail"] = g.entity_name(q.fact.tail);
      if (q.rank) {
        row["rank"] = q.rank->expected().get_d();
      } else {
        row["rank"] = nullptr;
      }
      rows.push_back(std::move(row));
    }
    j["per_query"] = std::move(rows);
  }
  return j;
}

}  // namespace logre
