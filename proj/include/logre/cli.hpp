#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "logre/evaluator.hpp"
#include "logre/kg_store.hpp"
#include "logre/path_sampler.hpp"
#include "logre/reasoner.hpp"
#include "logre/schema.hpp"

namespace logre::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kIoError = 3,
  kConsistencyError = 4,
  kResolutionError = 5,
};

struct RunConfig {
  std::filesystem::path dataset_dir;
  std::filesystem::path schema_path;
  std::filesystem::path output;
  std::filesystem::path dictionary_cache;
  std::size_t n_path = 1000;
  std::size_t n_hop = 3;
  std::size_t n_top = 100;
  std::string decay = "0.5";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool cross_type = true;
  bool prefer_shortpath = true;
  bool answer_similarity = true;
  bool raw_ranking = false;
  bool per_query = false;
  std::vector<std::string> ignored_types;
  std::string split = "test";
  std::size_t k = 10;
  std::size_t explain_paths = kDefaultExplainPaths;
  std::string query;
  std::string head;
  std::string relation;
  std::string type_scheme = "nell";
  std::string type_relation;

  // Effective decay: 1 when short-path preference is disabled.
  Rational effective_decay() const {
    if (!prefer_shortpath) return Rational(1);
    Rational d = parse_rational(decay);
    validate_decay(d);
    return d;
  }
  SamplerConfig sampler() const {
    SamplerConfig c{n_path, n_hop, seed};
    c.validate();
    return c;
  }
  ReasonerConfig reasoner() const {
    ReasonerConfig c{n_top, answer_similarity, cross_type};
    c.validate();
    return c;
  }
};

class ResolutionError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string near_matches(std::string_view text, const std::vector<std::string>& names) {
  std::vector<std::pair<std::size_t, std::string>> scored;
  for (const auto& n : names) scored.emplace_back(edit_distance(text, n), n);
  std::sort(scored.begin(), scored.end());
  std::string out;
  for (std::size_t i = 0; i < std::min<std::size_t>(5, scored.size()); ++i) {
    out += (i ? ", " : "") + scored[i].second;
  }
  return out;
}

}  // namespace detail

// Identifier first, then display name; a display name shared by several
// entities is an error rather than a guess.
inline EntityId resolve_entity(const KnowledgeGraph& g, std::string_view text) {
  if (auto e = g.find_entity(text)) return *e;
  std::vector<EntityId> hits;
  for (const auto& [e, name] : g.entity_display_map()) {
    if (name == text) hits.push_back(e);
  }
  if (hits.size() == 1) return hits.front();
  if (hits.size() > 1) {
    std::sort(hits.begin(), hits.end());
    std::string ids;
    for (auto e : hits) ids += " " + g.entity_name(e);
    throw ResolutionError("ambiguous entity name '" + std::string(text) + "': matches" + ids);
  }
  std::vector<std::string> names;
  for (EntityId e = 0; e < g.num_entities(); ++e) {
    names.push_back(g.entity_name(e));
    if (g.entity_display(e) != g.entity_name(e)) names.push_back(g.entity_display(e));
  }
  throw ResolutionError("unknown entity '" + std::string(text) + "'; near matches: " + detail::near_matches(text, names));
}

inline RelationId resolve_relation(const KnowledgeGraph& g, std::string_view text) {
  if (auto r = g.find_relation(text)) return *r;
  std::vector<RelationId> hits;
  for (const auto& [r, name] : g.relation_display_map()) {
    if (name == text) hits.push_back(r);
  }
  if (hits.size() == 1) return hits.front();
  if (hits.size() > 1) throw ResolutionError("ambiguous relation name '" + std::string(text) + "'");
  std::vector<std::string> names;
  for (RelationId r = 0; r < g.num_relations(); ++r) {
    names.push_back(g.relation_name(r));
    if (g.relation_display(r) != g.relation_name(r)) names.push_back(g.relation_display(r));
  }
  throw ResolutionError("unknown relation '" + std::string(text) + "'; near matches: " +
                        detail::near_matches(text, names));
}

// Accepts "(head, relation, ?)" or "head, relation".
inline std::pair<std::string, std::string> parse_query_text(std::string text) {
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  text = trim(text);
  if (!text.empty() && text.front() == '(' && text.back() == ')') text = text.substr(1, text.size() - 2);
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(',', start);
    parts.push_back(trim(text.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (parts.size() == 3 && parts[2] == "?") parts.pop_back();
  if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) {
    throw ConfigError("query must look like '(head, relation, ?)'; use --head/--relation for names with commas");
  }
  return {parts[0], parts[1]};
}

inline Dataset load_from(const RunConfig& cfg) {
  if (cfg.dataset_dir.empty()) throw ConfigError("--dataset is required");
  return load_dataset_dir(cfg.dataset_dir, LoadOptions{cfg.ignored_types});
}

// Schema as stored, rescored with decay 1 for the no-prefer-shortpath ablation.
inline ReasoningSchema load_schema_for(const RunConfig& cfg, const KnowledgeGraph& g) {
  if (cfg.schema_path.empty()) throw ConfigError("--schema is required");
  ReasoningSchema s = load_schema(cfg.schema_path);
  if (s.provenance.graph_hash != g.content_hash()) {
    throw ConsistencyError("schema " + cfg.schema_path.string() + " was built from a different dataset (graph hash " +
                           s.provenance.graph_hash + ", dataset " + g.content_hash() + ")");
  }
  if (!cfg.prefer_shortpath) s = with_decay(s, Rational(1));
  return s;
}

inline int cmd_build_schema(const RunConfig& cfg, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (cfg.output.empty()) throw ConfigError("--output is required");
  const Rational decay = cfg.effective_decay();
  const SamplerConfig sampler = cfg.sampler();
  Dataset ds = load_from(cfg);
  const KnowledgeGraph& g = ds.graph;

  ReasoningSchema schema;
  BuildStats stats;
  SchemaBuildOptions options{kDefaultTailCap, cfg.threads, &stats};
  if (!cfg.dictionary_cache.empty()) {
    auto dict = load_dictionary_cache(cfg.dictionary_cache, sampler, g.content_hash());
    if (!dict) {
      dict = build_dictionary(g, sampler, cfg.threads);
      save_dictionary(*dict, cfg.dictionary_cache);
    }
    schema = build_schema(g, *dict, decay, options);
  } else {
    schema = build_schema(g, LazyWalkSource(g, sampler), decay, options);
  }
  save_schema(schema, cfg.output);

  std::size_t type_specific = 0;
  for (const auto& [t, rels] : schema.type_groups) type_specific += rels.size();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "schema written to " << cfg.output.string() << "\n"
      << "entities: " << g.num_entities() << "  relations: " << g.num_relations()
      << "  training facts: " << g.facts().size() << "  types: " << g.num_types() << "\n"
      << "type groups with paths: " << schema.type_groups.size() << "  type-specific relations: " << type_specific
      << "\n"
      << "cross-type relations: " << schema.cross_type.size() << "\n"
      << "stored paths: " << schema.total_paths() << "\n"
      << "walks from head entities: " << stats.walks << "  hops: " << stats.hops << "  (bound |E|*N_path*N_hop = "
      << g.num_entities() * sampler.n_path * sampler.n_hop << ")\n"
      << "wall time: " << format_score(seconds) << " s\n";
  return kOk;
}

inline int cmd_reason(const RunConfig& cfg, std::ostream& out) {
  Dataset ds = load_from(cfg);
  const KnowledgeGraph& g = ds.graph;
  ReasoningSchema schema = load_schema_for(cfg, g);
  std::string head_text = cfg.head, rel_text = cfg.relation;
  if (!cfg.query.empty()) std::tie(head_text, rel_text) = parse_query_text(cfg.query);
  if (head_text.empty() || rel_text.empty()) throw ConfigError("a query or --head/--relation is required");
  const Query q{resolve_entity(g, head_text), resolve_relation(g, rel_text)};

  Reasoner reasoner(g, schema, cfg.reasoner());
  auto candidates = reasoner.answer(q);
  out << "query: (" << g.entity_display(q.head) << ", " << g.relation_display(q.relation) << ", ?)\n";
  if (candidates.empty()) {
    out << "no paths available for this query\n";
    return kOk;
  }
  const std::size_t shown = std::min(cfg.k, candidates.size());
  for (std::size_t i = 0; i < shown; ++i) out << to_text(explain(candidates[i], g, cfg.explain_paths), i + 1);
  return kOk;
}

inline std::span<const Fact> split_of(const Dataset& ds, const std::string& split) {
  if (split == "test") return ds.test;
  if (split == "valid") return ds.valid;
  throw ConfigError("--split must be 'valid' or 'test', got '" + split + "'");
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  Dataset ds = load_from(cfg);
  const KnowledgeGraph& g = ds.graph;
  ReasoningSchema schema = load_schema_for(cfg, g);
  Reasoner reasoner(g, schema, cfg.reasoner());
  KnownTails known(ds);
  const auto start = std::chrono::steady_clock::now();
  EvalReport report = evaluate(reasoner, split_of(ds, cfg.split), known, {!cfg.raw_ranking, cfg.threads});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  auto doc = to_json(report, g, cfg.per_query);
  if (!cfg.output.empty()) {
    std::ofstream f(cfg.output, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + cfg.output.string());
    f << doc.dump(2) << "\n";
  }
  out << "split: " << cfg.split << "  queries: " << report.query_count << "  ranked: " << report.ranked_count
      << "\n"
      << "MRR: " << format_score(report.mrr()) << "  Hits@1: " << format_score(100 * report.hits(1))
      << "  Hits@3: " << format_score(100 * report.hits(3)) << "  Hits@10: " << format_score(100 * report.hits(10))
      << "\n"
      << "wall time: " << format_score(seconds) << " s\n";
  return kOk;
}

// JSON lines, one record per (query, candidate) with fixed field order:
// head, relation, rank, candidate, score, paths.
inline int cmd_explain_dump(const RunConfig& cfg, std::ostream& out) {
  Dataset ds = load_from(cfg);
  const KnowledgeGraph& g = ds.graph;
  ReasoningSchema schema = load_schema_for(cfg, g);
  Reasoner reasoner(g, schema, cfg.reasoner());

  std::ofstream file;
  std::ostream* sink = &out;
  if (!cfg.output.empty()) {
    file.open(cfg.output, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write " + cfg.output.string());
    sink = &file;
  }
  for (const Fact& f : split_of(ds, cfg.split)) {
    auto candidates = reasoner.answer({f.head, f.relation});
    const std::size_t shown = std::min(cfg.k, candidates.size());
    for (std::size_t i = 0; i < shown; ++i) {
      auto ex = to_json(explain(candidates[i], g, cfg.explain_paths));
      nlohmann::ordered_json rec;
      rec["head"] = g.entity_name(f.head);
      rec["relation"] = g.relation_name(f.relation);
      rec["rank"] = i + 1;
      for (auto& [key, value] : ex.items()) rec[key] = value;
      *sink << rec.dump() << "\n";
    }
  }
  return kOk;
}

// Writes entity_types.tsv for a dataset directory.
//   nell:     concept_<type>_<name> identifiers carry their type
//   relation: each entity's types are its tails under --type-relation
inline int cmd_derive_types(const RunConfig& cfg, std::ostream& out) {
  if (cfg.dataset_dir.empty()) throw ConfigError("--dataset is required");
  const auto target = cfg.output.empty() ? cfg.dataset_dir / "entity_types.tsv" : cfg.output;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::set<std::string> entities;
  std::vector<std::array<std::string, 3>> triples;
  for (const char* split : {"train.triples", "valid.triples", "test.triples"}) {
    logre::detail::for_each_record(cfg.dataset_dir / split, 3, [&](const auto& f, std::size_t) {
      triples.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2])});
      entities.insert(std::string(f[0]));
      entities.insert(std::string(f[2]));
    });
  }
  if (cfg.type_scheme == "nell") {
    for (const auto& e : entities) {
      if (e.rfind("concept_", 0) != 0) continue;
      const auto end = e.find('_', 8);
      if (end == std::string::npos || end == 8) continue;
      pairs.emplace_back(e, e.substr(8, end - 8));
    }
  } else if (cfg.type_scheme == "relation") {
    if (cfg.type_relation.empty()) throw ConfigError("--type-relation is required for the relation scheme");
    for (const auto& t : triples) {
      if (t[1] == cfg.type_relation) pairs.emplace_back(t[0], t[2]);
    }
  } else {
    throw ConfigError("unknown type scheme '" + cfg.type_scheme + "' (expected nell or relation)");
  }
  std::ofstream f(target, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + target.string());
  for (const auto& [e, t] : pairs) f << e << "\t" << t << "\n";
  out << "wrote " << pairs.size() << " type assignments to " << target.string() << "\n";
  return kOk;
}

inline void add_model_options(CLI::App& app, RunConfig& cfg) {
  app.add_option("--n-path", cfg.n_path, "N_path: max walks collected per entity")->check(CLI::PositiveNumber);
  app.add_option("--n-hop", cfg.n_hop, "N_hop: max hops per walk")->check(CLI::PositiveNumber);
  app.add_option("--n-top", cfg.n_top, "N_top: top-scored paths grounded per query")->check(CLI::PositiveNumber);
  app.add_option("--decay", cfg.decay, "d: hop decay factor in (0,1], decimal or p/q");
  app.add_option("--seed", cfg.seed, "master seed for walk sampling");
  app.add_option("--threads", cfg.threads, "worker threads (wall time only)")->check(CLI::PositiveNumber);
  app.add_flag("!--no-cross-type", cfg.cross_type, "ablation: ignore the cross-type group");
  app.add_flag("!--no-prefer-shortpath", cfg.prefer_shortpath, "ablation: hop decay d := 1");
  app.add_flag("!--no-answer-similarity", cfg.answer_similarity, "ablation: skip the answer-similarity multiplier");
  app.add_flag("--raw-ranking", cfg.raw_ranking, "rank without filtering other known tails");
  app.add_option("--ignore-type", cfg.ignored_types, "type dropped before most-frequent selection (repeatable)");
}

// Parses argv and dispatches; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Path reasoning over sparse knowledge graphs"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file; command-line flags override it");
  RunConfig cfg;
  add_model_options(app, cfg);
  app.add_option("--dataset", cfg.dataset_dir, "dataset directory ({train,valid,test}.triples, entity_types.tsv)");
  app.add_option("--schema", cfg.schema_path, "schema file");
  app.add_option("--output", cfg.output, "output file");

  auto* build = app.add_subcommand("build-schema", "sample walks and build the reasoning schema")->fallthrough();
  build->add_option("--dictionary-cache", cfg.dictionary_cache, "reuse or write a walk dictionary cache");

  auto* reason = app.add_subcommand("reason", "answer one (head, relation, ?) query with explanations")->fallthrough();
  reason->add_option("query", cfg.query, "query '(head, relation, ?)'");
  reason->add_option("--head", cfg.head, "head entity id or name");
  reason->add_option("--relation", cfg.relation, "relation id or name");
  reason->add_option("-k,--k", cfg.k, "candidates to print");
  reason->add_option("--explain-paths", cfg.explain_paths, "paths listed per candidate");

  auto* eval = app.add_subcommand("evaluate", "filtered MRR and Hits@{1,3,10} over a split")->fallthrough();
  eval->add_option("--split", cfg.split, "valid or test");
  eval->add_flag("--per-query", cfg.per_query, "include per-query ranks in the report");

  auto* dump = app.add_subcommand("explain-dump", "write explanation records for every query of a split")
                   ->fallthrough();
  dump->add_option("--split", cfg.split, "valid or test");
  dump->add_option("-k,--k", cfg.k, "candidates per query");
  dump->add_option("--explain-paths", cfg.explain_paths, "paths listed per candidate");

  auto* derive = app.add_subcommand("derive-types", "write entity_types.tsv from identifiers or a typing relation")
                     ->fallthrough();
  derive->add_option("--scheme", cfg.type_scheme, "nell or relation");
  derive->add_option("--type-relation", cfg.type_relation, "relation whose tails are types (relation scheme)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (*build) return cmd_build_schema(cfg, out);
    if (*reason) return cmd_reason(cfg, out);
    if (*eval) return cmd_evaluate(cfg, out);
    if (*dump) return cmd_explain_dump(cfg, out);
    if (*derive) return cmd_derive_types(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ResolutionError& e) {
    err << "resolution error: " << e.what() << "\n";
    return kResolutionError;
  } catch (const ConsistencyError& e) {
    err << "consistency error: " << e.what() << "\n";
    return kConsistencyError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
  return kConfigError;
}

}  // namespace logre::cli
