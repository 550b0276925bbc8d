#pragma once

// HTTP session service in front of ActiveSession. A human (or a script)
// fetches the pending batch with per-link evidence, posts answers, and the
// loop advances once the batch resolves.
//
//   POST /v1/sessions                  {"dataset", "config"?, "strategy"?}
//   GET  /v1/sessions/{id}/pending
//   POST /v1/sessions/{id}/answers     {"answers": [{"link_id", "label"}]}
//   GET  /v1/sessions/{id}/status
//   GET  /v1/datasets
//
// label is 1, 0, true, false, or null / "skip".

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

// Eigen first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include "activeiter/active.hpp"
#include "activeiter/counting.hpp"
#include "activeiter/errors.hpp"
#include "activeiter/experiment.hpp"
#include "activeiter/hetnet.hpp"
#include "activeiter/meta_diagram.hpp"

#include <httplib.h>

namespace activeiter {

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

class BadRequest : public Error {
 public:
  using Error::Error;
};

/// Per-user summary used by the evidence payload.
struct UserProfile {
  std::size_t followers = 0;
  std::size_t followees = 0;
  std::vector<std::uint32_t> posts;
};

/// An aligned pair served to annotators. `pair.anchors` are the known
/// anchors; `truth`, when present, is the full held-out correspondence.
struct Dataset {
  std::string name;
  AlignedNetworkPair pair;
  std::optional<std::vector<AnchorLink>> truth;
  std::vector<AnchorLink> candidates;  // empty: all of U1 x U2
  std::vector<UserProfile> profiles[2];
  std::vector<std::vector<std::size_t>> post_attrs[2];  // post ordinal -> attribute indices
};

namespace detail {

inline void index_profiles(const HeterogeneousNetwork& g, std::vector<UserProfile>& users,
                           std::vector<std::vector<std::size_t>>& posts) {
  users.assign(g.user_count(), {});
  posts.assign(g.post_count(), {});
  for (auto [a, b] : g.follow_edges()) {
    ++users[a].followees;
    ++users[b].followers;
  }
  for (auto [u, p] : g.write_edges()) users[u].posts.push_back(p);
  const auto& attrs = g.attributes();
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    posts[*g.post_index(attrs[i].node)].push_back(i);
  }
}

}  // namespace detail

inline void index_dataset(Dataset& d) {
  detail::index_profiles(d.pair.first, d.profiles[0], d.post_attrs[0]);
  detail::index_profiles(d.pair.second, d.profiles[1], d.post_attrs[1]);
}

/// Reads <dir>/net1/, <dir>/net2/ and <dir>/anchors.tsv, plus the optional
/// truth.tsv (held-out anchors) and candidates.tsv (restricts H).
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.name = dir.filename().string();
  auto g1 = load_network_dir(dir / "net1", {"net1", {}});
  auto g2 = load_network_dir(dir / "net2", {"net2", {}});
  auto anchors = open_input(dir / "anchors.tsv");
  d.pair = load_aligned_pair(std::move(g1), std::move(g2), anchors);
  if (std::filesystem::exists(dir / "truth.tsv")) {
    auto in = open_input(dir / "truth.tsv");
    auto t = parse_anchors(d.pair.first, d.pair.second, in, "truth.tsv");
    check_one_to_one(t, d.pair.first.user_count(), d.pair.second.user_count());
    d.truth = std::move(t);
  }
  if (std::filesystem::exists(dir / "candidates.tsv")) {
    auto in = open_input(dir / "candidates.tsv");
    d.candidates = parse_anchors(d.pair.first, d.pair.second, in, "candidates.tsv");
  }
  index_dataset(d);
  return d;
}

/// Writes a dataset directory that load_dataset reads back.
inline void write_dataset(const std::filesystem::path& dir, const AlignedNetworkPair& pair,
                          const std::vector<AnchorLink>& known,
                          const std::vector<AnchorLink>* truth = nullptr,
                          const std::vector<AnchorLink>* candidates = nullptr) {
  write_network_dir(pair.first, dir / "net1");
  write_network_dir(pair.second, dir / "net2");
  auto put = [&](const char* file, const std::vector<AnchorLink>& v) {
    std::ofstream out(dir / file);
    if (!out) throw Error("cannot write " + (dir / file).string());
    write_anchors(pair, v, out);
  };
  put("anchors.tsv", known);
  if (truth) put("truth.tsv", *truth);
  if (candidates) put("candidates.tsv", *candidates);
}

struct SessionOptions {
  ExperimentConfig config;
  QueryStrategy strategy = QueryStrategy::Conflict;
};

inline QueryStrategy parse_strategy(const std::string& s) {
  if (s == "conflict" || s == "activeiter") return QueryStrategy::Conflict;
  if (s == "random") return QueryStrategy::Random;
  throw BadRequest("unknown strategy '" + s + "'");
}

inline std::string to_string(QueryStrategy s) {
  return s == QueryStrategy::Random ? "random" : "conflict";
}

/// Builds H for a dataset: known anchors first, then either the listed
/// candidates or the full cross product.
inline CandidateLinkSpace dataset_space(const Dataset& d) {
  if (d.candidates.empty()) return build_full_candidate_space(d.pair);
  std::unordered_set<AnchorLink, AnchorHash> seen(d.pair.anchors.begin(), d.pair.anchors.end());
  std::vector<AnchorLink> rest;
  for (const auto& c : d.candidates)
    if (seen.insert(c).second) rest.push_back(c);
  return build_candidate_space(d.pair, rest);
}

class SessionManager {
 public:
  /// `data_root` holds one directory per dataset; `state_dir` (optional)
  /// receives one checkpoint file per session and is scanned on start.
  SessionManager(std::filesystem::path data_root, std::filesystem::path state_dir = {})
      : data_root_(std::move(data_root)), state_dir_(std::move(state_dir)) {
    std::random_device rd;
    ids_.seed((std::uint64_t(rd()) << 32) ^ rd());
    if (!state_dir_.empty()) {
      std::filesystem::create_directories(state_dir_);
      for (const auto& e : std::filesystem::directory_iterator(state_dir_)) {
        if (e.path().extension() == ".json") known_files_.push_back(e.path());
      }
      std::sort(known_files_.begin(), known_files_.end());
    }
  }

  /// Makes an in-memory dataset available under `name`.
  void register_dataset(Dataset d) {
    std::unique_lock lock(mu_);
    auto name = d.name;
    datasets_[name] = std::make_shared<const Dataset>(std::move(d));
  }

  std::vector<std::string> dataset_names() const {
    std::vector<std::string> out;
    {
      std::shared_lock lock(mu_);
      for (const auto& [name, _] : datasets_) out.push_back(name);
    }
    if (!data_root_.empty() && std::filesystem::is_directory(data_root_)) {
      for (const auto& e : std::filesystem::directory_iterator(data_root_)) {
        if (e.is_directory() && std::filesystem::exists(e.path() / "anchors.tsv")) {
          out.push_back(e.path().filename().string());
        }
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::string create(const std::string& dataset, const SessionOptions& opts) {
    try {
      opts.config.validate();
    } catch (const Error& e) {
      throw BadRequest(std::string("invalid config: ") + e.what());
    }
    auto data = dataset_by_name(dataset);
    auto entry = std::make_shared<Entry>();
    {
      std::unique_lock lock(mu_);
      do {
        std::ostringstream id;
        id << std::hex << ids_();
        entry->id = id.str();
      } while (sessions_.contains(entry->id));
    }
    build(*entry, data, opts);
    entry->session.emplace(*entry->space, entry->X, entry->known_labels(), opts.config.solver,
                           active_config(opts), refresh_for(*entry));
    persist(*entry);
    std::unique_lock lock(mu_);
    sessions_[entry->id] = entry;
    return entry->id;
  }

  nlohmann::json pending(const std::string& id) {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    nlohmann::json items = nlohmann::json::array();
    const auto& s = *e->session;
    auto open = s.unresolved();
    for (const auto& b : s.pending()) {
      if (std::find(open.begin(), open.end(), b.link) == open.end()) continue;
      items.push_back(evidence(*e, b));
    }
    return {{"session_id", e->id},
            {"round", s.round()},
            {"done", s.done()},
            {"status", s.done() ? "done" : "pending"},
            {"items", items}};
  }

  nlohmann::json answer(const std::string& id, const std::vector<Answer>& answers) {
    auto e = find(id);
    std::unique_lock lock(e->mu);
    auto& s = *e->session;
    if (s.done()) throw Conflict("session is complete");
    if (answers.empty()) throw BadRequest("no answers given");
    auto open = s.unresolved();
    std::unordered_set<LinkId> seen;
    for (const auto& a : answers) {
      if (!seen.insert(a.link).second) {
        throw Conflict("duplicate answer for link " + std::to_string(a.link));
      }
      if (std::find(open.begin(), open.end(), a.link) == open.end()) {
        throw Conflict("link " + std::to_string(a.link) + " is not pending");
      }
    }
    try {
      s.submit(answers);
    } catch (const UnknownLinkError& err) {
      throw Conflict(err.what());
    } catch (const RepeatedQueryError& err) {
      throw Conflict(err.what());
    } catch (const BudgetExhausted& err) {
      throw Conflict(err.what());
    }
    persist(*e);
    return status_locked(*e);
  }

  nlohmann::json status(const std::string& id) {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    return status_locked(*e);
  }

  bool done(const std::string& id) {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    return e->session->done();
  }

  /// Final labels of a session, indexed like its candidate space.
  std::vector<std::uint8_t> labels(const std::string& id) {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    return e->session->state().labels.y;
  }

  /// The candidate links of a session, indexed by link id.
  std::vector<AnchorLink> links(const std::string& id) {
    auto e = find(id);
    return e->space->links();
  }

  nlohmann::json checkpoint(const std::string& id) {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    return e->session->checkpoint();
  }

  std::vector<std::string> session_ids() {
    restore_all();
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : sessions_) out.push_back(k);
    return out;
  }

 private:
  struct Entry {
    std::string id;
    std::shared_ptr<const Dataset> data;
    SessionOptions opts;
    std::unique_ptr<CandidateLinkSpace> space;
    Eigen::MatrixXd X;
    std::vector<std::string> columns;
    std::vector<char> truth;  // empty without ground truth
    std::vector<MetaDiagram> diagrams;
    std::optional<ActiveSession> session;
    mutable std::shared_mutex mu;

    LabelState known_labels() const {
      std::vector<LinkId> known;
      for (const auto& a : data->pair.anchors) known.push_back(*space->find(a));
      return initial_labels(space->size(), known);
    }
  };

  static ActiveConfig active_config(const SessionOptions& o) {
    auto a = o.config.active(Method::ActiveIter, o.config.budget);
    a.strategy = o.strategy;
    return a;
  }

  FeatureRefresh refresh_for(Entry& e) {
    if (!e.opts.config.recompute_features) return {};
    auto* entry = &e;
    return [entry](const std::vector<LinkId>& positives) {
      std::vector<AnchorLink> anchors;
      for (auto l : positives) anchors.push_back((*entry->space)[l]);
      return build_feature_matrix(*entry->space, entry->diagrams, entry->data->pair, anchors,
                                  entry->opts.config.cache)
          .values;
    };
  }

  void build(Entry& e, std::shared_ptr<const Dataset> data, const SessionOptions& opts) {
    e.data = std::move(data);
    e.opts = opts;
    e.space = std::make_unique<CandidateLinkSpace>(dataset_space(*e.data));
    e.diagrams = enumerate_diagrams(opts.config.policy);
    auto fm = build_feature_matrix(*e.space, e.diagrams, e.data->pair, e.data->pair.anchors,
                                   opts.config.cache);
    e.X = std::move(fm.values);
    e.columns = std::move(fm.columns);
    if (e.data->truth) {
      e.truth.assign(e.space->size(), 0);
      for (const auto& a : *e.data->truth)
        if (auto l = e.space->find(a)) e.truth[*l] = 1;
    }
  }

  std::shared_ptr<const Dataset> dataset_by_name(const std::string& name) {
    {
      std::shared_lock lock(mu_);
      if (auto it = datasets_.find(name); it != datasets_.end()) return it->second;
    }
    if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos ||
        data_root_.empty()) {
      throw NotFound("unknown dataset '" + name + "'");
    }
    auto dir = data_root_ / name;
    if (!std::filesystem::exists(dir / "anchors.tsv")) {
      throw NotFound("unknown dataset '" + name + "'");
    }
    auto d = std::make_shared<const Dataset>(load_dataset(dir));
    std::unique_lock lock(mu_);
    return datasets_.try_emplace(name, d).first->second;
  }

  std::shared_ptr<Entry> find(const std::string& id) {
    {
      std::shared_lock lock(mu_);
      if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
    }
    if (auto e = restore_one(id)) return e;
    throw NotFound("unknown session '" + id + "'");
  }

  void restore_all() {
    for (const auto& p : known_files_) restore_one(p.stem().string());
  }

  // Lazily brings a persisted session back.
  std::shared_ptr<Entry> restore_one(const std::string& id) {
    if (state_dir_.empty() || id.empty() || id.find('/') != std::string::npos) return nullptr;
    std::unique_lock restore_lock(restore_mu_);
    {
      std::shared_lock lock(mu_);
      if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
    }
    const auto file = state_dir_ / (id + ".json");
    if (!std::filesystem::exists(file)) return nullptr;
    std::ifstream in(file);
    const auto j = nlohmann::json::parse(in);
    auto e = std::make_shared<Entry>();
    e->id = id;
    SessionOptions opts;
    from_json(j.at("config"), opts.config);
    opts.strategy = parse_strategy(j.at("strategy").get<std::string>());
    build(*e, dataset_by_name(j.at("dataset").get<std::string>()), opts);
    e->session.emplace(ActiveSession::restore(*e->space, e->X, opts.config.solver,
                                              active_config(opts), j.at("checkpoint"),
                                              refresh_for(*e)));
    std::unique_lock lock(mu_);
    return sessions_.try_emplace(id, e).first->second;
  }

  void persist(const Entry& e) const {
    if (state_dir_.empty()) return;
    nlohmann::json j{{"id", e.id},
                     {"dataset", e.data->name},
                     {"config", to_json(e.opts.config)},
                     {"strategy", to_string(e.opts.strategy)},
                     {"checkpoint", e.session->checkpoint()}};
    const auto tmp = state_dir_ / (e.id + ".json.tmp");
    {
      std::ofstream out(tmp);
      if (!out) throw Error("cannot write checkpoint " + tmp.string());
      out << j.dump();
    }
    std::filesystem::rename(tmp, state_dir_ / (e.id + ".json"));
  }

  static nlohmann::json user_panel(const Dataset& d, int side, UserIndex u) {
    const auto& g = side == 0 ? d.pair.first : d.pair.second;
    const auto& prof = d.profiles[side][u];
    nlohmann::json posts = nlohmann::json::array();
    for (auto p : prof.posts) {
      nlohmann::json attrs = nlohmann::json::array();
      for (auto i : d.post_attrs[side][p]) {
        const auto& a = g.attributes()[i];
        attrs.push_back({{"type", std::string(to_string(a.type))}, {"value", a.value}});
      }
      posts.push_back({{"id", g.post_ids()[p]}, {"attributes", attrs}});
    }
    return {{"id", g.user_ids()[u]},
            {"network", g.id()},
            {"followers", prof.followers},
            {"followees", prof.followees},
            {"post_count", prof.posts.size()},
            {"posts", posts}};
  }

  static nlohmann::json evidence(const Entry& e, const BatchItem& b) {
    const auto& link = (*e.space)[b.link];
    const auto row = static_cast<Eigen::Index>(b.link);
    std::vector<std::size_t> cols;
    for (std::size_t k = 0; k + 1 < e.columns.size(); ++k)
      if (e.X(row, static_cast<Eigen::Index>(k)) > 0.0) cols.push_back(k);
    std::stable_sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t c) {
      return e.X(row, static_cast<Eigen::Index>(a)) > e.X(row, static_cast<Eigen::Index>(c));
    });
    if (cols.size() > 5) cols.resize(5);
    nlohmann::json diagrams = nlohmann::json::array();
    for (auto k : cols) {
      diagrams.push_back({{"name", e.columns[k]}, {"score", e.X(row, static_cast<Eigen::Index>(k))}});
    }
    return {{"link_id", b.link},
            {"rank_key", b.rank_key},
            {"source", std::string(to_string(b.source))},
            {"score", e.session->state().scores(row)},
            {"user1", user_panel(*e.data, 0, link.user1)},
            {"user2", user_panel(*e.data, 1, link.user2)},
            {"diagrams", diagrams}};
  }

  static nlohmann::json status_locked(const Entry& e) {
    const auto& s = *e.session;
    const auto& b = s.budget();
    nlohmann::json log = nlohmann::json::array();
    for (const auto& r : s.query_log()) log.push_back(to_json(r));
    nlohmann::json j{{"session_id", e.id},
                     {"dataset", e.data->name},
                     {"strategy", to_string(e.opts.strategy)},
                     {"round", s.round()},
                     {"done", s.done()},
                     {"budget",
                      {{"spent", b.spent},
                       {"total", b.total},
                       {"remaining", b.remaining()},
                       {"batch_size", b.batch_size}}},
                     {"pending", s.unresolved().size()},
                     {"links", e.space->size()},
                     {"converged", s.state().converged},
                     {"iterations", s.state().iterations},
                     {"convergence",
                      {{"delta_traces", s.delta_traces()},
                       {"objective_traces", s.objective_traces()}}},
                     {"query_log", log}};
    if (!e.truth.empty()) {
      std::vector<LinkId> eval, queried;
      const auto& labels = s.state().labels;
      for (LinkId l = 0; l < labels.size(); ++l) {
        if (labels.provenance[l] == Provenance::Inferred) eval.push_back(l);
      }
      const auto m = evaluate(labels.y, e.truth, eval, queried);
      j["metrics"] = {{"tp", m.tp},         {"fp", m.fp},          {"fn", m.fn},
                      {"tn", m.tn},         {"precision", m.precision},
                      {"recall", m.recall}, {"f1", m.f1},          {"accuracy", m.accuracy}};
    }
    return j;
  }

  std::filesystem::path data_root_;
  std::filesystem::path state_dir_;
  std::vector<std::filesystem::path> known_files_;
  mutable std::shared_mutex mu_;
  std::mutex restore_mu_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mt19937_64 ids_;
};

namespace detail {

inline void send_json(httplib::Response& res, int code, const nlohmann::json& body) {
  res.status = code;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int code, const std::string& kind,
                       const std::string& message) {
  send_json(res, code, {{"error", {{"code", kind}, {"message", message}}}});
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const NotFound& e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const Conflict& e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const BadRequest& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const ParseError& e) {
    send_error(res, 422, "dataset_error", e.what());
  } catch (const SchemaError& e) {
    send_error(res, 422, "dataset_error", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

inline std::optional<bool> parse_label(const nlohmann::json& a) {
  if (a.value("skip", false)) return std::nullopt;
  if (!a.contains("label")) throw BadRequest("answer needs a label");
  const auto& v = a.at("label");
  if (v.is_null()) return std::nullopt;
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) {
    const auto n = v.get<long long>();
    if (n == 0 || n == 1) return n == 1;
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "skip") return std::nullopt;
    if (s == "same" || s == "yes") return true;
    if (s == "different" || s == "no") return false;
  }
  throw BadRequest("label must be 1, 0, true, false, null or \"skip\"");
}

}  // namespace detail

inline void install_routes(httplib::Server& server, SessionManager& mgr) {
  using httplib::Request;
  using httplib::Response;
  using detail::guarded;
  using detail::send_json;

  server.Get("/v1/datasets", [&mgr](const Request&, Response& res) {
    guarded(res, [&] { send_json(res, 200, {{"datasets", mgr.dataset_names()}}); });
  });

  server.Get("/v1/sessions", [&mgr](const Request&, Response& res) {
    guarded(res, [&] { send_json(res, 200, {{"sessions", mgr.session_ids()}}); });
  });

  server.Post("/v1/sessions", [&mgr](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      if (!body.contains("dataset")) throw BadRequest("missing 'dataset'");
      SessionOptions opts;
      if (body.contains("config")) from_json(body.at("config"), opts.config);
      if (body.contains("strategy")) opts.strategy = parse_strategy(body.at("strategy").get<std::string>());
      const auto id = mgr.create(body.at("dataset").get<std::string>(), opts);
      send_json(res, 200, {{"session_id", id}, {"status", mgr.status(id)}});
    });
  });

  server.Get("/v1/sessions/:id/pending", [&mgr](const Request& req, Response& res) {
    guarded(res, [&] { send_json(res, 200, mgr.pending(req.path_params.at("id"))); });
  });

  server.Get("/v1/sessions/:id/status", [&mgr](const Request& req, Response& res) {
    guarded(res, [&] { send_json(res, 200, mgr.status(req.path_params.at("id"))); });
  });

  server.Post("/v1/sessions/:id/answers", [&mgr](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      const auto& list = body.is_array() ? body : body.at("answers");
      std::vector<Answer> answers;
      for (const auto& a : list) {
        answers.push_back({a.at("link_id").get<LinkId>(), detail::parse_label(a)});
      }
      send_json(res, 200, mgr.answer(req.path_params.at("id"), answers));
    });
  });
}

}  // namespace activeiter
