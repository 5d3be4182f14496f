#pragma once

// Directed graphs as abstract causal structures: reachability, compatibility
// of signalling structures with a causal structure, graph fine-graining, and
// the loop-node splitting that embeds any digraph into a chain.

#include "causalflow/signalling.hpp"

#include <map>
#include <queue>
#include <set>

namespace causalflow {

class GraphError : public std::runtime_error {
 public:
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

class DiGraph {
 public:
  DiGraph() = default;

  explicit DiGraph(std::vector<std::string> nodes, bool allow_self_loops = false)
      : allow_self_loops_(allow_self_loops) {
    for (auto& n : nodes) add_node(std::move(n));
  }

  void add_node(std::string n) {
    if (!index_.count(n)) {
      index_[n] = static_cast<int>(nodes_.size());
      nodes_.push_back(std::move(n));
      adj_.emplace_back();
    }
  }

  void add_edge(const std::string& a, const std::string& b) {
    if (!index_.count(a) || !index_.count(b)) throw GraphError("edge endpoint not a node");
    if (a == b && !allow_self_loops_) throw GraphError("self-loop not allowed: " + a);
    adj_[static_cast<std::size_t>(index_.at(a))].insert(index_.at(b));
  }

  bool has_node(const std::string& n) const { return index_.count(n) > 0; }

  bool has_edge(const std::string& a, const std::string& b) const {
    if (!index_.count(a) || !index_.count(b)) return false;
    return adj_[static_cast<std::size_t>(index_.at(a))].count(index_.at(b)) > 0;
  }

  const std::vector<std::string>& nodes() const { return nodes_; }

  std::vector<std::pair<std::string, std::string>> edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t u = 0; u < adj_.size(); ++u)
      for (int v : adj_[u]) out.emplace_back(nodes_[u], nodes_[static_cast<std::size_t>(v)]);
    std::sort(out.begin(), out.end());
    return out;
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  // reachability with at least one edge
  std::vector<std::vector<bool>> reachability() const {
    const int n = size();
    std::vector<std::vector<bool>> r(static_cast<std::size_t>(n),
                                     std::vector<bool>(static_cast<std::size_t>(n), false));
    for (int s = 0; s < n; ++s) {
      std::queue<int> q;
      for (int v : adj_[static_cast<std::size_t>(s)]) {
        if (!r[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)]) {
          r[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)] = true;
          q.push(v);
        }
      }
      while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : adj_[static_cast<std::size_t>(u)])
          if (!r[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)]) {
            r[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)] = true;
            q.push(v);
          }
      }
    }
    return r;
  }

  bool is_acyclic() const {
    auto r = reachability();
    for (int v = 0; v < size(); ++v)
      if (r[static_cast<std::size_t>(v)][static_cast<std::size_t>(v)]) return false;
    return true;
  }

  int index(const std::string& n) const {
    auto it = index_.find(n);
    if (it == index_.end()) throw GraphError("unknown node: " + n);
    return it->second;
  }

  std::vector<std::string> parents(const std::string& n) const {
    std::vector<std::string> out;
    int t = index(n);
    for (std::size_t u = 0; u < adj_.size(); ++u)
      if (adj_[u].count(t)) out.push_back(nodes_[u]);
    return out;
  }

  std::vector<std::string> children(const std::string& n) const {
    std::vector<std::string> out;
    for (int v : adj_[static_cast<std::size_t>(index(n))])
      out.push_back(nodes_[static_cast<std::size_t>(v)]);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  bool allow_self_loops_ = false;
  std::vector<std::string> nodes_;
  std::map<std::string, int> index_;
  std::vector<std::set<int>> adj_;
};

inline bool has_path(const DiGraph& g, const std::string& a, const std::string& b) {
  const auto r = g.reachability();
  return r[static_cast<std::size_t>(g.index(a))][static_cast<std::size_t>(g.index(b))];
}

// ---------------------------------------------------------------------------
// Embedding systems in a causal structure and compatibility
// ---------------------------------------------------------------------------

// injective assignment of system labels to nodes of a causal structure
struct NodeEmbedding {
  std::map<std::string, std::string> map;

  const std::string& at(const std::string& system) const {
    auto it = map.find(system);
    if (it == map.end()) throw GraphError("embedding does not cover system " + system);
    return it->second;
  }

  void validate_injective() const {
    std::set<std::string> seen;
    for (const auto& [s, n] : map) {
      (void)s;
      if (!seen.insert(n).second) throw GraphError("embedding is not injective at node " + n);
    }
  }
};

namespace detail {

// signalling structure as a digraph over its subset nodes
inline DiGraph subset_graph(const SignallingStructure& sig) {
  auto subset_name = [](const std::vector<std::string>& s) {
    std::string out = "{";
    for (std::size_t k = 0; k < s.size(); ++k) out += (k ? "," : "") + s[k];
    return out + "}";
  };
  DiGraph g;
  for (const auto& e : sig.edges) {
    g.add_node(subset_name(e.source));
    g.add_node(subset_name(e.target));
  }
  for (const auto& e : sig.edges) g.add_edge(subset_name(e.source), subset_name(e.target));
  return g;
}

}  // namespace detail

// Compatibility of a signalling structure with a causal structure: every
// directed path S1 -> ... -> S2 between subset nodes must admit s1 in S1 and
// s2 in S2 whose embedded nodes are connected by a directed path.
inline bool compatible(const SignallingStructure& sig, const DiGraph& caus,
                       const NodeEmbedding& emb) {
  for (const auto& s : sig.systems()) emb.at(s);  // errors on uncovered systems

  // collect the distinct subset nodes with their member lists
  std::vector<std::vector<std::string>> subsets;
  auto find_or_add = [&](const std::vector<std::string>& s) {
    auto it = std::find(subsets.begin(), subsets.end(), s);
    if (it == subsets.end()) {
      subsets.push_back(s);
      return static_cast<int>(subsets.size()) - 1;
    }
    return static_cast<int>(it - subsets.begin());
  };
  std::vector<std::pair<int, int>> sedges;
  for (const auto& e : sig.edges) sedges.emplace_back(find_or_add(e.source), find_or_add(e.target));

  const int n = static_cast<int>(subsets.size());
  std::vector<std::vector<bool>> reach(static_cast<std::size_t>(n),
                                       std::vector<bool>(static_cast<std::size_t>(n), false));
  for (auto [a, b] : sedges) reach[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = true;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (reach[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] &&
            reach[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)])
          reach[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;

  const auto creach = caus.reachability();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!reach[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
      bool ok = false;
      for (const auto& s1 : subsets[static_cast<std::size_t>(i)]) {
        for (const auto& s2 : subsets[static_cast<std::size_t>(j)]) {
          int a = caus.index(emb.at(s1));
          int b = caus.index(emb.at(s2));
          if (creach[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) {
            ok = true;
            break;
          }
        }
        if (ok) break;
      }
      if (!ok) return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Graph fine-graining
// ---------------------------------------------------------------------------

struct GraphFineGraining {
  std::map<std::string, std::vector<std::string>> map;

  // ranges are enforced disjoint; overlapping fine-grainings are unvalidated
  void validate_disjoint() const {
    std::set<std::string> seen;
    for (const auto& [n, fs] : map) {
      if (fs.empty()) throw GraphError("empty fine-node set for " + n);
      for (const auto& f : fs)
        if (!seen.insert(f).second) throw GraphError("fine node used twice: " + f);
    }
  }

  const std::vector<std::string>& at(const std::string& n) const {
    auto it = map.find(n);
    if (it == map.end()) throw GraphError("no fine-graining entry for " + n);
    return it->second;
  }
};

inline bool is_graph_fine_graining(const DiGraph& g_fine, const DiGraph& g,
                                   const GraphFineGraining& f) {
  f.validate_disjoint();
  for (const auto& n : g.nodes())
    for (const auto& fn : f.at(n))
      if (!g_fine.has_node(fn)) throw GraphError("fine node outside fine graph: " + fn);

  const auto reach = g.reachability();
  const auto freach = g_fine.reachability();
  for (const auto& a : g.nodes())
    for (const auto& b : g.nodes()) {
      if (a == b) continue;
      if (!reach[static_cast<std::size_t>(g.index(a))][static_cast<std::size_t>(g.index(b))])
        continue;
      bool ok = false;
      for (const auto& fa : f.at(a)) {
        for (const auto& fb : f.at(b)) {
          if (freach[static_cast<std::size_t>(g_fine.index(fa))]
                    [static_cast<std::size_t>(g_fine.index(fb))]) {
            ok = true;
            break;
          }
        }
        if (ok) break;
      }
      if (!ok) return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Splitting loop nodes: any digraph fine-grains to a DAG
// ---------------------------------------------------------------------------

// Loop(G) = { N : N is both its own ancestor and descendant }.  Every loop
// node N splits into N#1 (parents Par(N) \ Loop, children Ch(N)) and N#2
// (parents Par(N), children Ch(N) \ Loop); recombining the copies restores G.
inline std::pair<DiGraph, GraphFineGraining> split_loop_nodes(const DiGraph& g) {
  const auto reach = g.reachability();
  std::set<std::string> loop;
  for (const auto& n : g.nodes())
    if (reach[static_cast<std::size_t>(g.index(n))][static_cast<std::size_t>(g.index(n))])
      loop.insert(n);

  GraphFineGraining f;
  DiGraph dag;
  for (const auto& n : g.nodes()) {
    if (loop.count(n)) {
      dag.add_node(n + "#1");
      dag.add_node(n + "#2");
      f.map[n] = {n + "#1", n + "#2"};
    } else {
      dag.add_node(n);
      f.map[n] = {n};
    }
  }
  for (const auto& [a, b] : g.edges()) {
    const bool la = loop.count(a) > 0, lb = loop.count(b) > 0;
    if (!la && !lb) {
      dag.add_edge(a, b);
    } else if (la && !lb) {
      dag.add_edge(a + "#1", b);
      dag.add_edge(a + "#2", b);
    } else if (!la && lb) {
      dag.add_edge(a, b + "#1");
      dag.add_edge(a, b + "#2");
    } else {
      dag.add_edge(a + "#1", b + "#2");
    }
  }
  return {dag, f};
}

// coarse-grain a split graph back, for the recombination check
inline DiGraph recombine(const DiGraph& dag, const GraphFineGraining& f) {
  std::map<std::string, std::string> owner;
  for (const auto& [n, fs] : f.map)
    for (const auto& fn : fs) owner[fn] = n;
  DiGraph g({}, true);
  for (const auto& [n, fs] : f.map) {
    (void)fs;
    g.add_node(n);
  }
  for (const auto& [a, b] : dag.edges()) {
    const auto& ca = owner.at(a);
    const auto& cb = owner.at(b);
    if (ca != cb || a == b) g.add_edge(ca, cb);
    // distinct copies of one node map to a self-loop
    if (ca == cb && a != b) g.add_edge(ca, cb);
  }
  return g;
}

// Assign distinct integers so that every edge increases; deterministic
// lexicographic tie-break.  The integers are events of a totally ordered
// spacetime.
inline std::map<std::string, long> topological_embed(const DiGraph& dag) {
  if (!dag.is_acyclic()) throw GraphError("topological_embed: graph has a cycle");
  std::map<std::string, int> indeg;
  for (const auto& n : dag.nodes()) indeg[n] = 0;
  for (const auto& [a, b] : dag.edges()) {
    (void)a;
    indeg[b] += 1;
  }
  std::set<std::string> ready;
  for (const auto& [n, d] : indeg)
    if (d == 0) ready.insert(n);
  std::map<std::string, long> order;
  long next = 0;
  while (!ready.empty()) {
    std::string n = *ready.begin();
    ready.erase(ready.begin());
    order[n] = next++;
    for (const auto& c : dag.children(n)) {
      if (--indeg[c] == 0) ready.insert(c);
    }
  }
  return order;
}

// ---------------------------------------------------------------------------
// DOT import/export
// ---------------------------------------------------------------------------

inline std::string to_dot(const DiGraph& g, const std::string& name = "g") {
  std::ostringstream os;
  os << "digraph " << name << " {\n";
  for (const auto& n : g.nodes()) os << "  \"" << n << "\";\n";
  for (const auto& [a, b] : g.edges()) os << "  \"" << a << "\" -> \"" << b << "\";\n";
  os << "}\n";
  return os.str();
}

// minimal DOT reader for graphs written by to_dot
inline DiGraph digraph_from_dot(const std::string& text) {
  DiGraph g({}, true);
  std::istringstream is(text);
  std::string line;
  auto unquote = [](std::string s) {
    auto a = s.find('"');
    auto b = s.rfind('"');
    if (a == std::string::npos || b <= a) return s;
    return s.substr(a + 1, b - a - 1);
  };
  while (std::getline(is, line)) {
    auto arrow = line.find("->");
    auto semi = line.find(';');
    if (semi == std::string::npos) continue;
    if (arrow != std::string::npos) {
      std::string a = unquote(line.substr(0, arrow));
      std::string b = unquote(line.substr(arrow + 2, semi - arrow - 2));
      g.add_node(a);
      g.add_node(b);
      g.add_edge(a, b);
    } else {
      std::string n = unquote(line.substr(0, semi));
      if (!n.empty() && n.find('{') == std::string::npos && n.find('}') == std::string::npos)
        g.add_node(n);
    }
  }
  return g;
}

}  // namespace causalflow
