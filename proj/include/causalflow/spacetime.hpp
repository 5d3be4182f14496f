#pragma once

// Finite spacetimes as strict posets; per-agent coordinate charts; regions
// and the region order; cycle-free tests; relativistic causality; maximal
// fine-graining of spacetime-implemented channels with caller-supplied
// routing.

#include "causalflow/digraph.hpp"

#include <cmath>

namespace causalflow {

class SpacetimeError : public std::runtime_error {
 public:
  explicit SpacetimeError(const std::string& msg) : std::runtime_error(msg) {}
};

class Spacetime {
 public:
  Spacetime() = default;

  // Builds the strict partial order as the transitive closure of the given
  // generating pairs; rejects anything that closes into a cycle.
  static Spacetime from_order(std::vector<std::string> events,
                              const std::vector<std::pair<std::string, std::string>>& pairs) {
    Spacetime st;
    st.events_ = std::move(events);
    for (std::size_t k = 0; k < st.events_.size(); ++k) {
      if (st.index_.count(st.events_[k])) throw SpacetimeError("duplicate event name");
      st.index_[st.events_[k]] = static_cast<int>(k);
    }
    const int n = static_cast<int>(st.events_.size());
    st.prec_.assign(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n), false));
    for (const auto& [a, b] : pairs) st.prec_[static_cast<std::size_t>(st.index_of(a))]
                                             [static_cast<std::size_t>(st.index_of(b))] = true;
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (st.prec_[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] &&
              st.prec_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)])
            st.prec_[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
    for (int i = 0; i < n; ++i)
      if (st.prec_[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)])
        throw SpacetimeError("order relation has a cycle through " + st.events_[static_cast<std::size_t>(i)]);
    return st;
  }

  // Minkowski lightcone order over named points with coordinates (t, x, ...),
  // metric signature (+,-,-,...), c = 1: P < Q iff dt > 0 and dt^2 >= |dx|^2.
  static Spacetime minkowski(const std::vector<std::pair<std::string, std::vector<double>>>& points) {
    Spacetime st;
    for (const auto& [name, coords] : points) {
      if (coords.empty()) throw SpacetimeError("point needs at least a time coordinate");
      st.index_[name] = static_cast<int>(st.events_.size());
      st.events_.push_back(name);
      st.coords_[name] = coords;
    }
    const int n = static_cast<int>(st.events_.size());
    st.prec_.assign(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n), false));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto& p = st.coords_.at(st.events_[static_cast<std::size_t>(i)]);
        const auto& q = st.coords_.at(st.events_[static_cast<std::size_t>(j)]);
        double dt = q[0] - p[0];
        double dr2 = 0.0;
        for (std::size_t c = 1; c < p.size(); ++c) dr2 += (q[c] - p[c]) * (q[c] - p[c]);
        if (dt > 0 && dt * dt >= dr2 - 1e-12)
          st.prec_[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
      }
    return st;
  }

  const std::vector<std::string>& events() const { return events_; }

  int index_of(const std::string& e) const {
    auto it = index_.find(e);
    if (it == index_.end()) throw SpacetimeError("unknown event: " + e);
    return it->second;
  }

  bool precedes(const std::string& a, const std::string& b) const {
    return prec_[static_cast<std::size_t>(index_of(a))][static_cast<std::size_t>(index_of(b))];
  }

  bool has_coordinates() const { return !coords_.empty(); }

  const std::vector<double>& coordinates(const std::string& e) const {
    auto it = coords_.find(e);
    if (it == coords_.end()) throw SpacetimeError("no coordinates for event " + e);
    return it->second;
  }

 private:
  std::vector<std::string> events_;
  std::map<std::string, int> index_;
  std::vector<std::vector<bool>> prec_;
  std::map<std::string, std::vector<double>> coords_;
};

// ---------------------------------------------------------------------------
// Coordinate charts
// ---------------------------------------------------------------------------

// Per-agent coordinates; construction rejects charts that disagree with the
// order relation (P < Q must give t_P < t_Q).
class CoordinateChart {
 public:
  CoordinateChart() = default;

  static CoordinateChart from_coords(std::string agent, const Spacetime& st,
                                     std::map<std::string, std::vector<double>> coords) {
    CoordinateChart ch;
    ch.agent_ = std::move(agent);
    ch.coords_ = std::move(coords);
    for (const auto& e : st.events())
      if (!ch.coords_.count(e)) throw SpacetimeError("chart misses event " + e);
    for (const auto& p : st.events())
      for (const auto& q : st.events())
        if (st.precedes(p, q) && !(ch.time(p) < ch.time(q)))
          throw SpacetimeError("chart violates order monotonicity between " + p + " and " + q);
    return ch;
  }

  // Lorentz boost along x with velocity v (|v| < 1) applied to the stored
  // Minkowski coordinates of the spacetime.
  static CoordinateChart boosted(std::string agent, const Spacetime& st, double v) {
    if (std::abs(v) >= 1.0) throw SpacetimeError("boost velocity must satisfy |v| < 1");
    const double gamma = 1.0 / std::sqrt(1.0 - v * v);
    std::map<std::string, std::vector<double>> coords;
    for (const auto& e : st.events()) {
      auto c = st.coordinates(e);
      if (c.size() < 2) throw SpacetimeError("boost needs at least one spatial coordinate");
      double t = c[0], x = c[1];
      c[0] = gamma * (t - v * x);
      c[1] = gamma * (x - v * t);
      coords[e] = c;
    }
    return from_coords(std::move(agent), st, std::move(coords));
  }

  const std::string& agent() const { return agent_; }

  double time(const std::string& e) const {
    auto it = coords_.find(e);
    if (it == coords_.end()) throw SpacetimeError("chart does not cover event " + e);
    return it->second[0];
  }

 private:
  std::string agent_;
  std::map<std::string, std::vector<double>> coords_;
};

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

struct Region {
  std::vector<std::string> points;

  Region() = default;
  Region(std::initializer_list<std::string> ps) : points(ps) { canonicalize(); }
  explicit Region(std::vector<std::string> ps) : points(std::move(ps)) { canonicalize(); }

  void canonicalize() {
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    if (points.empty()) throw SpacetimeError("region must be nonempty");
  }

  std::string key() const {
    std::string k = "{";
    for (std::size_t i = 0; i < points.size(); ++i) k += (i ? "," : "") + points[i];
    return k + "}";
  }

  bool operator==(const Region& o) const { return points == o.points; }
};

struct RegionEmbedding {
  std::map<std::string, Region> map;

  const Region& at(const std::string& system) const {
    auto it = map.find(system);
    if (it == map.end()) throw SpacetimeError("region embedding misses system " + system);
    return it->second;
  }
};

inline bool region_precedes(const Region& a, const Region& b, const Spacetime& st) {
  for (const auto& p : a.points)
    for (const auto& q : b.points)
      if (st.precedes(p, q)) return true;
  return false;
}

// Region causal structure over distinct regions; edges by region_precedes.
inline DiGraph region_graph(const std::vector<Region>& regions, const Spacetime& st) {
  std::vector<Region> distinct;
  for (const auto& r : regions) {
    if (std::find(distinct.begin(), distinct.end(), r) == distinct.end()) distinct.push_back(r);
  }
  DiGraph g;
  for (const auto& r : distinct) g.add_node(r.key());
  for (const auto& a : distinct)
    for (const auto& b : distinct) {
      if (a == b) continue;
      if (region_precedes(a, b, st)) g.add_edge(a.key(), b.key());
    }
  return g;
}

inline bool is_cycle_free(const std::vector<Region>& regions, const Spacetime& st) {
  return region_graph(regions, st).is_acyclic();
}

// Relativistic causality: compatibility of the signalling structure with the
// region causal structure induced by the embedding.
inline bool relativistic_causality(const SignallingStructure& sig, const RegionEmbedding& emb,
                                   const Spacetime& st) {
  std::vector<Region> regions;
  for (const auto& s : sig.systems()) regions.push_back(emb.at(s));
  DiGraph caus = region_graph(regions, st);
  NodeEmbedding node_emb;
  for (const auto& s : sig.systems()) node_emb.map[s] = emb.at(s).key();
  return compatible(sig, caus, node_emb);
}

inline bool time_localised(const Region& region, const CoordinateChart& chart,
                           double tol = 1e-9) {
  double t0 = chart.time(region.points.front());
  for (const auto& p : region.points)
    if (std::abs(chart.time(p) - t0) > tol) return false;
  return true;
}

// Bijection O: a -> b with p < O(p) for every p, found by bipartite matching;
// nullopt when sizes differ or no such bijection exists.
inline std::optional<std::map<std::string, std::string>> pairwise_correspondence(
    const Region& a, const Region& b, const Spacetime& st) {
  const int n = static_cast<int>(a.points.size());
  if (n != static_cast<int>(b.points.size())) return std::nullopt;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (st.precedes(a.points[static_cast<std::size_t>(i)], b.points[static_cast<std::size_t>(j)]))
        adj[static_cast<std::size_t>(i)].push_back(j);
  std::vector<int> match_b(static_cast<std::size_t>(n), -1);
  std::function<bool(int, std::vector<bool>&)> try_kuhn = [&](int u, std::vector<bool>& used) {
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (used[static_cast<std::size_t>(v)]) continue;
      used[static_cast<std::size_t>(v)] = true;
      if (match_b[static_cast<std::size_t>(v)] < 0 ||
          try_kuhn(match_b[static_cast<std::size_t>(v)], used)) {
        match_b[static_cast<std::size_t>(v)] = u;
        return true;
      }
    }
    return false;
  };
  for (int u = 0; u < n; ++u) {
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    if (!try_kuhn(u, used)) return std::nullopt;
  }
  std::map<std::string, std::string> out;
  for (int v = 0; v < n; ++v)
    out[a.points[static_cast<std::size_t>(match_b[static_cast<std::size_t>(v)])]] =
        b.points[static_cast<std::size_t>(v)];
  return out;
}

// ---------------------------------------------------------------------------
// Maximal fine-graining with caller-supplied routing
// ---------------------------------------------------------------------------

// Elemental wire naming: system S delocalized over region {P,...} splits into
// one vacuum-extended copy per point, labeled "S@P".
inline std::string elemental_label(const std::string& system, const std::string& point) {
  return system + "@" + point;
}

// The routing is a list of stage channels over named wires.  External wires
// use elemental labels; anything else (e.g. a memory wire appearing once as
// an output and once as an input) is internal and gets loop-composed away.
struct Routing {
  std::vector<QuantumChannel> stages;
};

struct MaximalFineGrainResult {
  QuantumChannel channel;
  SystemFineGraining sys_map;
};

// Composes the routing stages into the elemental channel and verifies that,
// restricted to the single-message subspace, it reproduces the coarse
// channel.  Each coarse in/output factor S with region {P1,..,Pk} must appear
// as wires S@P1..S@Pk (vacuum-extended when k > 1); singleton regions may
// keep the original space.
inline MaximalFineGrainResult maximal_fine_grain(const QuantumChannel& coarse,
                                                 const RegionEmbedding& emb,
                                                 const Routing& routing, double tol = 1e-7) {
  // wire up the stages: any label produced by one stage and consumed by
  // another is internal
  std::vector<std::pair<std::string, std::string>> wires;
  std::set<std::string> produced, consumed;
  for (const auto& s : routing.stages) {
    for (const auto& l : s.out().labels()) produced.insert(l);
    for (const auto& l : s.in().labels()) consumed.insert(l);
  }
  for (const auto& l : produced)
    if (consumed.count(l)) wires.emplace_back(l, l);
  // loop() needs distinct in/out labels; rename the consumed side first
  std::vector<QuantumChannel> stages = routing.stages;
  std::vector<std::pair<std::string, std::string>> final_wires;
  for (const auto& [o, i] : wires) {
    (void)i;
    for (auto& s : stages)
      if (s.in().contains(o)) {
        s = s.renamed_inputs([&] {
          auto ls = s.in().labels();
          for (auto& l : ls)
            if (l == o) l = o + ".sink";
          return ls;
        }());
      }
    final_wires.emplace_back(o, o + ".sink");
  }
  QuantumChannel fine = compose_network(stages, final_wires);

  // build the induced system fine-graining and verify it
  SystemFineGraining sys_map;
  auto build_entries = [&](const ProductSpace& coarse_side, const ProductSpace& fine_side) {
    std::vector<SystemFineGrainingEntry> entries;
    for (const auto& f : coarse_side.factors()) {
      const Region& reg = emb.at(f.label);
      if (reg.points.size() == 1 && fine_side.contains(f.label)) {
        entries.push_back(identity_fine_graining_entry(f.label, f.dim));
        continue;
      }
      std::vector<std::string> copies;
      for (const auto& p : reg.points) {
        std::string wire = elemental_label(f.label, p);
        if (!fine_side.contains(wire))
          throw SpacetimeError("routing inconsistent with regions: missing wire " + wire);
        if (fine_side.factor(fine_side.index_of(wire)).dim != f.dim + 1)
          throw SpacetimeError("elemental wire " + wire + " must have dimension " +
                               std::to_string(f.dim + 1));
        copies.push_back(wire);
      }
      entries.push_back(delocalized_fine_graining_entry(f.label, f.dim, copies));
    }
    return entries;
  };
  sys_map.inputs = build_entries(coarse.in(), fine.in());
  sys_map.outputs = build_entries(coarse.out(), fine.out());

  // reorder fine wires to system-major order so the sys_map entries line up
  std::vector<std::string> in_order, out_order;
  for (const auto& e : sys_map.inputs)
    in_order.insert(in_order.end(), e.fine_labels.begin(), e.fine_labels.end());
  for (const auto& e : sys_map.outputs)
    out_order.insert(out_order.end(), e.fine_labels.begin(), e.fine_labels.end());
  fine = fine.with_input_order(in_order).with_output_order(out_order);

  if (!is_fine_graining_of(fine, coarse, sys_map, tol))
    throw SpacetimeError("routing does not reproduce the coarse channel on the "
                         "single-message subspace");
  return {fine, sys_map};
}

}  // namespace causalflow
