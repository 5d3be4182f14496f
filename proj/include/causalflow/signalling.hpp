#pragma once

// Signalling relations of a channel: S_I -> S_O holds iff tracing the other
// outputs does not make the map invariant under trace-and-replace on S_I.
// By linearity this is decided exactly on matrix units: writing
// F(x) = tr_{O\S_O}(Phi(x)), no-signalling holds iff
//   (a) F(e_ij^{S_I} (x) e_kl^{rest}) = 0 for all i != j, and
//   (b) F(e_ii^{S_I} (x) e_kl^{rest}) is independent of i.

#include "causalflow/channel.hpp"

#include <set>
#include <sstream>

namespace causalflow {

struct SignallingEdge {
  std::vector<std::string> source;  // subset of input-side labels
  std::vector<std::string> target;  // subset of output-side labels
  bool operator<(const SignallingEdge& other) const {
    return std::tie(source, target) < std::tie(other.source, other.target);
  }
};

struct SignallingStructure {
  std::vector<std::string> input_side;
  std::vector<std::string> output_side;
  std::vector<SignallingEdge> edges;

  std::vector<std::string> systems() const {
    std::vector<std::string> all = input_side;
    for (const auto& l : output_side)
      if (std::find(all.begin(), all.end(), l) == all.end()) all.push_back(l);
    return all;
  }

  void add_edge(std::vector<std::string> src, std::vector<std::string> tgt) {
    std::sort(src.begin(), src.end());
    std::sort(tgt.begin(), tgt.end());
    SignallingEdge e{std::move(src), std::move(tgt)};
    for (const auto& l : e.source)
      if (std::find(input_side.begin(), input_side.end(), l) == input_side.end())
        throw ChannelError("signalling edge source outside input side: " + l);
    for (const auto& l : e.target)
      if (std::find(output_side.begin(), output_side.end(), l) == output_side.end())
        throw ChannelError("signalling edge target outside output side: " + l);
    if (std::find(edges.begin(), edges.end(), e) == edges.end()) edges.push_back(std::move(e));
  }

  bool has_edge(std::vector<std::string> src, std::vector<std::string> tgt) const {
    std::sort(src.begin(), src.end());
    std::sort(tgt.begin(), tgt.end());
    SignallingEdge e{std::move(src), std::move(tgt)};
    return std::find(edges.begin(), edges.end(), e) != edges.end();
  }
};

inline bool operator==(const SignallingEdge& a, const SignallingEdge& b) {
  return a.source == b.source && a.target == b.target;
}

// ---------------------------------------------------------------------------

inline bool signals(const QuantumChannel& ch, const std::vector<std::string>& s_in,
                    const std::vector<std::string>& s_out, double tol = kDefaultTol) {
  if (s_in.empty() || s_out.empty()) throw ChannelError("signals: empty subset");
  for (const auto& l : s_in)
    if (!ch.in().contains(l)) throw ChannelError("signals: " + l + " is not an input label");
  for (const auto& l : s_out)
    if (!ch.out().contains(l)) throw ChannelError("signals: " + l + " is not an output label");

  // reduced Choi on input (x) kept outputs, rows (full input, kept out)
  cxmat red = ch.reduced_choi_keep_outputs(s_out);
  long dk = 1;
  {
    auto keep = ch.out().indices_of(s_out);
    for (int k : keep) dk *= ch.out().factor(k).dim;
  }
  const double scale = std::max(1.0, red.norm());

  // split input digits into source digits and rest digits
  std::vector<int> src = ch.in().indices_of(s_in);
  std::sort(src.begin(), src.end());
  std::vector<int> rest;
  for (int k = 0; k < ch.in().size(); ++k)
    if (std::find(src.begin(), src.end(), k) == src.end()) rest.push_back(k);
  const auto dims = ch.in().dims();
  const auto strides = strides_of(dims);
  long ds = 1, dr = 1;
  for (int k : src) ds *= dims[static_cast<std::size_t>(k)];
  for (int k : rest) dr *= dims[static_cast<std::size_t>(k)];

  auto offset_table = [&](const std::vector<int>& positions, long count) {
    std::vector<long> off(static_cast<std::size_t>(count), 0);
    std::vector<int> digs(positions.size());
    for (long i = 0; i < count; ++i) {
      long rem = i;
      for (int k = static_cast<int>(positions.size()) - 1; k >= 0; --k) {
        const int d = dims[static_cast<std::size_t>(positions[static_cast<std::size_t>(k)])];
        digs[static_cast<std::size_t>(k)] = static_cast<int>(rem % d);
        rem /= d;
      }
      long o = 0;
      for (std::size_t k = 0; k < positions.size(); ++k)
        o += strides[static_cast<std::size_t>(positions[k])] * digs[k];
      off[static_cast<std::size_t>(i)] = o;
    }
    return off;
  };
  const auto soff = offset_table(src, ds);
  const auto roff = offset_table(rest, dr);

  // condition (a): blocks with i != j on the source must vanish
  for (long i = 0; i < ds; ++i)
    for (long j = 0; j < ds; ++j) {
      if (i == j) continue;
      double norm2 = 0.0;
      for (long k = 0; k < dr; ++k)
        for (long l = 0; l < dr; ++l) {
          const long row0 = (soff[static_cast<std::size_t>(i)] + roff[static_cast<std::size_t>(k)]) * dk;
          const long col0 = (soff[static_cast<std::size_t>(j)] + roff[static_cast<std::size_t>(l)]) * dk;
          for (long o = 0; o < dk; ++o)
            for (long o2 = 0; o2 < dk; ++o2) norm2 += std::norm(red(row0 + o, col0 + o2));
        }
      if (std::sqrt(norm2) > tol * scale) return true;
    }

  // condition (b): diagonal source blocks must all match the first one
  for (long i = 1; i < ds; ++i) {
    double norm2 = 0.0;
    for (long k = 0; k < dr; ++k)
      for (long l = 0; l < dr; ++l) {
        const long rowi = (soff[static_cast<std::size_t>(i)] + roff[static_cast<std::size_t>(k)]) * dk;
        const long coli = (soff[static_cast<std::size_t>(i)] + roff[static_cast<std::size_t>(l)]) * dk;
        const long row0 = (soff[0] + roff[static_cast<std::size_t>(k)]) * dk;
        const long col0 = (soff[0] + roff[static_cast<std::size_t>(l)]) * dk;
        for (long o = 0; o < dk; ++o)
          for (long o2 = 0; o2 < dk; ++o2)
            norm2 += std::norm(red(rowi + o, coli + o2) - red(row0 + o, col0 + o2));
      }
    if (std::sqrt(norm2) > tol * scale) return true;
  }
  return false;
}

// Brute-force cross-check used by property tests: sample random global states
// and random replacement states and compare the two sides of the defining
// inequality directly.
inline bool signals_sampling_oracle(const QuantumChannel& ch, const std::vector<std::string>& s_in,
                                    const std::vector<std::string>& s_out, int samples,
                                    std::mt19937_64& rng, double tol = 1e-7) {
  std::vector<int> src = ch.in().indices_of(s_in);
  std::sort(src.begin(), src.end());
  std::vector<int> rest;
  for (int k = 0; k < ch.in().size(); ++k)
    if (std::find(src.begin(), src.end(), k) == src.end()) rest.push_back(k);
  long ds = 1;
  for (int k : src) ds *= ch.in().factor(k).dim;

  std::vector<std::string> rest_labels;
  for (int k : rest) rest_labels.push_back(ch.in().factor(k).label);

  // reorder the channel so the source factors come first
  std::vector<std::string> order;
  for (int k : src) order.push_back(ch.in().factor(k).label);
  order.insert(order.end(), rest_labels.begin(), rest_labels.end());
  QuantumChannel re = ch.with_input_order(order);

  for (int t = 0; t < samples; ++t) {
    cxmat sigma = random_density(rng, ch.in().dim());
    cxmat rho = random_density(rng, static_cast<int>(ds));
    cxmat sigma_rest = partial_trace(sigma, re.in(), rest_labels);
    cxmat replaced = kron(rho, sigma_rest);
    cxmat out1 = partial_trace(re.apply(sigma), re.out(), s_out);
    cxmat out2 = partial_trace(re.apply(replaced), re.out(), s_out);
    if ((out1 - out2).norm() > tol) return true;
  }
  return false;
}

namespace detail {

inline std::vector<std::vector<std::string>> label_subsets(const std::vector<std::string>& labels,
                                                           int max_size) {
  std::vector<std::vector<std::string>> subsets;
  const int n = static_cast<int>(labels.size());
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    int sz = __builtin_popcount(mask);
    if (sz > max_size && sz != n) continue;  // cap, but always include the full set
    std::vector<std::string> s;
    for (int k = 0; k < n; ++k)
      if (mask & (1u << k)) s.push_back(labels[static_cast<std::size_t>(k)]);
    subsets.push_back(std::move(s));
  }
  return subsets;
}

}  // namespace detail

// Edges for all source/target subsets up to the size cap (the full sets are
// always included); each edge decided by the exact procedure above.
inline SignallingStructure signalling_structure(const QuantumChannel& ch, int max_subset_size = 2,
                                                double tol = kDefaultTol) {
  if (max_subset_size < 1) throw ChannelError("signalling_structure: cap must be >= 1");
  SignallingStructure st;
  st.input_side = ch.in().labels();
  st.output_side = ch.out().labels();
  for (const auto& src : detail::label_subsets(st.input_side, max_subset_size))
    for (const auto& tgt : detail::label_subsets(st.output_side, max_subset_size))
      if (signals(ch, src, tgt, tol)) st.add_edge(src, tgt);
  return st;
}

// Lemma-style oracle: every coarse edge S_I -> S_O must reappear between the
// fine-grained system sets.  Exposed as a check; it must always return true
// when `fine` really is a fine-graining of `coarse`.
inline bool preserves_signalling_under_fine_graining(const QuantumChannel& coarse,
                                                     const QuantumChannel& fine,
                                                     const SystemFineGraining& sys_map,
                                                     int max_subset_size = 2,
                                                     double tol = kDefaultTol) {
  if (!is_fine_graining_of(fine, coarse, sys_map))
    throw ChannelError("preserves_signalling_under_fine_graining: precondition failed");
  auto fine_labels_of = [&](const std::vector<std::string>& coarse_labels, bool input) {
    std::vector<std::string> out;
    const auto& entries = input ? sys_map.inputs : sys_map.outputs;
    for (const auto& cl : coarse_labels) {
      bool found = false;
      for (const auto& e : entries)
        if (e.coarse_label == cl) {
          out.insert(out.end(), e.fine_labels.begin(), e.fine_labels.end());
          found = true;
        }
      if (!found) throw ChannelError("no fine-graining entry for " + cl);
    }
    return out;
  };
  SignallingStructure coarse_st = signalling_structure(coarse, max_subset_size, tol);
  for (const auto& e : coarse_st.edges) {
    auto fsrc = fine_labels_of(e.source, true);
    auto ftgt = fine_labels_of(e.target, false);
    if (!signals(fine, fsrc, ftgt, tol)) return false;
  }
  return true;
}

// DOT rendering with subset nodes spelled out verbatim, e.g. "{A_O,B_O}"
inline std::string to_dot(const SignallingStructure& st, const std::string& name = "signalling") {
  auto subset_name = [](const std::vector<std::string>& s) {
    std::ostringstream os;
    os << "{";
    for (std::size_t k = 0; k < s.size(); ++k) os << (k ? "," : "") << s[k];
    os << "}";
    return os.str();
  };
  std::set<std::string> nodes;
  std::ostringstream os;
  os << "digraph " << name << " {\n";
  for (const auto& e : st.edges) {
    nodes.insert(subset_name(e.source));
    nodes.insert(subset_name(e.target));
  }
  for (const auto& n : nodes) os << "  \"" << n << "\";\n";
  for (const auto& e : st.edges)
    os << "  \"" << subset_name(e.source) << "\" -> \"" << subset_name(e.target) << "\";\n";
  os << "}\n";
  return os.str();
}

}  // namespace causalflow
