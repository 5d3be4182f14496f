#pragma once

// The process-matrix framework as composition: process maps, extended local
// maps, complete/partial composition, the Born rule (both routes), reduced
// processes, fixed-order detection, and validity checking.
//
// Two published conventions are in play and differ by a transpose:
//   local operations   M = [ (I (x) M_hat)(|1>><<1|) ]^T
//   process matrix     W =   (I (x) W_hat)(|1>><<1|)
// Both are derived from the internal Choi convention of channel.hpp in
// exactly two routines below (local_choi and the W <-> map permutation);
// nothing else touches the transpose.

#include "causalflow/digraph.hpp"
#include "causalflow/signalling.hpp"

#include <optional>
#include <set>

namespace causalflow {

class ProcessError : public ChannelError {
 public:
  explicit ProcessError(const std::string& msg) : ChannelError(msg) {}
};

struct Party {
  std::string name;
  int d_in = 1;       // quantum input A_I
  int d_out = 1;      // quantum output A_O
  int d_setting = 1;  // classical setting A_s
  int d_outcome = 1;  // classical outcome A_o

  std::string in_label() const { return name + "_I"; }
  std::string out_label() const { return name + "_O"; }
  std::string setting_label() const { return name + "_s"; }
  std::string outcome_label() const { return name + "_o"; }
};

// ---------------------------------------------------------------------------
// Process matrices
// ---------------------------------------------------------------------------

class ProcessMatrix {
 public:
  ProcessMatrix() = default;

  // W over the party-major interleaved factors [A1_I, A1_O, A2_I, A2_O, ...]
  static ProcessMatrix from_w(std::vector<Party> parties, cxmat w) {
    ProcessMatrix pm;
    pm.parties_ = std::move(parties);
    if (w.rows() != pm.dim() || w.cols() != pm.dim())
      throw ProcessError("from_w: matrix does not match party dimensions");
    pm.w_ = std::move(w);
    return pm;
  }

  static ProcessMatrix from_pure_w(std::vector<Party> parties, const cxvec& wvec) {
    ProcessMatrix pm;
    pm.parties_ = std::move(parties);
    if (wvec.size() != pm.dim()) throw ProcessError("from_pure_w: vector dimension mismatch");
    pm.w_ = cxmat(wvec * wvec.adjoint());
    return pm;
  }

  // process map W_hat: inputs [A1_O..AN_O], outputs [A1_I..AN_I]
  static ProcessMatrix from_map(std::vector<Party> parties, QuantumChannel map) {
    ProcessMatrix pm;
    pm.parties_ = std::move(parties);
    std::vector<std::string> want_in, want_out;
    for (const auto& p : pm.parties_) {
      want_in.push_back(p.out_label());
      want_out.push_back(p.in_label());
    }
    if (map.in().labels() != want_in || map.out().labels() != want_out)
      throw ProcessError("from_map: wire labels must be [A_O...] -> [A_I...] in party order");
    pm.map_ = std::move(map);
    return pm;
  }

  const std::vector<Party>& parties() const { return parties_; }

  const Party& party(const std::string& name) const {
    for (const auto& p : parties_)
      if (p.name == name) return p;
    throw ProcessError("unknown party: " + name);
  }

  int party_index(const std::string& name) const {
    for (std::size_t k = 0; k < parties_.size(); ++k)
      if (parties_[k].name == name) return static_cast<int>(k);
    throw ProcessError("unknown party: " + name);
  }

  long dim() const {
    long d = 1;
    for (const auto& p : parties_) d *= static_cast<long>(p.d_in) * p.d_out;
    return d;
  }

  double expected_trace() const {
    double t = 1.0;
    for (const auto& p : parties_) t *= p.d_out;
    return t;
  }

  ProductSpace w_space() const {
    std::vector<Factor> fs;
    for (const auto& p : parties_) {
      fs.push_back(Factor{p.in_label(), p.d_in, false});
      fs.push_back(Factor{p.out_label(), p.d_out, false});
    }
    return ProductSpace(std::move(fs));
  }

  ProductSpace map_in_space() const {
    std::vector<Factor> fs;
    for (const auto& p : parties_) fs.push_back(Factor{p.out_label(), p.d_out, false});
    return ProductSpace(std::move(fs));
  }

  ProductSpace map_out_space() const {
    std::vector<Factor> fs;
    for (const auto& p : parties_) fs.push_back(Factor{p.in_label(), p.d_in, false});
    return ProductSpace(std::move(fs));
  }

  bool has_dense_w() const { return w_.has_value(); }

  // the interleave <-> block permutation: W factor 2k is A_I^k (map output
  // N+k), factor 2k+1 is A_O^k (map input k)
  const cxmat& w() const {
    if (!w_) {
      const int n = static_cast<int>(parties_.size());
      std::vector<int> cdims;
      for (const auto& p : parties_) cdims.push_back(p.d_out);
      for (const auto& p : parties_) cdims.push_back(p.d_in);
      std::vector<int> perm;
      for (int k = 0; k < n; ++k) {
        perm.push_back(n + k);
        perm.push_back(k);
      }
      w_ = permute_factors(map_->choi(), cdims, perm);
    }
    return *w_;
  }

  const QuantumChannel& map() const {
    if (!map_) {
      const int n = static_cast<int>(parties_.size());
      std::vector<int> wdims;
      for (const auto& p : parties_) {
        wdims.push_back(p.d_in);
        wdims.push_back(p.d_out);
      }
      // inverse of the interleave: choi position k (A_O^k) <- W position 2k+1,
      // choi position N+k (A_I^k) <- W position 2k
      std::vector<int> perm;
      for (int k = 0; k < n; ++k) perm.push_back(2 * k + 1);
      for (int k = 0; k < n; ++k) perm.push_back(2 * k);
      cxmat choi = permute_factors(*w_, wdims, perm);
      map_ = QuantumChannel::from_choi(map_in_space(), map_out_space(), std::move(choi));
    }
    return *map_;
  }

 private:
  std::vector<Party> parties_;
  mutable std::optional<cxmat> w_;
  mutable std::optional<QuantumChannel> map_;
};

// The process map (inputs = everyone's A_O, outputs = everyone's A_I), with a
// trace-preservation diagnostic.
struct ProcessMapResult {
  QuantumChannel map;
  double tp_deficit = 0.0;
};

inline ProcessMapResult process_to_map(const ProcessMatrix& pm) {
  ProcessMapResult r{pm.map(), pm.map().tp_deficit()};
  return r;
}

// Paper-convention Choi of a local CP map (transpose of the internal one).
inline cxmat local_choi(const QuantumChannel& ch) { return ch.choi().transpose(); }

// ---------------------------------------------------------------------------
// Extended local maps and instruments
// ---------------------------------------------------------------------------

// One CPTP map from (quantum input (x) classical setting) to (quantum output
// (x) classical outcome); the setting is dephased in the computational basis.
struct ExtendedLocalMap {
  Party party;
  QuantumChannel channel;  // in [A_I, A_s], out [A_O, A_o]
};

// per-setting instrument: outcome-indexed Kraus sets
struct Instrument {
  Party party;
  int setting = 0;
  std::vector<std::vector<cxmat>> cp_kraus;  // [outcome][kraus]
};

// Build the extended map from an instrument family
// family[setting][outcome] = Kraus set of the CP map for that branch.
inline ExtendedLocalMap make_extended_local_map(
    const Party& party, const std::vector<std::vector<std::vector<cxmat>>>& family) {
  if (static_cast<int>(family.size()) != party.d_setting)
    throw ProcessError("extended map: need one instrument per setting");
  ProductSpace in = ProductSpace::single(party.in_label(), party.d_in)
                        .concat(ProductSpace::single(party.setting_label(), party.d_setting));
  ProductSpace out = ProductSpace::single(party.out_label(), party.d_out)
                         .concat(ProductSpace::single(party.outcome_label(), party.d_outcome));
  std::vector<cxmat> ks;
  for (int a = 0; a < party.d_setting; ++a) {
    const auto& instrument = family[static_cast<std::size_t>(a)];
    if (static_cast<int>(instrument.size()) > party.d_outcome)
      throw ProcessError("extended map: more outcomes than the outcome dimension");
    cxmat tp_check = cxmat::Zero(party.d_in, party.d_in);
    for (int x = 0; x < static_cast<int>(instrument.size()); ++x) {
      for (const auto& k : instrument[static_cast<std::size_t>(x)]) {
        if (k.rows() != party.d_out || k.cols() != party.d_in)
          throw ProcessError("extended map: Kraus shape mismatch");
        tp_check += k.adjoint() * k;
        // K_total = (k (x) |x><x-part|) . (<a| on the setting)
        cxmat big = cxmat::Zero(static_cast<long>(party.d_out) * party.d_outcome,
                                static_cast<long>(party.d_in) * party.d_setting);
        for (int o = 0; o < party.d_out; ++o)
          for (int i = 0; i < party.d_in; ++i)
            big(static_cast<long>(o) * party.d_outcome + x,
                static_cast<long>(i) * party.d_setting + a) = k(o, i);
        ks.push_back(std::move(big));
      }
    }
    if ((tp_check - cxmat::Identity(party.d_in, party.d_in)).norm() > 1e-8)
      throw ProcessError("extended map: instrument for setting " + std::to_string(a) +
                         " is not trace preserving");
  }
  return ExtendedLocalMap{party, QuantumChannel::from_kraus(in, out, std::move(ks),
                                                            party.name + ".ext")};
}

// M_{x|a}(rho) = tr_{A_o}[ (|x><x| (x) I) M(|a><a| (x) rho) ]
inline Instrument instrument_from_extended(const ExtendedLocalMap& m, int setting) {
  const auto& p = m.party;
  if (setting < 0 || setting >= p.d_setting) throw ProcessError("setting out of range");
  Instrument inst;
  inst.party = p;
  inst.setting = setting;
  inst.cp_kraus.assign(static_cast<std::size_t>(p.d_outcome), {});
  for (const auto& big : m.channel.kraus()) {
    for (int x = 0; x < p.d_outcome; ++x) {
      cxmat k(p.d_out, p.d_in);
      for (int o = 0; o < p.d_out; ++o)
        for (int i = 0; i < p.d_in; ++i)
          k(o, i) = big(static_cast<long>(o) * p.d_outcome + x,
                        static_cast<long>(i) * p.d_setting + setting);
      if (k.norm() > 1e-14) inst.cp_kraus[static_cast<std::size_t>(x)].push_back(std::move(k));
    }
  }
  return inst;
}

// internal Choi of one CP branch
inline cxmat branch_choi(const Instrument& inst, int outcome) {
  const auto& p = inst.party;
  auto tmp = QuantumChannel::from_kraus(ProductSpace::single(p.in_label(), p.d_in),
                                        ProductSpace::single(p.out_label(), p.d_out),
                                        inst.cp_kraus.at(static_cast<std::size_t>(outcome)));
  return tmp.choi();
}

// ---------------------------------------------------------------------------
// Complete and partial composition
// ---------------------------------------------------------------------------

namespace detail {

inline QuantumChannel plug_party(const QuantumChannel& net, const Party& p,
                                 const QuantumChannel& local) {
  return link(net, local, {{p.in_label(), p.in_label()}}, {{p.out_label(), p.out_label()}});
}

}  // namespace detail

// Composition of the process map with a subset of the parties' extended
// maps: wires A_I^k into the local map and A_O^k back into the process map.
// The all-parties case is the complete composition whose classical channel
// from settings to outcomes encodes the joint probabilities.
inline QuantumChannel partial_compose(const ProcessMatrix& pm,
                                      const std::vector<ExtendedLocalMap>& maps) {
  const long big = pm.dim();
  bool kraus_route = big > kMaxDenseChoiDim;
  if (!kraus_route) {
    QuantumChannel net = pm.map();
    for (const auto& m : maps) net = detail::plug_party(net, m.party, m.channel);
    return net;
  }
  std::vector<QuantumChannel> parts{pm.map()};
  std::vector<std::pair<std::string, std::string>> wires;
  for (const auto& m : maps) {
    parts.push_back(m.channel);
    wires.emplace_back(m.party.in_label(), m.party.in_label());
    wires.emplace_back(m.party.out_label(), m.party.out_label());
  }
  return compose_network(parts, wires);
}

// Partial composition with plain (setting-free) local channels, packaged as
// the process over the remaining parties.  Each supplied channel must run
// from [A_I^k] to [A_O^k].
inline ProcessMatrix partial_compose_fixed(
    const ProcessMatrix& pm, const std::vector<std::pair<std::string, QuantumChannel>>& fixed) {
  QuantumChannel net = pm.map();
  std::vector<Party> rest;
  for (const auto& p : pm.parties()) {
    const QuantumChannel* ch = nullptr;
    for (const auto& [name, c] : fixed)
      if (name == p.name) ch = &c;
    if (ch) {
      if (ch->in().labels() != std::vector<std::string>{p.in_label()} ||
          ch->out().labels() != std::vector<std::string>{p.out_label()})
        throw ProcessError("partial_compose_fixed: channel for " + p.name +
                           " must run from [" + p.in_label() + "] to [" + p.out_label() + "]");
      net = detail::plug_party(net, p, *ch);
    } else {
      rest.push_back(p);
    }
  }
  return ProcessMatrix::from_map(std::move(rest), std::move(net));
}

inline QuantumChannel complete_compose(const ProcessMatrix& pm,
                                       const std::vector<ExtendedLocalMap>& maps) {
  if (maps.size() != pm.parties().size())
    throw ProcessError("complete_compose: need one extended map per party");
  for (std::size_t k = 0; k < maps.size(); ++k)
    if (maps[k].party.name != pm.parties()[k].name)
      throw ProcessError("complete_compose: maps must be given in party order");
  return partial_compose(pm, maps);
}

// ---------------------------------------------------------------------------
// Born probabilities, both routes
// ---------------------------------------------------------------------------

struct BornResult {
  std::vector<int> outcome_dims;
  std::vector<double> p_trace;        // Born rule via tr[(x)M W]
  std::vector<double> p_composition;  // via the composed settings->outcomes channel
  double denominator = 1.0;           // post-selection normalization of the composition route
  double max_discrepancy = 0.0;
  bool valid = true;
  std::string diagnostic;

  double probability(const std::vector<int>& outcomes) const {
    return p_trace[static_cast<std::size_t>(flatten(outcomes, outcome_dims))];
  }
};

inline BornResult born_probabilities(const ProcessMatrix& pm,
                                     const std::vector<ExtendedLocalMap>& maps,
                                     const std::vector<int>& settings,
                                     double tol = kDefaultTol) {
  const auto& parties = pm.parties();
  if (maps.size() != parties.size() || settings.size() != parties.size())
    throw ProcessError("born_probabilities: need a map and a setting per party");

  BornResult res;
  for (const auto& p : parties) res.outcome_dims.push_back(p.d_outcome);
  long n_out = 1;
  for (int d : res.outcome_dims) n_out *= d;

  // route 1: trace formula with paper-convention instrument Chois
  std::vector<Instrument> insts;
  for (std::size_t k = 0; k < maps.size(); ++k)
    insts.push_back(instrument_from_extended(maps[k], settings[k]));
  res.p_trace.resize(static_cast<std::size_t>(n_out));
  {
    std::vector<int> xs;
    for (long x = 0; x < n_out; ++x) {
      unflatten(x, res.outcome_dims, xs);
      cxmat op = cxmat::Identity(1, 1);
      for (std::size_t k = 0; k < insts.size(); ++k) {
        Instrument& inst = insts[k];
        cxmat m = branch_choi(inst, xs[k]).transpose();  // paper convention
        op = kron(op, m);
      }
      res.p_trace[static_cast<std::size_t>(x)] = std::real((op * pm.w()).trace());
    }
  }

  // route 2: complete composition and post-selection
  QuantumChannel net = complete_compose(pm, maps);
  cxmat setting_state = cxmat::Identity(1, 1);
  for (std::size_t k = 0; k < parties.size(); ++k)
    setting_state = kron(setting_state, matrix_unit(settings[k], settings[k],
                                                    parties[k].d_setting));
  cxmat rho = net.apply(setting_state);
  res.p_composition.resize(static_cast<std::size_t>(n_out));
  double total = 0.0;
  for (long x = 0; x < n_out; ++x) {
    double v = std::real(rho(x, x));
    res.p_composition[static_cast<std::size_t>(x)] = v;
    total += v;
  }
  res.denominator = total;
  if (total > 1e-12) {
    for (auto& v : res.p_composition) v /= total;
  } else {
    res.valid = false;
    res.diagnostic = "post-selection denominator vanished";
  }

  for (long x = 0; x < n_out; ++x) {
    res.max_discrepancy =
        std::max(res.max_discrepancy, std::abs(res.p_trace[static_cast<std::size_t>(x)] -
                                               res.p_composition[static_cast<std::size_t>(x)]));
    if (res.p_trace[static_cast<std::size_t>(x)] < -tol * 100) {
      res.valid = false;
      res.diagnostic = "negative probability: the process operator is not valid";
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reduced processes
// ---------------------------------------------------------------------------

// tr over the fixed parties of ((x)_k M_k) W, with M_k in the paper's local
// convention; identity on the free parties.
inline cxmat reduced_process(const ProcessMatrix& pm,
                             const std::vector<std::pair<std::string, cxmat>>& fixed) {
  cxmat op = cxmat::Identity(1, 1);
  std::vector<std::string> traced;
  for (const auto& p : pm.parties()) {
    const cxmat* m = nullptr;
    for (const auto& [name, choi] : fixed)
      if (name == p.name) m = &choi;
    if (m) {
      if (m->rows() != static_cast<long>(p.d_in) * p.d_out)
        throw ProcessError("reduced_process: Choi on the wrong spaces for " + p.name);
      op = kron(op, *m);
      traced.push_back(p.in_label());
      traced.push_back(p.out_label());
    } else {
      op = kron(op, cxmat::Identity(static_cast<long>(p.d_in) * p.d_out,
                                    static_cast<long>(p.d_in) * p.d_out));
    }
  }
  ProductSpace sp = pm.w_space();
  std::vector<std::string> keep;
  for (const auto& f : sp.factors())
    if (std::find(traced.begin(), traced.end(), f.label) == traced.end()) keep.push_back(f.label);
  return partial_trace(op * pm.w(), sp, keep);
}

// ---------------------------------------------------------------------------
// Device-independent signalling
// ---------------------------------------------------------------------------

struct JointDistribution {
  std::vector<int> setting_dims, outcome_dims;
  std::vector<double> p;  // flat [settings composite][outcomes composite]

  double& at(const std::vector<int>& a, const std::vector<int>& x) {
    long os = 1;
    for (int d : outcome_dims) os *= d;
    return p[static_cast<std::size_t>(flatten(a, setting_dims) * os + flatten(x, outcome_dims))];
  }
  double at(const std::vector<int>& a, const std::vector<int>& x) const {
    long os = 1;
    for (int d : outcome_dims) os *= d;
    return p[static_cast<std::size_t>(flatten(a, setting_dims) * os + flatten(x, outcome_dims))];
  }
};

// Tabulate P(x|a) for all settings via the complete composition.
inline JointDistribution tabulate_distribution(const ProcessMatrix& pm,
                                               const std::vector<ExtendedLocalMap>& maps) {
  JointDistribution d;
  for (const auto& p : pm.parties()) {
    d.setting_dims.push_back(p.d_setting);
    d.outcome_dims.push_back(p.d_outcome);
  }
  long ns = 1, no = 1;
  for (int v : d.setting_dims) ns *= v;
  for (int v : d.outcome_dims) no *= v;
  d.p.resize(static_cast<std::size_t>(ns * no));
  QuantumChannel net = complete_compose(pm, maps);
  std::vector<int> a;
  for (long s = 0; s < ns; ++s) {
    unflatten(s, d.setting_dims, a);
    cxmat setting_state = cxmat::Identity(1, 1);
    for (std::size_t k = 0; k < a.size(); ++k)
      setting_state = kron(setting_state, matrix_unit(a[k], a[k], d.setting_dims[k]));
    cxmat rho = net.apply(setting_state);
    double total = std::real(rho.trace());
    for (long x = 0; x < no; ++x)
      d.p[static_cast<std::size_t>(s * no + x)] = std::real(rho(x, x)) / total;
  }
  return d;
}

// True iff the marginal P(x_S | a) varies with a_i for some fixing of the
// other settings.
inline bool device_independent_signals(const JointDistribution& dist, int i,
                                       const std::vector<int>& s_parties,
                                       double tol = 1e-9) {
  const auto& sd = dist.setting_dims;
  const auto& od = dist.outcome_dims;
  long ns = 1, no = 1;
  for (int v : sd) ns *= v;
  for (int v : od) no *= v;
  // normalization check
  std::vector<int> a, x;
  for (long s = 0; s < ns; ++s) {
    unflatten(s, sd, a);
    double t = 0;
    for (long xx = 0; xx < no; ++xx) {
      unflatten(xx, od, x);
      t += dist.at(a, x);
    }
    if (std::abs(t - 1.0) > 1e-6) throw ProcessError("device_independent_signals: unnormalized");
  }

  // marginal outcome dims over S
  std::vector<int> sod;
  for (int k : s_parties) sod.push_back(od[static_cast<std::size_t>(k)]);
  long nso = 1;
  for (int v : sod) nso *= v;

  auto marginal = [&](const std::vector<int>& setting) {
    std::vector<double> m(static_cast<std::size_t>(nso), 0.0);
    std::vector<int> xs;
    for (long xx = 0; xx < no; ++xx) {
      unflatten(xx, od, xs);
      std::vector<int> xsub;
      for (int k : s_parties) xsub.push_back(xs[static_cast<std::size_t>(k)]);
      m[static_cast<std::size_t>(flatten(xsub, sod))] += dist.at(setting, xs);
    }
    return m;
  };

  for (long s = 0; s < ns; ++s) {
    unflatten(s, sd, a);
    if (a[static_cast<std::size_t>(i)] != 0) continue;
    auto base = marginal(a);
    for (int ai = 1; ai < sd[static_cast<std::size_t>(i)]; ++ai) {
      auto alt = a;
      alt[static_cast<std::size_t>(i)] = ai;
      auto m = marginal(alt);
      for (long v = 0; v < nso; ++v)
        if (std::abs(m[static_cast<std::size_t>(v)] - base[static_cast<std::size_t>(v)]) >
            tol * 100)
          return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Universal quantification over local operations
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<cxmat> hermitian_basis(int d) {
  std::vector<cxmat> basis;
  for (int i = 0; i < d; ++i) basis.push_back(matrix_unit(i, i, d));
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      cxmat s = matrix_unit(i, j, d) + matrix_unit(j, i, d);
      cxmat t = complexd(0, 1) * (matrix_unit(i, j, d) - matrix_unit(j, i, d));
      basis.push_back(s);
      basis.push_back(t);
    }
  return basis;
}

// Affine basis of { X Hermitian on in (x) out : tr_out X = I_in }, the affine
// hull of Chois of trace-preserving maps in the internal convention.  All
// universally quantified statements about local CPTP maps are linear in the
// Choi, so checking them on this basis decides them exactly, including for
// strategies entangled across several parties (products of spanning sets span
// the joint space).
inline std::vector<cxmat> tp_affine_basis(int d_in, int d_out) {
  std::vector<cxmat> basis;
  cxmat base = cxmat::Identity(d_in * d_out, d_in * d_out) / static_cast<double>(d_out);
  basis.push_back(base);
  auto hin = hermitian_basis(d_in);
  auto hout = hermitian_basis(d_out);
  for (const auto& hi : hin)
    for (std::size_t g = 0; g < hout.size(); ++g) {
      cxmat ho = hout[g];
      if (std::abs(ho.trace()) > 1e-12) {
        // make the out-factor traceless so tr_out stays fixed
        ho -= (ho.trace() / static_cast<double>(d_out)) *
              cxmat::Identity(d_out, d_out);
        if (ho.norm() < 1e-12) continue;
      }
      basis.push_back(base + kron(hi, ho));
    }
  return basis;
}

}  // namespace detail

struct ProcessSignallingOptions {
  int max_target_subset = 3;
  double tol = kDefaultTol;
  // With > 4 parties only processes whose map is a single isometry are
  // handled (edges read off the map alone); others are refused.
  int exact_party_bound = 4;
};

// Does A_O^i signal to { A_I^k : k in targets } for *some* choice of the
// remaining parties' local operations?  Decided exactly by sweeping the
// affine bases of the spectators' Choi hulls.
inline bool process_signals(const ProcessMatrix& pm, int source,
                            const std::vector<int>& targets, double tol = kDefaultTol) {
  const auto& parties = pm.parties();
  const Party& src = parties[static_cast<std::size_t>(source)];
  if (src.d_out < 2) return false;
  std::vector<std::string> target_labels;
  long tdim = 1;
  for (int t : targets) {
    target_labels.push_back(parties[static_cast<std::size_t>(t)].in_label());
    tdim *= parties[static_cast<std::size_t>(t)].d_in;
  }
  if (tdim < 2) return false;

  std::vector<int> spectators;
  for (int k = 0; k < static_cast<int>(parties.size()); ++k)
    if (k != source && std::find(targets.begin(), targets.end(), k) == targets.end())
      spectators.push_back(k);

  std::vector<std::vector<cxmat>> bases;
  for (int s : spectators)
    bases.push_back(detail::tp_affine_basis(parties[static_cast<std::size_t>(s)].d_in,
                                            parties[static_cast<std::size_t>(s)].d_out));

  std::vector<std::size_t> idx(bases.size(), 0);
  while (true) {
    QuantumChannel net = pm.map();
    for (std::size_t k = 0; k < spectators.size(); ++k) {
      const Party& sp = parties[static_cast<std::size_t>(spectators[k])];
      auto pseudo = QuantumChannel::from_choi(ProductSpace::single(sp.in_label(), sp.d_in),
                                              ProductSpace::single(sp.out_label(), sp.d_out),
                                              bases[k][idx[k]]);
      net = detail::plug_party(net, sp, pseudo);
    }
    if (signals(net, {src.out_label()}, target_labels, tol)) return true;

    // advance the multi-index
    std::size_t pos = 0;
    while (pos < idx.size()) {
      if (++idx[pos] < bases[pos].size()) break;
      idx[pos] = 0;
      ++pos;
    }
    if (pos == idx.size()) break;
    if (idx.empty()) break;
  }
  return false;
}

// The network signalling structure over {A_I^k, A_O^k}: intra-party edges
// A_I^k -> A_O^k (extended maps realize them whenever both wires are
// nontrivial) plus inter-party edges decided via partial compositions with
// universally quantified spectators.
inline SignallingStructure process_signalling_structure(
    const ProcessMatrix& pm, const ProcessSignallingOptions& opts = {}) {
  const auto& parties = pm.parties();
  const int n = static_cast<int>(parties.size());

  SignallingStructure st;
  for (const auto& p : parties) {
    st.input_side.push_back(p.in_label());
    st.input_side.push_back(p.out_label());
  }
  st.output_side = st.input_side;

  for (const auto& p : parties)
    if (p.d_in >= 2 && p.d_out >= 2) st.add_edge({p.in_label()}, {p.out_label()});

  const bool big = n > opts.exact_party_bound;
  if (big) {
    const auto& map = pm.map();
    const bool isometric =
        map.has_kraus() && map.kraus().size() == 1 &&
        (map.kraus()[0].adjoint() * map.kraus()[0] -
         cxmat::Identity(map.in().dim(), map.in().dim()))
                .norm() < 1e-9;
    if (!isometric)
      throw ProcessError("process_signalling_structure: party bound exceeded for a "
                         "non-isometric process");
    for (int i = 0; i < n; ++i) {
      if (parties[static_cast<std::size_t>(i)].d_out < 2) continue;
      for (int j = 0; j < n; ++j) {
        if (j == i || parties[static_cast<std::size_t>(j)].d_in < 2) continue;
        if (signals(map, {parties[static_cast<std::size_t>(i)].out_label()},
                    {parties[static_cast<std::size_t>(j)].in_label()}, opts.tol))
          st.add_edge({parties[static_cast<std::size_t>(i)].out_label()},
                      {parties[static_cast<std::size_t>(j)].in_label()});
      }
    }
    return st;
  }

  for (int i = 0; i < n; ++i) {
    if (parties[static_cast<std::size_t>(i)].d_out < 2) continue;
    std::vector<int> others;
    for (int j = 0; j < n; ++j)
      if (j != i && parties[static_cast<std::size_t>(j)].d_in >= 2) others.push_back(j);
    const int m = static_cast<int>(others.size());
    for (unsigned mask = 1; mask < (1u << m); ++mask) {
      if (__builtin_popcount(mask) > opts.max_target_subset) continue;
      std::vector<int> tg;
      for (int b = 0; b < m; ++b)
        if (mask & (1u << b)) tg.push_back(others[static_cast<std::size_t>(b)]);
      if (process_signals(pm, i, tg, opts.tol)) {
        std::vector<std::string> labels;
        for (int t : tg) labels.push_back(parties[static_cast<std::size_t>(t)].in_label());
        st.add_edge({parties[static_cast<std::size_t>(i)].out_label()}, labels);
      }
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Fixed-order detection
// ---------------------------------------------------------------------------

struct FixedOrderWitness {
  std::vector<std::string> systems;  // A_I^k and A_O^k in party order
  std::set<std::pair<std::string, std::string>> order;  // strict partial order

  bool precedes(const std::string& a, const std::string& b) const {
    return order.count({a, b}) > 0;
  }
};

// Searches for a partial order K over the in/out systems with A_I^k < A_O^k
// for every party and no-signalling whenever A_O^i is not below A_I^S.  The
// witness is assembled from the transitive closure of the verified
// signalling structure: a cycle there rules any K out, and closure of an
// acyclic structure satisfies both defining conditions by construction.
inline std::optional<FixedOrderWitness> is_fixed_order(
    const ProcessMatrix& pm, const ProcessSignallingOptions& opts = {}) {
  const auto& parties = pm.parties();
  SignallingStructure st = process_signalling_structure(pm, opts);

  DiGraph g;
  for (const auto& p : parties) {
    g.add_node(p.in_label());
    g.add_node(p.out_label());
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> joint_constraints;
  for (const auto& e : st.edges) {
    if (e.target.size() == 1) {
      g.add_edge(e.source.front(), e.target.front());
    } else {
      // a joint edge only constrains the order when no member edge exists
      joint_constraints.emplace_back(e.source.front(), e.target);
    }
  }
  for (const auto& p : parties) {
    // condition 1 always orders the party's input before its output
    if (!g.has_edge(p.in_label(), p.out_label())) g.add_edge(p.in_label(), p.out_label());
  }
  if (!g.is_acyclic()) return std::nullopt;

  // materialize joint constraints that are not already implied
  for (const auto& [src, tgts] : joint_constraints) {
    auto reach = g.reachability();
    bool satisfied = false;
    for (const auto& t : tgts)
      if (reach[static_cast<std::size_t>(g.index(src))][static_cast<std::size_t>(g.index(t))])
        satisfied = true;
    if (satisfied) continue;
    bool placed = false;
    for (const auto& t : tgts) {
      // placing src -> t is safe unless t already reaches src
      if (!reach[static_cast<std::size_t>(g.index(t))][static_cast<std::size_t>(g.index(src))]) {
        g.add_edge(src, t);
        placed = true;
        break;
      }
    }
    if (!placed || !g.is_acyclic()) return std::nullopt;
  }

  FixedOrderWitness w;
  for (const auto& p : parties) {
    w.systems.push_back(p.in_label());
    w.systems.push_back(p.out_label());
  }
  auto reach = g.reachability();
  for (const auto& a : g.nodes())
    for (const auto& b : g.nodes())
      if (reach[static_cast<std::size_t>(g.index(a))][static_cast<std::size_t>(g.index(b))])
        w.order.insert({a, b});
  return w;
}

// ---------------------------------------------------------------------------
// Entangled ancillas for validity sweeps
// ---------------------------------------------------------------------------

// Extends the process so that parties j and k each receive one half of a
// maximally entangled ancilla pair alongside their quantum input.
inline ProcessMatrix with_entangled_ancillas(const ProcessMatrix& pm, int j, int k,
                                             int d_anc = 2) {
  const auto& parties = pm.parties();
  std::vector<Party> np = parties;
  np[static_cast<std::size_t>(j)].d_in *= d_anc;
  np[static_cast<std::size_t>(k)].d_in *= d_anc;

  // W' = W (x) phi+ with the ancilla halves positioned inside A_I^j, A_I^k
  cxvec phi = cxvec::Zero(static_cast<long>(d_anc) * d_anc);
  for (int v = 0; v < d_anc; ++v) phi(static_cast<long>(v) * d_anc + v) = 1.0;
  phi /= phi.norm();
  cxmat phim = phi * phi.adjoint();

  cxmat big = kron(pm.w(), phim);
  std::vector<int> dims;
  for (const auto& p : parties) {
    dims.push_back(p.d_in);
    dims.push_back(p.d_out);
  }
  dims.push_back(d_anc);
  dims.push_back(d_anc);
  const int n2 = static_cast<int>(parties.size()) * 2;
  std::vector<int> perm;
  for (int pos = 0; pos < n2; ++pos) {
    perm.push_back(pos);
    if (pos == 2 * j) perm.push_back(n2);      // anc_j right after A_I^j
    if (pos == 2 * k) perm.push_back(n2 + 1);  // anc_k right after A_I^k
  }
  cxmat reordered = permute_factors(big, dims, perm);
  return ProcessMatrix::from_w(np, std::move(reordered));
}

// ---------------------------------------------------------------------------
// Validity
// ---------------------------------------------------------------------------

struct ProcessValidityReport {
  bool hermitian = false;
  bool psd = false;
  bool trace_ok = false;
  bool born_normalized = false;
  double trace = 0.0;
  double expected_trace = 0.0;
  double tp_deficit = 0.0;
  double max_born_deviation = 0.0;
  std::vector<std::string> failures;

  // the paper states necessary conditions, not a full characterization, so a
  // clean report reads "consistent" rather than "proven valid"
  bool consistent() const { return failures.empty(); }
};

namespace detail {

// spanning preparations: computational plus pairwise real/imag superpositions
inline std::vector<cxvec> spanning_states(int d) {
  std::vector<cxvec> states;
  for (int i = 0; i < d; ++i) {
    cxvec v = cxvec::Zero(d);
    v(i) = 1.0;
    states.push_back(v);
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      cxvec v = cxvec::Zero(d), w = cxvec::Zero(d);
      v(i) = v(j) = 1.0 / std::sqrt(2.0);
      w(i) = 1.0 / std::sqrt(2.0);
      w(j) = complexd(0.0, 1.0 / std::sqrt(2.0));
      states.push_back(v);
      states.push_back(w);
    }
  return states;
}

// spanning projective bases: computational plus pairwise-rotated ones
inline std::vector<std::vector<cxvec>> spanning_bases(int d) {
  std::vector<std::vector<cxvec>> bases;
  std::vector<cxvec> comp;
  for (int i = 0; i < d; ++i) {
    cxvec v = cxvec::Zero(d);
    v(i) = 1.0;
    comp.push_back(v);
  }
  bases.push_back(comp);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      for (int phase = 0; phase < 2; ++phase) {
        auto basis = comp;
        complexd ph = phase == 0 ? complexd(1, 0) : complexd(0, 1);
        basis[static_cast<std::size_t>(i)] = (comp[static_cast<std::size_t>(i)] +
                                              ph * comp[static_cast<std::size_t>(j)]) /
                                             std::sqrt(2.0);
        basis[static_cast<std::size_t>(j)] = (comp[static_cast<std::size_t>(i)] -
                                              ph * comp[static_cast<std::size_t>(j)]) /
                                             std::sqrt(2.0);
        bases.push_back(basis);
      }
  return bases;
}

// measure-and-reprepare instrument: project in the given basis, prepare the
// given state, report the outcome
inline std::vector<std::vector<cxmat>> measure_prepare_instrument(const std::vector<cxvec>& basis,
                                                                  const cxvec& prep,
                                                                  int d_outcome) {
  std::vector<std::vector<cxmat>> inst(static_cast<std::size_t>(d_outcome));
  for (std::size_t x = 0; x < basis.size(); ++x) {
    cxmat k = prep * basis[x].adjoint();
    inst[x % static_cast<std::size_t>(d_outcome)].push_back(k);
  }
  return inst;
}

}  // namespace detail

// Random instrument on (A_I (x) ancilla) -> A_O with `n_out` outcomes.
inline std::vector<std::vector<cxmat>> random_instrument(std::mt19937_64& rng, int d_in, int d_out,
                                                         int n_out) {
  auto ks = random_kraus_set(rng, d_in, d_out, std::max(1, n_out));
  std::vector<std::vector<cxmat>> inst;
  for (auto& k : ks) inst.push_back({std::move(k)});
  while (static_cast<int>(inst.size()) < n_out) inst.push_back({});
  inst.resize(static_cast<std::size_t>(n_out));
  return inst;
}

// Checks Hermiticity, positivity, the trace rule tr W = prod d_out, and Born
// normalization over a spanning family of product instruments plus randomized
// instruments with entangled ancillas shared between party pairs.
inline ProcessValidityReport validate_process(const ProcessMatrix& pm, int n_random = 64,
                                              unsigned seed = 1234, double tol = 1e-7) {
  ProcessValidityReport rep;
  rep.expected_trace = pm.expected_trace();
  const bool big = pm.dim() > kMaxDenseChoiDim;

  if (!big) {
    const cxmat& w = pm.w();
    rep.hermitian = is_hermitian(w, 1e-8);
    rep.psd = rep.hermitian && is_psd(w, tol * std::max(1.0, w.norm()));
    rep.trace = std::real(w.trace());
  } else {
    // Kraus-backed: W = sum_K v v^dag is Hermitian PSD by construction
    rep.hermitian = true;
    rep.psd = true;
    double t = 0;
    for (const auto& k : pm.map().kraus()) t += k.squaredNorm();
    rep.trace = t;
  }
  rep.trace_ok = std::abs(rep.trace - rep.expected_trace) <= tol * 100 * rep.expected_trace;
  rep.tp_deficit = pm.map().tp_deficit();
  if (!rep.hermitian) rep.failures.push_back("not Hermitian");
  if (!rep.psd) rep.failures.push_back("not positive semidefinite");
  if (!rep.trace_ok)
    rep.failures.push_back("trace " + std::to_string(rep.trace) + " != " +
                           std::to_string(rep.expected_trace));
  if (rep.tp_deficit > tol * 100)
    rep.failures.push_back("process map is not trace preserving");

  // Born normalization sweeps
  std::mt19937_64 rng(seed);
  auto check_normalization = [&](const ProcessMatrix& target,
                                 const std::vector<ExtendedLocalMap>& maps) {
    std::vector<int> settings(target.parties().size(), 0);
    auto born = born_probabilities(target, maps, settings, tol);
    double total = 0;
    for (double v : born.p_trace) total += v;
    rep.max_born_deviation = std::max(rep.max_born_deviation, std::abs(total - 1.0));
    rep.max_born_deviation = std::max(rep.max_born_deviation, std::abs(born.denominator - 1.0));
  };

  auto random_maps_for = [&](const ProcessMatrix& target, int n_out) {
    std::vector<ExtendedLocalMap> maps;
    for (const auto& p : target.parties()) {
      Party q = p;
      q.d_setting = 1;
      q.d_outcome = n_out;
      maps.push_back(make_extended_local_map(q, {random_instrument(rng, p.d_in, p.d_out, n_out)}));
    }
    return maps;
  };

  if (!big) {
    // spanning product family: each party measures a spanning basis and
    // reprepares a spanning state (several deterministic passes)
    for (int pass = 0; pass < 3; ++pass) {
      std::vector<ExtendedLocalMap> maps;
      for (const auto& p : pm.parties()) {
        Party q = p;
        q.d_setting = 1;
        q.d_outcome = std::max(1, p.d_in);
        auto bases = detail::spanning_bases(p.d_in);
        auto states = detail::spanning_states(p.d_out);
        const auto& basis = bases[static_cast<std::size_t>(pass) % bases.size()];
        const auto& prep = states[static_cast<std::size_t>(pass) % states.size()];
        maps.push_back(make_extended_local_map(
            q, {detail::measure_prepare_instrument(basis, prep, q.d_outcome)}));
      }
      check_normalization(pm, maps);
    }
    // randomized instruments
    for (int r = 0; r < n_random; ++r) check_normalization(pm, random_maps_for(pm, 2));
    // randomized instruments acting on halves of shared entangled ancillas
    const int n = static_cast<int>(pm.parties().size());
    if (n >= 2 && pm.dim() * 4 <= kMaxDenseChoiDim / 4) {
      for (int r = 0; r < std::max(4, n_random / 8); ++r) {
        int j = r % n;
        int k = (r + 1) % n;
        ProcessMatrix ext = with_entangled_ancillas(pm, j, k, 2);
        check_normalization(ext, random_maps_for(ext, 2));
      }
    }
  } else {
    for (int r = 0; r < std::min(n_random, 8); ++r)
      check_normalization(pm, random_maps_for(pm, 1));
  }
  if (rep.max_born_deviation > tol * 100)
    rep.failures.push_back("Born probabilities are not normalized (deviation " +
                           std::to_string(rep.max_born_deviation) + ")");
  rep.born_normalized = rep.max_born_deviation <= tol * 100;
  return rep;
}

// ---------------------------------------------------------------------------
// Theorem-style equivalence of the two signalling notions
// ---------------------------------------------------------------------------

// Device-dependent: does A_O^i signal to {A_I^k}_{k in S} in the partial
// composition with the complement's extended maps?  Device-independent: do
// the outcomes of S depend on the setting of i in the tabulated distribution?
// Returns true when the two verdicts agree.
struct SignallingEquivalenceResult {
  bool device_dependent = false;
  bool device_independent = false;
  bool agree() const { return device_dependent == device_independent; }
};

inline SignallingEquivalenceResult signalling_equivalence_check(
    const ProcessMatrix& pm, const std::vector<ExtendedLocalMap>& maps, int i,
    const std::vector<int>& s_parties, double tol = kDefaultTol) {
  const auto& parties = pm.parties();
  std::vector<ExtendedLocalMap> complement;
  for (int k = 0; k < static_cast<int>(parties.size()); ++k)
    if (k != i && std::find(s_parties.begin(), s_parties.end(), k) == s_parties.end())
      complement.push_back(maps[static_cast<std::size_t>(k)]);

  SignallingEquivalenceResult res;
  QuantumChannel net = partial_compose(pm, complement);
  std::vector<std::string> targets;
  for (int k : s_parties) targets.push_back(parties[static_cast<std::size_t>(k)].in_label());
  res.device_dependent = signals(net, {parties[static_cast<std::size_t>(i)].out_label()},
                                 targets, tol);
  res.device_independent = device_independent_signals(tabulate_distribution(pm, maps), i,
                                                      s_parties, tol);
  return res;
}

// ---------------------------------------------------------------------------
// Causal separability verification (bipartite)
// ---------------------------------------------------------------------------

// W = q W1 + (1-q) W2 with W1 a fixed-order process compatible with A before
// B (no B_O -> A_I signalling) and W2 the reverse.
inline bool verify_causal_separable_decomposition(const ProcessMatrix& pm, double q,
                                                  const ProcessMatrix& pm1,
                                                  const ProcessMatrix& pm2,
                                                  double tol = 1e-7) {
  if (pm.parties().size() != 2) throw ProcessError("causal separability check is bipartite");
  if (q < -tol || q > 1 + tol) return false;
  cxmat mix = q * pm1.w() + (1.0 - q) * pm2.w();
  if ((mix - pm.w()).norm() > tol * 100 * std::max(1.0, pm.w().norm())) return false;

  // compatible with `from` before `to`: a fixed-order witness exists and the
  // reverse direction carries no signalling for any local operations
  auto one_way = [&](const ProcessMatrix& w, int from, int to) {
    return is_fixed_order(w).has_value() && !process_signals(w, to, {from});
  };
  bool w1_ok = validate_process(pm1, 8).consistent() && one_way(pm1, 0, 1);
  bool w2_ok = validate_process(pm2, 8).consistent() && one_way(pm2, 1, 0);
  return w1_ok && w2_ok;
}

// ---------------------------------------------------------------------------
// Common fixtures: fixed-order pipes and the classical switch
// ---------------------------------------------------------------------------

// Bipartite fixed-order process A < B: A receives rho0, A's output runs
// through `pipe` into B's input, B's output is discarded.
inline ProcessMatrix make_pipe_process(const cxmat& rho0, const QuantumChannel& pipe,
                                       int d_b_out = 2) {
  Party a{"A", static_cast<int>(rho0.rows()), static_cast<int>(pipe.in().dim()), 1, 1};
  Party b{"B", static_cast<int>(pipe.out().dim()), d_b_out, 1, 1};
  auto prep = QuantumChannel::prepare(ProductSpace::single(a.in_label(), a.d_in), rho0);
  auto mid = QuantumChannel::from_kraus(ProductSpace::single(a.out_label(), a.d_out),
                                        ProductSpace::single(b.in_label(), b.d_in),
                                        pipe.kraus());
  auto sink = QuantumChannel::discard(ProductSpace::single(b.out_label(), b.d_out));
  auto map = compose_network({prep, mid, sink}, {});
  // network concat order: outs [A_I, B_I], ins [A_O, B_O] — already canonical
  return ProcessMatrix::from_map({a, b}, map);
}

// Three-party chain A < B < C with channels between consecutive parties.
inline ProcessMatrix make_chain_process(const cxmat& rho0, const QuantumChannel& ab,
                                        const QuantumChannel& bc, int d_c_out = 2) {
  Party a{"A", static_cast<int>(rho0.rows()), static_cast<int>(ab.in().dim()), 1, 1};
  Party b{"B", static_cast<int>(ab.out().dim()), static_cast<int>(bc.in().dim()), 1, 1};
  Party c{"C", static_cast<int>(bc.out().dim()), d_c_out, 1, 1};
  auto prep = QuantumChannel::prepare(ProductSpace::single(a.in_label(), a.d_in), rho0);
  auto e1 = QuantumChannel::from_kraus(ProductSpace::single(a.out_label(), a.d_out),
                                       ProductSpace::single(b.in_label(), b.d_in), ab.kraus());
  auto e2 = QuantumChannel::from_kraus(ProductSpace::single(b.out_label(), b.d_out),
                                       ProductSpace::single(c.in_label(), c.d_in), bc.kraus());
  auto sink = QuantumChannel::discard(ProductSpace::single(c.out_label(), c.d_out));
  auto map = compose_network({prep, e1, e2, sink}, {});
  return ProcessMatrix::from_map({a, b, c}, map);
}

}  // namespace causalflow
