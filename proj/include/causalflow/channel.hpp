#pragma once

// CPTP maps over labeled spaces and their composition: parallel, loop and
// sequential (= parallel followed by loops), vacuum extension, fine-graining
// verification.
//
// Internal Choi convention: for a map with input dimension n and output
// dimension m the Choi matrix lives on input (x) output,
//     C = sum_{ij} |i><j|  (x)  Phi(|i><j|),
// so row index = (input ket digit, output ket digit) with input major.
// Kraus operators are m x n with C = sum_K v_K v_K^dag, v_K[(i,o)] = K(o,i).
// The process-matrix framework uses two published conventions that differ by
// a transpose; both are derived from this internal one in exactly one place
// (see process.hpp).

#include "causalflow/tensor.hpp"

#include <functional>
#include <optional>
#include <utility>

namespace causalflow {

class ChannelError : public TensorError {
 public:
  explicit ChannelError(const std::string& msg) : TensorError(msg) {}
};

// Dense Choi matrices above this dimension are refused; Kraus form carries
// the large compositions (the unravelled switch runs on a 324-dim space).
inline constexpr long kMaxDenseChoiDim = 1 << 13;

namespace detail {

inline std::vector<int> inverse_perm(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) inv[static_cast<std::size_t>(p[k])] = static_cast<int>(k);
  return inv;
}

// perm[k] = old factor position at new position k; returns, for every new
// composite index, the matching old composite index.
inline std::vector<long> new_to_old_index(const std::vector<int>& old_dims,
                                          const std::vector<int>& perm) {
  std::vector<int> new_dims(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k)
    new_dims[k] = old_dims[static_cast<std::size_t>(perm[k])];
  const long total =
      std::accumulate(new_dims.begin(), new_dims.end(), 1L, std::multiplies<long>());
  std::vector<long> map(static_cast<std::size_t>(total));
  std::vector<int> digits, odig(perm.size());
  for (long i = 0; i < total; ++i) {
    unflatten(i, new_dims, digits);
    for (std::size_t k = 0; k < perm.size(); ++k)
      odig[static_cast<std::size_t>(perm[k])] = digits[k];
    map[static_cast<std::size_t>(i)] = flatten(odig, old_dims);
  }
  return map;
}

}  // namespace detail

class QuantumChannel {
 public:
  QuantumChannel() = default;

  static QuantumChannel from_kraus(ProductSpace in, ProductSpace out, std::vector<cxmat> ks,
                                   std::string name = "") {
    QuantumChannel ch;
    ch.in_ = std::move(in);
    ch.out_ = std::move(out);
    ch.name_ = std::move(name);
    for (const auto& k : ks)
      if (k.rows() != ch.out_.dim() || k.cols() != ch.in_.dim())
        throw ChannelError("from_kraus: operator shape mismatch");
    ch.kraus_ = std::move(ks);
    return ch;
  }

  static QuantumChannel from_choi(ProductSpace in, ProductSpace out, cxmat choi,
                                  std::string name = "") {
    QuantumChannel ch;
    ch.in_ = std::move(in);
    ch.out_ = std::move(out);
    ch.name_ = std::move(name);
    const long d = static_cast<long>(ch.in_.dim()) * ch.out_.dim();
    if (choi.rows() != d || choi.cols() != d) throw ChannelError("from_choi: shape mismatch");
    ch.choi_ = std::move(choi);
    return ch;
  }

  static QuantumChannel identity(const ProductSpace& in, const ProductSpace& out) {
    if (in.dim() != out.dim()) throw ChannelError("identity: dimension mismatch");
    return from_kraus(in, out, {cxmat::Identity(in.dim(), in.dim())}, "id");
  }

  static QuantumChannel unitary(const ProductSpace& in, const ProductSpace& out, const cxmat& u,
                                std::string name = "") {
    if (u.rows() != out.dim() || u.cols() != in.dim()) throw ChannelError("unitary: shape mismatch");
    return from_kraus(in, out, {u}, std::move(name));
  }

  // traces out its whole input; output side is the empty space (dimension 1)
  static QuantumChannel discard(const ProductSpace& in) {
    std::vector<cxmat> ks;
    for (int i = 0; i < in.dim(); ++i) {
      cxmat k = cxmat::Zero(1, in.dim());
      k(0, i) = 1.0;
      ks.push_back(k);
    }
    return from_kraus(in, ProductSpace(std::vector<Factor>{}), std::move(ks), "discard");
  }

  static QuantumChannel prepare(const ProductSpace& out, const cxmat& rho) {
    Eigen::SelfAdjointEigenSolver<cxmat> es((rho + rho.adjoint()) / 2.0);
    std::vector<cxmat> ks;
    for (int k = 0; k < rho.rows(); ++k) {
      double lam = es.eigenvalues()(k);
      if (lam > 1e-14) ks.push_back(std::sqrt(lam) * cxmat(es.eigenvectors().col(k)));
    }
    return from_kraus(ProductSpace(std::vector<Factor>{}), out, std::move(ks), "prepare");
  }

  static QuantumChannel prepare_pure(const ProductSpace& out, const cxvec& psi) {
    return from_kraus(ProductSpace(std::vector<Factor>{}), out, {cxmat(psi)}, "prepare");
  }

  // classical function channel: |x> -> |f(x)>, dephasing in the computational basis
  static QuantumChannel classical_function(const ProductSpace& in, const ProductSpace& out,
                                           const std::function<int(int)>& f,
                                           std::string name = "fn") {
    std::vector<cxmat> ks;
    for (int x = 0; x < in.dim(); ++x) {
      cxmat k = cxmat::Zero(out.dim(), in.dim());
      int y = f(x);
      if (y < 0 || y >= out.dim()) throw ChannelError("classical_function: range error");
      k(y, x) = 1.0;
      ks.push_back(k);
    }
    return from_kraus(in, out, std::move(ks), std::move(name));
  }

  static QuantumChannel completely_depolarizing(const ProductSpace& in, const ProductSpace& out) {
    std::vector<cxmat> ks;
    const double s = 1.0 / std::sqrt(static_cast<double>(out.dim()));
    for (int i = 0; i < in.dim(); ++i)
      for (int o = 0; o < out.dim(); ++o) {
        cxmat k = cxmat::Zero(out.dim(), in.dim());
        k(o, i) = s;
        ks.push_back(k);
      }
    return from_kraus(in, out, std::move(ks), "depolarize");
  }

  const ProductSpace& in() const { return in_; }
  const ProductSpace& out() const { return out_; }
  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  bool has_kraus() const { return kraus_.has_value(); }
  bool has_choi() const { return choi_.has_value(); }

  long choi_dim() const { return static_cast<long>(in_.dim()) * out_.dim(); }

  const cxmat& choi() const {
    if (!choi_) {
      if (choi_dim() > kMaxDenseChoiDim)
        throw ChannelError("dense Choi too large (" + std::to_string(choi_dim()) +
                           "); use the Kraus representation");
      cxmat c = cxmat::Zero(choi_dim(), choi_dim());
      for (const auto& k : *kraus_) {
        cxvec v = vec_of_kraus(k);
        c.noalias() += v * v.adjoint();
      }
      choi_ = std::move(c);
    }
    return *choi_;
  }

  const std::vector<cxmat>& kraus() const {
    if (!kraus_) {
      const cxmat& c = *choi_;
      Eigen::SelfAdjointEigenSolver<cxmat> es((c + c.adjoint()) / 2.0);
      std::vector<cxmat> ks;
      for (int k = 0; k < c.rows(); ++k) {
        double lam = es.eigenvalues()(k);
        if (lam < -1e-7 * std::max(1.0, c.norm()))
          throw ChannelError("kraus(): Choi is not positive semidefinite");
        if (lam > 1e-13) ks.push_back(kraus_of_vec(std::sqrt(lam) * es.eigenvectors().col(k)));
      }
      kraus_ = std::move(ks);
    }
    return *kraus_;
  }

  cxmat apply(const cxmat& state) const {
    if (state.rows() != in_.dim() || state.cols() != in_.dim())
      throw ChannelError("apply: state dimension mismatch");
    if (kraus_) {
      cxmat out = cxmat::Zero(out_.dim(), out_.dim());
      for (const auto& k : *kraus_) out.noalias() += k * state * k.adjoint();
      return out;
    }
    const cxmat& c = *choi_;
    const int dout = out_.dim();
    cxmat out = cxmat::Zero(dout, dout);
    for (int m = 0; m < in_.dim(); ++m)
      for (int n = 0; n < in_.dim(); ++n) {
        if (state(m, n) == complexd(0.0, 0.0)) continue;
        out += state(m, n) * c.block(m * dout, n * dout, dout, dout);
      }
    return out;
  }

  cxvec apply_to_pure(const cxvec& psi) const {
    // meaningful only for single-Kraus (isometric) channels
    if (!has_kraus() || kraus().size() != 1)
      throw ChannelError("apply_to_pure needs a single Kraus operator");
    return kraus()[0] * psi;
  }

  // || sum K^dag K - I ||: the trace-preservation deficit.  Loop composition
  // can make this nonzero; nothing in this library renormalizes it away.
  double tp_deficit() const {
    cxmat s = trace_out_all_outputs();
    return (s - cxmat::Identity(in_.dim(), in_.dim())).norm();
  }

  bool is_trace_preserving(double tol = kDefaultTol) const { return tp_deficit() <= tol; }

  bool is_completely_positive(double tol = kDefaultTol) const {
    if (kraus_) return true;  // Kraus form is CP by construction
    return is_psd(choi(), tol * std::max(1.0, choi().norm()));
  }

  // tr_out C on the input space; equals (sum K^dag K)^T
  cxmat trace_out_all_outputs() const {
    if (kraus_) {
      cxmat s = cxmat::Zero(in_.dim(), in_.dim());
      for (const auto& k : *kraus_) s.noalias() += (k.adjoint() * k).transpose();
      return s;
    }
    ProductSpace both = choi_space();
    std::vector<std::string> keep;
    for (const auto& f : in_.factors()) keep.push_back("in." + f.label);
    return partial_trace(choi(), both, keep);
  }

  // Reduced Choi on input (x) kept-output factors (kept in original order):
  // the object the signalling decision procedure reads.  In Kraus form the
  // full Choi is never materialized.
  cxmat reduced_choi_keep_outputs(const std::vector<std::string>& keep_out_labels) const {
    std::vector<int> keep = out_.indices_of(keep_out_labels);
    std::sort(keep.begin(), keep.end());
    std::vector<int> dropped;
    for (int k = 0; k < out_.size(); ++k)
      if (std::find(keep.begin(), keep.end(), k) == keep.end()) dropped.push_back(k);

    if (kraus_) {
      const auto odims = out_.dims();
      const auto idims = in_.dims();
      long dkeep = 1;
      for (int k : keep) dkeep *= odims[static_cast<std::size_t>(k)];
      // Kraus as tensor [out..., in...]; rows (in, kept-out), cols dropped-out
      std::vector<int> tperm;
      for (int k = 0; k < in_.size(); ++k) tperm.push_back(out_.size() + k);
      for (int k : keep) tperm.push_back(k);
      for (int k : dropped) tperm.push_back(k);
      cxmat acc = cxmat::Zero(static_cast<long>(in_.dim()) * dkeep,
                              static_cast<long>(in_.dim()) * dkeep);
      for (const auto& k : *kraus_) {
        Tensor t = Tensor::from_matrix(k, odims, idims);
        cxmat v = t.reorder(tperm).to_matrix(in_.size() + static_cast<int>(keep.size()));
        acc.noalias() += v * v.adjoint();
      }
      return acc;
    }
    ProductSpace both = choi_space();
    std::vector<std::string> keep_labels;
    for (const auto& f : in_.factors()) keep_labels.push_back("in." + f.label);
    for (int k : keep) keep_labels.push_back("out." + out_.factor(k).label);
    return partial_trace(choi(), both, keep_labels);
  }

  QuantumChannel renamed_inputs(const std::vector<std::string>& labels) const {
    QuantumChannel ch = *this;
    ch.in_ = in_.renamed(labels);
    return ch;
  }

  QuantumChannel renamed_outputs(const std::vector<std::string>& labels) const {
    QuantumChannel ch = *this;
    ch.out_ = out_.renamed(labels);
    return ch;
  }

  QuantumChannel renamed_wire(const std::string& from, const std::string& to) const {
    QuantumChannel ch = *this;
    auto rename = [&](const ProductSpace& sp) {
      auto labels = sp.labels();
      for (auto& l : labels)
        if (l == from) l = to;
      return sp.renamed(labels);
    };
    if (in_.contains(from)) ch.in_ = rename(in_);
    if (out_.contains(from)) ch.out_ = rename(out_);
    return ch;
  }

  // Reorder input factors to the given label order (the map itself changes
  // basis accordingly).
  QuantumChannel with_input_order(const std::vector<std::string>& labels) const {
    std::vector<int> perm = in_.indices_of(labels);  // perm[k] = old position
    ProductSpace nin = in_.subspace(perm);
    if (kraus_) {
      const auto map = detail::new_to_old_index(in_.dims(), perm);
      std::vector<cxmat> ks;
      for (const auto& k : *kraus_) {
        cxmat nk(k.rows(), k.cols());
        for (long c = 0; c < k.cols(); ++c) nk.col(c) = k.col(map[static_cast<std::size_t>(c)]);
        ks.push_back(std::move(nk));
      }
      return from_kraus(nin, out_, std::move(ks), name_);
    }
    Tensor t = choi_tensor();
    std::vector<int> tperm;
    for (int k : perm) tperm.push_back(k);
    for (int k = 0; k < out_.size(); ++k) tperm.push_back(in_.size() + k);
    for (int k : perm) tperm.push_back(in_.size() + out_.size() + k);
    for (int k = 0; k < out_.size(); ++k) tperm.push_back(2 * in_.size() + out_.size() + k);
    Tensor r = t.reorder(tperm);
    return from_choi(nin, out_, r.to_matrix(in_.size() + out_.size()), name_);
  }

  QuantumChannel with_output_order(const std::vector<std::string>& labels) const {
    std::vector<int> perm = out_.indices_of(labels);
    ProductSpace nout = out_.subspace(perm);
    if (kraus_) {
      const auto map = detail::new_to_old_index(out_.dims(), perm);
      std::vector<cxmat> ks;
      for (const auto& k : *kraus_) {
        cxmat nk(k.rows(), k.cols());
        for (long r = 0; r < k.rows(); ++r) nk.row(r) = k.row(map[static_cast<std::size_t>(r)]);
        ks.push_back(std::move(nk));
      }
      return from_kraus(in_, nout, std::move(ks), name_);
    }
    Tensor t = choi_tensor();
    std::vector<int> tperm;
    for (int k = 0; k < in_.size(); ++k) tperm.push_back(k);
    for (int k : perm) tperm.push_back(in_.size() + k);
    for (int k = 0; k < in_.size(); ++k) tperm.push_back(in_.size() + out_.size() + k);
    for (int k : perm) tperm.push_back(2 * in_.size() + out_.size() + k);
    Tensor r = t.reorder(tperm);
    return from_choi(in_, nout, r.to_matrix(in_.size() + out_.size()), name_);
  }

  // Choi as a tensor with axes [in ket..., out ket..., in bra..., out bra...]
  Tensor choi_tensor() const {
    std::vector<int> rd = in_.dims();
    auto od = out_.dims();
    rd.insert(rd.end(), od.begin(), od.end());
    return Tensor::from_matrix(choi(), rd, rd);
  }

  ProductSpace choi_space() const {
    std::vector<Factor> fs;
    for (const auto& f : in_.factors()) fs.push_back(Factor{"in." + f.label, f.dim, f.vacuum_extended});
    for (const auto& f : out_.factors())
      fs.push_back(Factor{"out." + f.label, f.dim, f.vacuum_extended});
    return ProductSpace(std::move(fs));
  }

  // Reduce a redundant Kraus set: eigendecompose the Gram matrix and rebuild
  // (the Choi operator is unchanged up to the cutoff).
  QuantumChannel compressed(double cutoff = 1e-13) const {
    if (!kraus_) return *this;
    const auto& ks = *kraus_;
    const int r = static_cast<int>(ks.size());
    if (r <= 1) return *this;
    cxmat gram(r, r);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j)
        gram(i, j) =
            (ks[static_cast<std::size_t>(i)].adjoint() * ks[static_cast<std::size_t>(j)]).trace();
    Eigen::SelfAdjointEigenSolver<cxmat> es((gram + gram.adjoint()) / 2.0);
    const double scale = std::max(1.0, std::abs(gram.trace()));
    std::vector<cxmat> nks;
    for (int k = 0; k < r; ++k) {
      if (es.eigenvalues()(k) <= cutoff * scale) continue;
      cxmat nk = cxmat::Zero(out_.dim(), in_.dim());
      for (int i = 0; i < r; ++i)
        nk += es.eigenvectors()(i, k) * ks[static_cast<std::size_t>(i)];
      nks.push_back(std::move(nk));
    }
    return from_kraus(in_, out_, std::move(nks), name_);
  }

  cxvec vec_of_kraus(const cxmat& k) const {
    cxvec v(choi_dim());
    const int dout = out_.dim();
    for (int m = 0; m < in_.dim(); ++m)
      for (int o = 0; o < dout; ++o) v(static_cast<long>(m) * dout + o) = k(o, m);
    return v;
  }

  cxmat kraus_of_vec(const cxvec& v) const {
    const int dout = out_.dim();
    cxmat k(dout, in_.dim());
    for (int m = 0; m < in_.dim(); ++m)
      for (int o = 0; o < dout; ++o) k(o, m) = v(static_cast<long>(m) * dout + o);
    return k;
  }

 private:
  ProductSpace in_, out_;
  std::string name_;
  mutable std::optional<cxmat> choi_;
  mutable std::optional<std::vector<cxmat>> kraus_;
};

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

inline QuantumChannel parallel(const QuantumChannel& a, const QuantumChannel& b) {
  ProductSpace in = a.in().concat(b.in());
  ProductSpace out = a.out().concat(b.out());
  if (a.has_kraus() && b.has_kraus()) {
    std::vector<cxmat> ks;
    ks.reserve(a.kraus().size() * b.kraus().size());
    for (const auto& ka : a.kraus())
      for (const auto& kb : b.kraus()) ks.push_back(kron(ka, kb));
    return QuantumChannel::from_kraus(std::move(in), std::move(out), std::move(ks));
  }
  // Choi route: kron then interleave [inA,outA,inB,outB] -> [inA,inB,outA,outB]
  cxmat big = kron(a.choi(), b.choi());
  std::vector<int> dims = {a.in().dim(), a.out().dim(), b.in().dim(), b.out().dim()};
  cxmat re = permute_factors(big, dims, {0, 2, 1, 3});
  return QuantumChannel::from_choi(std::move(in), std::move(out), std::move(re));
}

// Loop composition: feed output wire `out_label` back into input wire
// `in_label` of the same map.  Defined on basis elements by
//   Psi(|i><j|) = sum_{k,l} <k|_D Phi(|i><j| (x) |k><l|_B) |l>_D ,
// which at the Kraus level contracts each operator: B_K = sum_k <k|_D K |k>_B.
inline QuantumChannel loop(const QuantumChannel& ch, const std::string& out_label,
                           const std::string& in_label) {
  const int ipos = ch.in().index_of(in_label);
  const int opos = ch.out().index_of(out_label);
  if (ch.in().factor(ipos).dim != ch.out().factor(opos).dim)
    throw ChannelError("loop: wire dimension mismatch");

  std::vector<int> ikeep, okeep;
  for (int k = 0; k < ch.in().size(); ++k)
    if (k != ipos) ikeep.push_back(k);
  for (int k = 0; k < ch.out().size(); ++k)
    if (k != opos) okeep.push_back(k);
  ProductSpace nin = ch.in().subspace(ikeep);
  ProductSpace nout = ch.out().subspace(okeep);

  if (ch.has_kraus()) {
    const auto odims = ch.out().dims();
    const auto idims = ch.in().dims();
    std::vector<cxmat> ks;
    for (const auto& k : ch.kraus()) {
      Tensor t = Tensor::from_matrix(k, odims, idims);
      Tensor r = t.trace_pairs({{opos, ch.out().size() + ipos}});
      ks.push_back(r.to_matrix(ch.out().size() - 1));
    }
    return QuantumChannel::from_kraus(std::move(nin), std::move(nout), std::move(ks), ch.name());
  }

  Tensor t = ch.choi_tensor();
  const int ni = ch.in().size(), no = ch.out().size();
  Tensor r = t.trace_pairs({{ipos, ni + opos}, {ni + no + ipos, ni + no + ni + opos}});
  return QuantumChannel::from_choi(std::move(nin), std::move(nout),
                                   r.to_matrix(ni - 1 + no - 1), ch.name());
}

inline QuantumChannel sequential(const QuantumChannel& first, const QuantumChannel& second,
                                 const std::vector<std::pair<std::string, std::string>>& wires) {
  QuantumChannel ch = parallel(first, second);
  for (const auto& [o, i] : wires) ch = loop(ch, o, i);
  return ch;
}

// Pairwise link: parallel composition of a and b with the listed wires looped
// away, fused into one contraction so the intermediate kron never
// materializes.  `a_to_b` wires run from outputs of a to inputs of b,
// `b_to_a` from outputs of b to inputs of a.  Works on arbitrary Hermitian
// Choi data (the inputs need not be completely positive).
inline QuantumChannel link(const QuantumChannel& a, const QuantumChannel& b,
                           const std::vector<std::pair<std::string, std::string>>& a_to_b,
                           const std::vector<std::pair<std::string, std::string>>& b_to_a = {}) {
  const int nai = a.in().size(), nao = a.out().size();
  const int nbi = b.in().size(), nbo = b.out().size();
  std::vector<bool> a_in_used(static_cast<std::size_t>(nai), false),
      a_out_used(static_cast<std::size_t>(nao), false),
      b_in_used(static_cast<std::size_t>(nbi), false),
      b_out_used(static_cast<std::size_t>(nbo), false);

  std::vector<std::pair<int, int>> pairs;  // (a-axis, b-axis) in choi tensors
  for (const auto& [o, i] : a_to_b) {
    int ao = a.out().index_of(o), bi = b.in().index_of(i);
    if (a.out().factor(ao).dim != b.in().factor(bi).dim)
      throw ChannelError("link: wire dimension mismatch on " + o);
    a_out_used[static_cast<std::size_t>(ao)] = true;
    b_in_used[static_cast<std::size_t>(bi)] = true;
    pairs.emplace_back(nai + ao, bi);                                  // ket
    pairs.emplace_back(nai + nao + nai + ao, nbi + nbo + bi);          // bra
  }
  for (const auto& [o, i] : b_to_a) {
    int bo = b.out().index_of(o), ai = a.in().index_of(i);
    if (b.out().factor(bo).dim != a.in().factor(ai).dim)
      throw ChannelError("link: wire dimension mismatch on " + o);
    b_out_used[static_cast<std::size_t>(bo)] = true;
    a_in_used[static_cast<std::size_t>(ai)] = true;
    pairs.emplace_back(ai, nbi + bo);                                  // ket
    pairs.emplace_back(nai + nao + ai, nbi + nbo + nbi + bo);          // bra
  }

  Tensor r = Tensor::contract(a.choi_tensor(), b.choi_tensor(), pairs);

  // result axes: a-free in original order, then b-free; build the reorder to
  // [in-ket..., out-ket..., in-bra..., out-bra...] with a-factors before b's
  std::vector<int> a_free, b_free;
  for (int k = 0; k < 2 * (nai + nao); ++k) {
    int base = k % (nai + nao);
    bool used = base < nai ? a_in_used[static_cast<std::size_t>(base)]
                           : a_out_used[static_cast<std::size_t>(base - nai)];
    if (!used) a_free.push_back(k);
  }
  for (int k = 0; k < 2 * (nbi + nbo); ++k) {
    int base = k % (nbi + nbo);
    bool used = base < nbi ? b_in_used[static_cast<std::size_t>(base)]
                           : b_out_used[static_cast<std::size_t>(base - nbi)];
    if (!used) b_free.push_back(k);
  }
  auto position_in_free = [](const std::vector<int>& free, int axis) {
    auto it = std::find(free.begin(), free.end(), axis);
    return static_cast<int>(it - free.begin());
  };

  std::vector<Factor> in_fs, out_fs;
  std::vector<int> perm;  // result-axis index at each canonical position
  const int offset_b = static_cast<int>(a_free.size());
  // in kets: a then b
  for (int k = 0; k < nai; ++k)
    if (!a_in_used[static_cast<std::size_t>(k)]) {
      in_fs.push_back(a.in().factor(k));
      perm.push_back(position_in_free(a_free, k));
    }
  for (int k = 0; k < nbi; ++k)
    if (!b_in_used[static_cast<std::size_t>(k)]) {
      in_fs.push_back(b.in().factor(k));
      perm.push_back(offset_b + position_in_free(b_free, k));
    }
  // out kets
  for (int k = 0; k < nao; ++k)
    if (!a_out_used[static_cast<std::size_t>(k)]) {
      out_fs.push_back(a.out().factor(k));
      perm.push_back(position_in_free(a_free, nai + k));
    }
  for (int k = 0; k < nbo; ++k)
    if (!b_out_used[static_cast<std::size_t>(k)]) {
      out_fs.push_back(b.out().factor(k));
      perm.push_back(offset_b + position_in_free(b_free, nbi + k));
    }
  // bras in the same order
  for (int k = 0; k < nai; ++k)
    if (!a_in_used[static_cast<std::size_t>(k)])
      perm.push_back(position_in_free(a_free, nai + nao + k));
  for (int k = 0; k < nbi; ++k)
    if (!b_in_used[static_cast<std::size_t>(k)])
      perm.push_back(offset_b + position_in_free(b_free, nbi + nbo + k));
  for (int k = 0; k < nao; ++k)
    if (!a_out_used[static_cast<std::size_t>(k)])
      perm.push_back(position_in_free(a_free, nai + nao + nai + k));
  for (int k = 0; k < nbo; ++k)
    if (!b_out_used[static_cast<std::size_t>(k)])
      perm.push_back(offset_b + position_in_free(b_free, nbi + nbo + nbi + k));

  Tensor canon = r.reorder(perm);
  ProductSpace nin(in_fs), nout(out_fs);
  return QuantumChannel::from_choi(nin, nout,
                                   canon.to_matrix(nin.size() + nout.size()));
}

// Parallel-compose all parts, then loop every (out_label, in_label) wire.
// Wire labels refer to the combined channel, so feedback may run in either
// direction between components.
inline QuantumChannel compose_network(const std::vector<QuantumChannel>& parts,
                                      const std::vector<std::pair<std::string, std::string>>& wires,
                                      bool compress = true) {
  if (parts.empty()) throw ChannelError("compose_network: no parts");
  QuantumChannel ch = parts[0];
  for (std::size_t k = 1; k < parts.size(); ++k) ch = parallel(ch, parts[k]);
  for (const auto& [o, i] : wires) {
    ch = loop(ch, o, i);
    if (compress && ch.has_kraus() && ch.kraus().size() > 24) ch = ch.compressed();
  }
  if (compress && ch.has_kraus() && ch.kraus().size() > 1) ch = ch.compressed();
  return ch;
}

// ---------------------------------------------------------------------------
// Vacuum extension
// ---------------------------------------------------------------------------

namespace detail {

inline ProductSpace vacuum_extended_space(const ProductSpace& sp) {
  std::vector<Factor> fs;
  for (const auto& f : sp.factors()) fs.push_back(Factor{f.label, f.dim + 1, true});
  return ProductSpace(std::move(fs));
}

// isometry embedding the message sector: |v...> -> |v+1...>
inline cxmat message_embedding(const ProductSpace& orig) {
  const auto dims = orig.dims();
  std::vector<int> edims;
  for (int d : dims) edims.push_back(d + 1);
  const long dorig = orig.dim();
  long dext = 1;
  for (int d : edims) dext *= d;
  cxmat s = cxmat::Zero(dext, dorig);
  std::vector<int> digits;
  for (long i = 0; i < dorig; ++i) {
    unflatten(i, dims, digits);
    std::vector<int> ed = digits;
    for (auto& d : ed) d += 1;
    s(flatten(ed, edims), i) = 1.0;
  }
  return s;
}

}  // namespace detail

// Every in/out factor gains the vacuum level at basis index 0.  A single
// Kraus isometry on one-factor wires extends coherently (vacuum -> vacuum as
// a direct summand); any other channel extends block-diagonally, with the
// non-message patterns collapsed onto the all-vacuum state.
inline QuantumChannel vacuum_extend(const QuantumChannel& ch) {
  ProductSpace ein = detail::vacuum_extended_space(ch.in());
  ProductSpace eout = detail::vacuum_extended_space(ch.out());
  cxmat sin = detail::message_embedding(ch.in());
  cxmat sout = detail::message_embedding(ch.out());

  const bool isometric =
      ch.has_kraus() && ch.kraus().size() == 1 &&
      (ch.kraus()[0].adjoint() * ch.kraus()[0] - cxmat::Identity(ch.in().dim(), ch.in().dim()))
              .norm() < 1e-10;
  if (isometric && ch.in().size() == 1 && ch.out().size() == 1) {
    cxmat ek = cxmat::Zero(eout.dim(), ein.dim());
    ek(0, 0) = 1.0;
    ek.block(1, 1, ch.out().dim(), ch.in().dim()) = ch.kraus()[0];
    return QuantumChannel::from_kraus(std::move(ein), std::move(eout), {ek}, ch.name() + ".vac");
  }

  std::vector<cxmat> ks;
  for (const auto& k : ch.kraus()) ks.push_back(sout * k * sin.adjoint());
  cxvec omega = cxvec::Zero(eout.dim());
  omega(0) = 1.0;
  cxmat rest = cxmat::Identity(ein.dim(), ein.dim()) - sin * sin.adjoint();
  Eigen::SelfAdjointEigenSolver<cxmat> es(rest);
  for (int c = 0; c < ein.dim(); ++c)
    if (es.eigenvalues()(c) > 0.5) ks.push_back(omega * es.eigenvectors().col(c).adjoint());
  return QuantumChannel::from_kraus(std::move(ein), std::move(eout), std::move(ks),
                                    ch.name() + ".vac");
}

// ---------------------------------------------------------------------------
// Fine-graining of maps
// ---------------------------------------------------------------------------

// For each coarse system: the fine systems realizing it and, per coarse basis
// value v, an orthonormal basis (columns) of the fine subspace associated
// with |v>.  The joint fine state space is the direct sum of these subspaces.
struct SystemFineGrainingEntry {
  std::string coarse_label;
  std::vector<std::string> fine_labels;
  std::vector<cxmat> level_bases;
};

struct SystemFineGraining {
  std::vector<SystemFineGrainingEntry> inputs;
  std::vector<SystemFineGrainingEntry> outputs;
};

inline SystemFineGrainingEntry identity_fine_graining_entry(const std::string& label, int dim) {
  SystemFineGrainingEntry e;
  e.coarse_label = label;
  e.fine_labels = {label};
  for (int v = 0; v < dim; ++v) {
    cxmat b = cxmat::Zero(dim, 1);
    b(v, 0) = 1.0;
    e.level_bases.push_back(b);
  }
  return e;
}

// Single-message entry: one vacuum-extended copy of the system per point
// label; coarse level v corresponds to |v+1> at exactly one copy, vacuum at
// the others.
inline SystemFineGrainingEntry delocalized_fine_graining_entry(
    const std::string& coarse_label, int dim, const std::vector<std::string>& copies) {
  SystemFineGrainingEntry e;
  e.coarse_label = coarse_label;
  e.fine_labels = copies;
  const int n = static_cast<int>(copies.size());
  std::vector<int> dims(static_cast<std::size_t>(n), dim + 1);
  long total = 1;
  for (int d : dims) total *= d;
  for (int v = 0; v < dim; ++v) {
    cxmat b = cxmat::Zero(total, n);
    for (int c = 0; c < n; ++c) {
      std::vector<int> digits(static_cast<std::size_t>(n), 0);
      digits[static_cast<std::size_t>(c)] = v + 1;
      b(flatten(digits, dims), c) = 1.0;
    }
    e.level_bases.push_back(b);
  }
  return e;
}

namespace detail {

inline cxmat joint_level_basis(const std::vector<SystemFineGrainingEntry>& entries,
                               const std::vector<int>& levels, const ProductSpace& fine_space) {
  cxmat acc = cxmat::Identity(1, 1);
  std::vector<std::string> grouped_labels;
  for (std::size_t s = 0; s < entries.size(); ++s) {
    acc = kron(acc, entries[s].level_bases.at(static_cast<std::size_t>(levels[s])));
    for (const auto& l : entries[s].fine_labels) grouped_labels.push_back(l);
  }
  // permute rows from grouped system-major order to the fine factor order
  std::vector<int> grouped_dims;
  for (const auto& l : grouped_labels)
    grouped_dims.push_back(fine_space.factor(fine_space.index_of(l)).dim);
  std::vector<int> to_fine;  // to_fine[k] = grouped position of fine factor k
  for (const auto& l : fine_space.labels()) {
    auto it = std::find(grouped_labels.begin(), grouped_labels.end(), l);
    if (it == grouped_labels.end()) throw ChannelError("fine-graining misses factor " + l);
    to_fine.push_back(static_cast<int>(it - grouped_labels.begin()));
  }
  const auto map = new_to_old_index(grouped_dims, to_fine);
  cxmat out(acc.rows(), acc.cols());
  for (long r = 0; r < acc.rows(); ++r) out.row(r) = acc.row(map[static_cast<std::size_t>(r)]);
  return out;
}

inline bool partition_ok(const SystemFineGrainingEntry& e, double tol) {
  for (std::size_t v = 0; v < e.level_bases.size(); ++v) {
    const cxmat& b = e.level_bases[v];
    if (!approx_equal(b.adjoint() * b, cxmat::Identity(b.cols(), b.cols()), 1e-8)) return false;
    for (std::size_t w = v + 1; w < e.level_bases.size(); ++w)
      if ((b.adjoint() * e.level_bases[w]).norm() > tol * 10) return false;
  }
  return true;
}

}  // namespace detail

// True iff for every coarse input basis state v and every sampled fine state
// in its subspace, the coarse output sum p_{uu'} |u><u'| is reproduced by the
// fine output as sum p_{uu'} |psi^u><psi^{u'}| with vectors in the
// corresponding fine subspaces.
inline bool is_fine_graining_of(const QuantumChannel& fine, const QuantumChannel& coarse,
                                const SystemFineGraining& sys_map, double tol = 1e-7,
                                int random_samples = 2, unsigned seed = 7) {
  for (const auto& e : sys_map.inputs)
    if (!detail::partition_ok(e, tol)) throw ChannelError("input partition not orthonormal");
  for (const auto& e : sys_map.outputs)
    if (!detail::partition_ok(e, tol)) throw ChannelError("output partition not orthonormal");

  std::mt19937_64 rng(seed);
  const double block_tol = tol * 100;

  std::vector<int> in_dims, out_dims;
  for (const auto& e : sys_map.inputs) in_dims.push_back(static_cast<int>(e.level_bases.size()));
  for (const auto& e : sys_map.outputs) out_dims.push_back(static_cast<int>(e.level_bases.size()));
  const long n_in = std::accumulate(in_dims.begin(), in_dims.end(), 1L, std::multiplies<long>());
  const long n_out = std::accumulate(out_dims.begin(), out_dims.end(), 1L, std::multiplies<long>());
  if (n_in != coarse.in().dim() || n_out != coarse.out().dim())
    throw ChannelError("fine-graining map does not match coarse channel dimensions");

  std::vector<cxmat> out_bases(static_cast<std::size_t>(n_out));
  {
    std::vector<int> lv;
    for (long u = 0; u < n_out; ++u) {
      unflatten(u, out_dims, lv);
      out_bases[static_cast<std::size_t>(u)] =
          detail::joint_level_basis(sys_map.outputs, lv, fine.out());
    }
  }

  std::vector<int> lv;
  for (long v = 0; v < n_in; ++v) {
    unflatten(v, in_dims, lv);
    cxmat coarse_out = coarse.apply(
        matrix_unit(static_cast<int>(v), static_cast<int>(v), static_cast<int>(n_in)));
    cxmat in_basis = detail::joint_level_basis(sys_map.inputs, lv, fine.in());
    const int bdim = static_cast<int>(in_basis.cols());

    std::vector<cxvec> samples;
    for (int c = 0; c < bdim; ++c) samples.push_back(in_basis.col(c));
    for (int s = 0; s < random_samples; ++s) samples.push_back(in_basis * random_pure_state(rng, bdim));

    for (const auto& psi : samples) {
      cxmat fine_out = fine.apply(psi * psi.adjoint());

      std::vector<std::vector<cxmat>> blocks(static_cast<std::size_t>(n_out),
                                             std::vector<cxmat>(static_cast<std::size_t>(n_out)));
      cxmat recon = cxmat::Zero(fine_out.rows(), fine_out.cols());
      for (long u = 0; u < n_out; ++u)
        for (long u2 = 0; u2 < n_out; ++u2) {
          blocks[static_cast<std::size_t>(u)][static_cast<std::size_t>(u2)] =
              out_bases[static_cast<std::size_t>(u)].adjoint() * fine_out *
              out_bases[static_cast<std::size_t>(u2)];
          recon += out_bases[static_cast<std::size_t>(u)] *
                   blocks[static_cast<std::size_t>(u)][static_cast<std::size_t>(u2)] *
                   out_bases[static_cast<std::size_t>(u2)].adjoint();
        }
      if ((fine_out - recon).norm() > block_tol) return false;

      // diagonal blocks: rank one with trace p_{uu}
      std::vector<cxvec> unit(static_cast<std::size_t>(n_out));
      std::vector<bool> present(static_cast<std::size_t>(n_out), false);
      for (long u = 0; u < n_out; ++u) {
        const double p = std::real(coarse_out(u, u));
        const cxmat& b = blocks[static_cast<std::size_t>(u)][static_cast<std::size_t>(u)];
        if (p <= tol) {
          if (b.norm() > block_tol) return false;
          continue;
        }
        Eigen::SelfAdjointEigenSolver<cxmat> es((b + b.adjoint()) / 2.0);
        const int top = static_cast<int>(b.rows()) - 1;
        const double lam = es.eigenvalues()(top);
        cxvec w = es.eigenvectors().col(top);
        if ((b - lam * (w * w.adjoint())).norm() > block_tol) return false;
        if (std::abs(lam - p) > block_tol) return false;
        unit[static_cast<std::size_t>(u)] = w;
        present[static_cast<std::size_t>(u)] = true;
      }

      // off-diagonal blocks: p_{uu'} e^{i(a_u - a_u')} w_u w_u'^dag with a
      // consistent phase assignment; walk the nonzero-p graph once
      std::vector<complexd> phase(static_cast<std::size_t>(n_out), complexd(1.0, 0.0));
      std::vector<bool> fixed(static_cast<std::size_t>(n_out), false);
      for (long u = 0; u < n_out; ++u)
        if (present[static_cast<std::size_t>(u)] && !fixed[static_cast<std::size_t>(u)]) {
          fixed[static_cast<std::size_t>(u)] = true;
          std::vector<long> queue{u};
          while (!queue.empty()) {
            long a = queue.back();
            queue.pop_back();
            for (long b2 = 0; b2 < n_out; ++b2) {
              if (!present[static_cast<std::size_t>(b2)] || fixed[static_cast<std::size_t>(b2)] ||
                  b2 == a)
                continue;
              complexd pab = a < b2 ? coarse_out(a, b2) : std::conj(coarse_out(b2, a));
              if (std::abs(pab) <= tol) continue;
              const cxmat& blk = a < b2
                                     ? blocks[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)]
                                     : cxmat(blocks[static_cast<std::size_t>(b2)]
                                                   [static_cast<std::size_t>(a)]
                                                       .adjoint());
              complexd c = (unit[static_cast<std::size_t>(a)].adjoint() * blk *
                            unit[static_cast<std::size_t>(b2)])(0, 0);
              if (std::abs(c) <= tol) return false;
              // want phase[a]*conj(phase[b2]) * c_hat = pab_hat
              complexd target = (pab / std::abs(pab)) / (c / std::abs(c));
              phase[static_cast<std::size_t>(b2)] =
                  std::conj(target) * phase[static_cast<std::size_t>(a)];
              fixed[static_cast<std::size_t>(b2)] = true;
              queue.push_back(b2);
            }
          }
        }

      for (long u = 0; u < n_out; ++u)
        for (long u2 = 0; u2 < n_out; ++u2) {
          if (u == u2) continue;
          complexd p12 = coarse_out(u, u2);
          const cxmat& b = blocks[static_cast<std::size_t>(u)][static_cast<std::size_t>(u2)];
          if (!present[static_cast<std::size_t>(u)] || !present[static_cast<std::size_t>(u2)]) {
            if (b.norm() > block_tol) return false;
            continue;
          }
          // candidate psi^u = phase_u * w_u (unit vectors), block = p12 psi^u psi^{u2 dag}
          cxmat expect =
              p12 * ((phase[static_cast<std::size_t>(u)] * unit[static_cast<std::size_t>(u)]) *
                     (phase[static_cast<std::size_t>(u2)] * unit[static_cast<std::size_t>(u2)])
                         .adjoint());
          if ((b - expect).norm() > block_tol) return false;
        }
    }
  }
  return true;
}

}  // namespace causalflow
