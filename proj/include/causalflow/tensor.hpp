#pragma once

// Dense complex linear algebra over labeled tensor-product spaces.
//
// Conventions used everywhere in this library:
//  - composite basis indices are row-major: factor 0 is the most significant
//    digit, factor order is declaration order;
//  - vacuum-extended factors reserve basis index 0 for the vacuum level, the
//    original d message levels occupy indices 1..d;
//  - default numeric tolerance is 1e-9, absolute (Frobenius for matrices).

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace causalflow {

using complexd = std::complex<double>;
using cxmat = Eigen::MatrixXcd;
using cxvec = Eigen::VectorXcd;

inline constexpr double kDefaultTol = 1e-9;

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Labeled product spaces
// ---------------------------------------------------------------------------

struct Factor {
  std::string label;
  int dim = 1;
  bool vacuum_extended = false;
};

class ProductSpace {
 public:
  ProductSpace() = default;

  explicit ProductSpace(std::vector<Factor> factors) : factors_(std::move(factors)) {
    for (std::size_t i = 0; i < factors_.size(); ++i) {
      if (factors_[i].dim < 1) throw TensorError("factor dimension must be >= 1");
      if (factors_[i].vacuum_extended && factors_[i].dim < 2)
        throw TensorError("vacuum-extended factor needs dimension >= 2");
      for (std::size_t j = i + 1; j < factors_.size(); ++j)
        if (factors_[i].label == factors_[j].label)
          throw TensorError("duplicate label in product space: " + factors_[i].label);
    }
  }

  static ProductSpace single(const std::string& label, int dim, bool vacuum = false) {
    return ProductSpace({Factor{label, dim, vacuum}});
  }

  int size() const { return static_cast<int>(factors_.size()); }

  int dim() const {
    long d = 1;
    for (const auto& f : factors_) d *= f.dim;
    return static_cast<int>(d);
  }

  const Factor& factor(int k) const { return factors_.at(static_cast<std::size_t>(k)); }
  const std::vector<Factor>& factors() const { return factors_; }

  std::vector<int> dims() const {
    std::vector<int> d;
    d.reserve(factors_.size());
    for (const auto& f : factors_) d.push_back(f.dim);
    return d;
  }

  bool contains(const std::string& label) const {
    for (const auto& f : factors_)
      if (f.label == label) return true;
    return false;
  }

  int index_of(const std::string& label) const {
    for (std::size_t k = 0; k < factors_.size(); ++k)
      if (factors_[k].label == label) return static_cast<int>(k);
    throw TensorError("unknown label: " + label);
  }

  std::vector<int> indices_of(const std::vector<std::string>& labels) const {
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(index_of(l));
    return out;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(factors_.size());
    for (const auto& f : factors_) out.push_back(f.label);
    return out;
  }

  ProductSpace concat(const ProductSpace& other) const {
    std::vector<Factor> fs = factors_;
    for (const auto& f : other.factors_) {
      if (contains(f.label)) throw TensorError("label collision on concat: " + f.label);
      fs.push_back(f);
    }
    return ProductSpace(std::move(fs));
  }

  // subspace in the order given by `keep` (positions into this space)
  ProductSpace subspace(const std::vector<int>& keep) const {
    std::vector<Factor> fs;
    fs.reserve(keep.size());
    for (int k : keep) fs.push_back(factor(k));
    return ProductSpace(std::move(fs));
  }

  ProductSpace renamed(const std::vector<std::string>& new_labels) const {
    if (static_cast<int>(new_labels.size()) != size())
      throw TensorError("rename needs one label per factor");
    std::vector<Factor> fs = factors_;
    for (std::size_t k = 0; k < fs.size(); ++k) fs[k].label = new_labels[k];
    return ProductSpace(std::move(fs));
  }

  bool operator==(const ProductSpace& other) const {
    if (factors_.size() != other.factors_.size()) return false;
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      if (factors_[k].label != other.factors_[k].label) return false;
      if (factors_[k].dim != other.factors_[k].dim) return false;
    }
    return true;
  }

 private:
  std::vector<Factor> factors_;
};

// ---------------------------------------------------------------------------
// Flat-index helpers (row-major, first factor most significant)
// ---------------------------------------------------------------------------

inline std::vector<long> strides_of(const std::vector<int>& dims) {
  std::vector<long> s(dims.size(), 1);
  for (int k = static_cast<int>(dims.size()) - 2; k >= 0; --k)
    s[static_cast<std::size_t>(k)] =
        s[static_cast<std::size_t>(k) + 1] * dims[static_cast<std::size_t>(k) + 1];
  return s;
}

inline void unflatten(long idx, const std::vector<int>& dims, std::vector<int>& digits) {
  digits.resize(dims.size());
  for (int k = static_cast<int>(dims.size()) - 1; k >= 0; --k) {
    digits[static_cast<std::size_t>(k)] = static_cast<int>(idx % dims[static_cast<std::size_t>(k)]);
    idx /= dims[static_cast<std::size_t>(k)];
  }
}

inline long flatten(const std::vector<int>& digits, const std::vector<int>& dims) {
  long idx = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) idx = idx * dims[k] + digits[k];
  return idx;
}

// Map sending an old flat index to the flat index after reordering factors so
// that the factor at old position perm[k] sits at new position k.
inline std::vector<long> factor_permutation_map(const std::vector<int>& dims,
                                                const std::vector<int>& perm) {
  const long total = std::accumulate(dims.begin(), dims.end(), 1L, std::multiplies<long>());
  std::vector<int> new_dims(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k)
    new_dims[k] = dims[static_cast<std::size_t>(perm[k])];
  const auto new_strides = strides_of(new_dims);
  std::vector<long> map(static_cast<std::size_t>(total));
  std::vector<int> digits;
  for (long i = 0; i < total; ++i) {
    unflatten(i, dims, digits);
    long j = 0;
    for (std::size_t k = 0; k < perm.size(); ++k)
      j += new_strides[k] * digits[static_cast<std::size_t>(perm[k])];
    map[static_cast<std::size_t>(i)] = j;
  }
  return map;
}

// perm[k] = old position of the factor at new position k
inline cxvec permute_factors(const cxvec& v, const std::vector<int>& dims,
                             const std::vector<int>& perm) {
  const auto map = factor_permutation_map(dims, perm);
  cxvec out(v.size());
  for (long i = 0; i < v.size(); ++i) out(map[static_cast<std::size_t>(i)]) = v(i);
  return out;
}

inline cxmat permute_factors(const cxmat& m, const std::vector<int>& dims,
                             const std::vector<int>& perm) {
  const auto map = factor_permutation_map(dims, perm);
  cxmat out(m.rows(), m.cols());
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j)
      out(map[static_cast<std::size_t>(i)], map[static_cast<std::size_t>(j)]) = m(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Basic operations
// ---------------------------------------------------------------------------

inline cxmat kron(const cxmat& a, const cxmat& b) {
  cxmat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline cxmat matrix_unit(int i, int j, int d) {
  if (i < 0 || j < 0 || i >= d || j >= d) throw TensorError("matrix_unit index out of range");
  cxmat m = cxmat::Zero(d, d);
  m(i, j) = complexd(1.0, 0.0);
  return m;
}

// Reduced matrix on the kept factors, in their original order.
inline cxmat partial_trace(const cxmat& m, const ProductSpace& space,
                           const std::vector<std::string>& keep_labels) {
  if (m.rows() != m.cols() || m.rows() != space.dim())
    throw TensorError("partial_trace: dimension mismatch");
  std::vector<int> keep = space.indices_of(keep_labels);
  std::sort(keep.begin(), keep.end());
  std::vector<int> traced;
  for (int k = 0; k < space.size(); ++k)
    if (std::find(keep.begin(), keep.end(), k) == keep.end()) traced.push_back(k);

  const auto dims = space.dims();
  const auto strides = strides_of(dims);
  long dk = 1, dt = 1;
  for (int k : keep) dk *= dims[static_cast<std::size_t>(k)];
  for (int t : traced) dt *= dims[static_cast<std::size_t>(t)];

  // offset tables: flat index = kept_offset + traced_offset
  std::vector<long> koff(static_cast<std::size_t>(dk), 0);
  {
    std::vector<int> kd(keep.size(), 0);
    for (long i = 0; i < dk; ++i) {
      long off = 0;
      long rem = i;
      for (int k = static_cast<int>(keep.size()) - 1; k >= 0; --k) {
        const int d = dims[static_cast<std::size_t>(keep[static_cast<std::size_t>(k)])];
        kd[static_cast<std::size_t>(k)] = static_cast<int>(rem % d);
        rem /= d;
      }
      for (std::size_t k = 0; k < keep.size(); ++k)
        off += strides[static_cast<std::size_t>(keep[k])] * kd[k];
      koff[static_cast<std::size_t>(i)] = off;
    }
  }
  std::vector<long> toff(static_cast<std::size_t>(dt), 0);
  {
    std::vector<int> td(traced.size(), 0);
    for (long i = 0; i < dt; ++i) {
      long off = 0;
      long rem = i;
      for (int k = static_cast<int>(traced.size()) - 1; k >= 0; --k) {
        const int d = dims[static_cast<std::size_t>(traced[static_cast<std::size_t>(k)])];
        td[static_cast<std::size_t>(k)] = static_cast<int>(rem % d);
        rem /= d;
      }
      for (std::size_t k = 0; k < traced.size(); ++k)
        off += strides[static_cast<std::size_t>(traced[k])] * td[k];
      toff[static_cast<std::size_t>(i)] = off;
    }
  }

  cxmat out = cxmat::Zero(dk, dk);
  for (long i = 0; i < dk; ++i)
    for (long j = 0; j < dk; ++j) {
      complexd s(0.0, 0.0);
      for (long t = 0; t < dt; ++t)
        s += m(koff[static_cast<std::size_t>(i)] + toff[static_cast<std::size_t>(t)],
               koff[static_cast<std::size_t>(j)] + toff[static_cast<std::size_t>(t)]);
      out(i, j) = s;
    }
  return out;
}

// Lift an operator acting on a subset of factors (given in the operator's own
// order) to the full space.
inline cxmat lift(const cxmat& op, const ProductSpace& space, const std::vector<int>& targets) {
  const auto dims = space.dims();
  long dt = 1;
  for (int t : targets) dt *= dims[static_cast<std::size_t>(t)];
  if (op.rows() != dt || op.cols() != dt) throw TensorError("lift: operator dimension mismatch");

  // permutation putting targets first, in target order
  std::vector<int> perm = targets;
  for (int k = 0; k < space.size(); ++k)
    if (std::find(targets.begin(), targets.end(), k) == targets.end()) perm.push_back(k);

  const long drest = space.dim() / dt;
  cxmat big = kron(op, cxmat::Identity(drest, drest));
  // big lives on reordered space [targets..., rest...]; bring it back
  std::vector<int> reordered_dims(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k)
    reordered_dims[k] = dims[static_cast<std::size_t>(perm[k])];
  // inverse permutation: new position of old factor k
  std::vector<int> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
  return permute_factors(big, reordered_dims, inv);
}

inline bool is_hermitian(const cxmat& m, double tol = kDefaultTol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.adjoint()).norm() <= tol * std::max(1.0, m.norm());
}

inline bool is_psd(const cxmat& m, double tol = kDefaultTol) {
  if (m.rows() != m.cols()) throw TensorError("is_psd: non-square input");
  cxmat h = (m + m.adjoint()) / 2.0;
  Eigen::SelfAdjointEigenSolver<cxmat> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

inline double frobenius_distance(const cxmat& a, const cxmat& b) { return (a - b).norm(); }

inline bool approx_equal(const cxmat& a, const cxmat& b, double tol = kDefaultTol) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return (a - b).norm() <= tol;
}

// ---------------------------------------------------------------------------
// Dense labeled-axis tensor, used for wire contractions
// ---------------------------------------------------------------------------

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims)
      : dims_(std::move(dims)),
        data_(static_cast<std::size_t>(
                  std::accumulate(dims_.begin(), dims_.end(), 1L, std::multiplies<long>())),
              complexd(0.0, 0.0)) {}

  static Tensor from_matrix(const cxmat& m, const std::vector<int>& row_dims,
                            const std::vector<int>& col_dims) {
    std::vector<int> dims = row_dims;
    dims.insert(dims.end(), col_dims.begin(), col_dims.end());
    Tensor t(dims);
    const long r = m.rows(), c = m.cols();
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j) t.data_[static_cast<std::size_t>(i * c + j)] = m(i, j);
    return t;
  }

  cxmat to_matrix(int n_row_axes) const {
    long r = 1, c = 1;
    for (int k = 0; k < n_row_axes; ++k) r *= dims_[static_cast<std::size_t>(k)];
    for (std::size_t k = static_cast<std::size_t>(n_row_axes); k < dims_.size(); ++k) c *= dims_[k];
    cxmat m(r, c);
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j) m(i, j) = data_[static_cast<std::size_t>(i * c + j)];
    return m;
  }

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  long total() const { return static_cast<long>(data_.size()); }
  complexd& at(long flat) { return data_[static_cast<std::size_t>(flat)]; }
  const complexd& at(long flat) const { return data_[static_cast<std::size_t>(flat)]; }

  // axes of the result: perm[k] = old axis at new position k
  Tensor reorder(const std::vector<int>& perm) const {
    std::vector<int> new_dims(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k)
      new_dims[k] = dims_[static_cast<std::size_t>(perm[k])];
    Tensor out(new_dims);
    const auto old_strides = strides_of(dims_);
    const auto new_strides = strides_of(new_dims);
    std::vector<int> digits;
    for (long i = 0; i < total(); ++i) {
      unflatten(i, dims_, digits);
      long j = 0;
      for (std::size_t k = 0; k < perm.size(); ++k)
        j += new_strides[k] * digits[static_cast<std::size_t>(perm[k])];
      out.data_[static_cast<std::size_t>(j)] = data_[static_cast<std::size_t>(i)];
    }
    return out;
  }

  // Contract pairs of axes within this tensor (sum over equal indices).
  // Remaining axes keep their relative order.
  Tensor trace_pairs(const std::vector<std::pair<int, int>>& pairs) const {
    std::vector<bool> involved(dims_.size(), false);
    for (auto [a, b] : pairs) {
      if (dims_[static_cast<std::size_t>(a)] != dims_[static_cast<std::size_t>(b)])
        throw TensorError("trace_pairs: dimension mismatch");
      involved[static_cast<std::size_t>(a)] = involved[static_cast<std::size_t>(b)] = true;
    }
    std::vector<int> free_axes;
    for (int k = 0; k < rank(); ++k)
      if (!involved[static_cast<std::size_t>(k)]) free_axes.push_back(k);

    std::vector<int> free_dims, pair_dims;
    for (int k : free_axes) free_dims.push_back(dims_[static_cast<std::size_t>(k)]);
    for (auto [a, b] : pairs) {
      (void)b;
      pair_dims.push_back(dims_[static_cast<std::size_t>(a)]);
    }

    Tensor out(free_dims.empty() ? std::vector<int>{1} : free_dims);
    const bool scalar = free_dims.empty();
    const auto strides = strides_of(dims_);
    const long nfree = std::accumulate(free_dims.begin(), free_dims.end(), 1L, std::multiplies<long>());
    const long npair = std::accumulate(pair_dims.begin(), pair_dims.end(), 1L, std::multiplies<long>());
    std::vector<int> fd, pd;
    for (long f = 0; f < nfree; ++f) {
      unflatten(f, free_dims.empty() ? std::vector<int>{1} : free_dims, fd);
      long base = 0;
      for (std::size_t k = 0; k < free_axes.size(); ++k)
        base += strides[static_cast<std::size_t>(free_axes[k])] * fd[k];
      complexd s(0.0, 0.0);
      for (long p = 0; p < npair; ++p) {
        unflatten(p, pair_dims.empty() ? std::vector<int>{1} : pair_dims, pd);
        long off = 0;
        for (std::size_t k = 0; k < pairs.size(); ++k)
          off += (strides[static_cast<std::size_t>(pairs[k].first)] +
                  strides[static_cast<std::size_t>(pairs[k].second)]) *
                 pd[k];
        s += data_[static_cast<std::size_t>(base + off)];
      }
      out.data_[static_cast<std::size_t>(scalar ? 0 : f)] = s;
    }
    return out;
  }

  // Contract axes of a with axes of b; result axes are a's free axes followed
  // by b's free axes, each in original order.
  static Tensor contract(const Tensor& a, const Tensor& b,
                         const std::vector<std::pair<int, int>>& axes) {
    std::vector<bool> ac(a.dims_.size(), false), bc(b.dims_.size(), false);
    for (auto [i, j] : axes) {
      if (a.dims_[static_cast<std::size_t>(i)] != b.dims_[static_cast<std::size_t>(j)])
        throw TensorError("contract: dimension mismatch");
      ac[static_cast<std::size_t>(i)] = true;
      bc[static_cast<std::size_t>(j)] = true;
    }
    // reorder a: [free..., contracted...], b: [contracted..., free...], then matmul
    std::vector<int> aperm, bperm;
    for (int k = 0; k < a.rank(); ++k)
      if (!ac[static_cast<std::size_t>(k)]) aperm.push_back(k);
    const std::size_t a_free = aperm.size();
    for (auto [i, j] : axes) {
      (void)j;
      aperm.push_back(i);
    }
    for (auto [i, j] : axes) {
      (void)i;
      bperm.push_back(j);
    }
    for (int k = 0; k < b.rank(); ++k)
      if (!bc[static_cast<std::size_t>(k)]) bperm.push_back(k);

    Tensor ar = a.reorder(aperm);
    Tensor br = b.reorder(bperm);
    cxmat am = ar.to_matrix(static_cast<int>(a_free));
    cxmat bm = br.to_matrix(static_cast<int>(axes.size()));
    cxmat rm = am * bm;

    std::vector<int> rdims;
    for (std::size_t k = 0; k < a_free; ++k)
      rdims.push_back(ar.dims()[k]);
    for (std::size_t k = axes.size(); k < br.dims().size(); ++k) rdims.push_back(br.dims()[k]);
    if (rdims.empty()) rdims.push_back(1);
    return Tensor::from_matrix(rm, std::vector<int>(rdims.begin(), rdims.begin() + static_cast<long>(a_free)),
                               std::vector<int>(rdims.begin() + static_cast<long>(a_free), rdims.end()));
  }

 private:
  std::vector<int> dims_;
  std::vector<complexd> data_;
};

// ---------------------------------------------------------------------------
// Seeded random generators used by oracles and validators
// ---------------------------------------------------------------------------

inline cxmat random_ginibre(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  cxmat g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = complexd(gauss(rng), gauss(rng));
  return g;
}

inline cxmat random_unitary(std::mt19937_64& rng, int d) {
  cxmat g = random_ginibre(rng, d, d);
  Eigen::HouseholderQR<cxmat> qr(g);
  cxmat q = qr.householderQ();
  cxmat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int k = 0; k < d; ++k) {
    complexd ph = r(k, k) / std::abs(r(k, k));
    q.col(k) *= ph;
  }
  return q;
}

inline cxvec random_pure_state(std::mt19937_64& rng, int d) {
  cxmat g = random_ginibre(rng, d, 1);
  cxvec v = g.col(0);
  return v / v.norm();
}

inline cxmat random_density(std::mt19937_64& rng, int d) {
  cxmat g = random_ginibre(rng, d, d);
  cxmat rho = g * g.adjoint();
  return rho / rho.trace();
}

// Random CPTP map via a Haar-ish random isometry split into Kraus blocks.
inline std::vector<cxmat> random_kraus_set(std::mt19937_64& rng, int d_in, int d_out,
                                           int n_kraus) {
  cxmat g = random_ginibre(rng, d_out * n_kraus, d_in);
  // QR gives an isometry with orthonormal columns when rows >= cols
  Eigen::HouseholderQR<cxmat> qr(g);
  cxmat q = qr.householderQ() * cxmat::Identity(d_out * n_kraus, d_in);
  std::vector<cxmat> ks;
  ks.reserve(static_cast<std::size_t>(n_kraus));
  for (int k = 0; k < n_kraus; ++k) ks.push_back(q.block(k * d_out, 0, d_out, d_in));
  return ks;
}

}  // namespace causalflow
