#pragma once

// Membership of a bipartite distribution in the causal polytope: feasibility
// of P = q P1 + (1-q) P2 with P1 one-way (no signalling B -> A) and P2 the
// reverse, decided by a phase-1 simplex over exact rationals.  Infeasibility
// comes with a Farkas certificate y: y^T A <= 0 componentwise on the columns
// while y^T b > 0.

#include <boost/multiprecision/cpp_int.hpp>

#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace causalflow {

using rational = boost::multiprecision::cpp_rational;

class LpError : public std::runtime_error {
 public:
  explicit LpError(const std::string& msg) : std::runtime_error(msg) {}
};

// Feasibility of { A x = b, x >= 0 } with exact arithmetic (Bland's rule).
struct LpFeasibility {
  bool feasible = false;
  std::vector<rational> x;        // a feasible point when feasible
  std::vector<rational> farkas;   // y with y^T A <= 0, y^T b > 0 otherwise
};

inline LpFeasibility solve_feasibility(std::vector<std::vector<rational>> a,
                                       std::vector<rational> b) {
  const int m = static_cast<int>(a.size());
  const int n = m > 0 ? static_cast<int>(a[0].size()) : 0;

  // normalize rows so b >= 0
  for (int i = 0; i < m; ++i)
    if (b[static_cast<std::size_t>(i)] < 0) {
      b[static_cast<std::size_t>(i)] = -b[static_cast<std::size_t>(i)];
      for (auto& v : a[static_cast<std::size_t>(i)]) v = -v;
    }

  // phase-1 tableau with artificial variables; minimize their sum
  // columns: [x (n), artificials (m), rhs]
  const int cols = n + m + 1;
  std::vector<std::vector<rational>> t(static_cast<std::size_t>(m + 1),
                                       std::vector<rational>(static_cast<std::size_t>(cols), 0));
  std::vector<int> basis(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
        a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    t[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + i)] = 1;
    t[static_cast<std::size_t>(i)][static_cast<std::size_t>(cols - 1)] =
        b[static_cast<std::size_t>(i)];
    basis[static_cast<std::size_t>(i)] = n + i;
  }
  // objective row: sum of artificial rows (we minimize sum of artificials)
  auto& obj = t[static_cast<std::size_t>(m)];
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < cols; ++j)
      obj[static_cast<std::size_t>(j)] += t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];

  auto pivot = [&](int prow, int pcol) {
    auto& pr = t[static_cast<std::size_t>(prow)];
    rational pv = pr[static_cast<std::size_t>(pcol)];
    for (auto& v : pr) v /= pv;
    for (int i = 0; i <= m; ++i) {
      if (i == prow) continue;
      rational f = t[static_cast<std::size_t>(i)][static_cast<std::size_t>(pcol)];
      if (f == 0) continue;
      for (int j = 0; j < cols; ++j)
        t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -=
            f * pr[static_cast<std::size_t>(j)];
    }
    basis[static_cast<std::size_t>(prow)] = pcol;
  };

  while (true) {
    // Bland: smallest index with positive reduced cost (we are maximizing the
    // negated objective, i.e. entering columns have obj coefficient > 0)
    int pcol = -1;
    for (int j = 0; j < n + m; ++j)
      if (obj[static_cast<std::size_t>(j)] > 0) {
        pcol = j;
        break;
      }
    if (pcol < 0) break;
    int prow = -1;
    rational best = 0;
    for (int i = 0; i < m; ++i) {
      const rational& col = t[static_cast<std::size_t>(i)][static_cast<std::size_t>(pcol)];
      if (col > 0) {
        rational ratio = t[static_cast<std::size_t>(i)][static_cast<std::size_t>(cols - 1)] / col;
        if (prow < 0 || ratio < best ||
            (ratio == best &&
             basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(prow)])) {
          prow = i;
          best = ratio;
        }
      }
    }
    if (prow < 0) throw LpError("phase-1 unbounded: malformed tableau");
    pivot(prow, pcol);
  }

  LpFeasibility res;
  rational objective = obj[static_cast<std::size_t>(cols - 1)];
  if (objective == 0) {
    res.feasible = true;
    res.x.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < m; ++i)
      if (basis[static_cast<std::size_t>(i)] < n)
        res.x[static_cast<std::size_t>(basis[static_cast<std::size_t>(i)])] =
            t[static_cast<std::size_t>(i)][static_cast<std::size_t>(cols - 1)];
    return res;
  }

  // Farkas certificate: the final objective row is a combination y^T of the
  // original rows [A I b]; its artificial-column entries expose y, and at
  // optimality y^T A <= 0 on the x columns while y^T b = optimum > 0.
  res.feasible = false;
  res.farkas.assign(static_cast<std::size_t>(m), 0);
  for (int i = 0; i < m; ++i)
    res.farkas[static_cast<std::size_t>(i)] = obj[static_cast<std::size_t>(n + i)];
  // verify the certificate exactly before returning it
  for (int j = 0; j < n; ++j) {
    rational dot = 0;
    for (int i = 0; i < m; ++i)
      dot += res.farkas[static_cast<std::size_t>(i)] *
             a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    if (dot > 0) throw LpError("Farkas certificate failed column check");
  }
  rational ydotb = 0;
  for (int i = 0; i < m; ++i)
    ydotb += res.farkas[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
  if (!(ydotb > 0)) throw LpError("Farkas certificate failed rhs check");
  return res;
}

// ---------------------------------------------------------------------------
// Causal distributions
// ---------------------------------------------------------------------------

struct BipartiteDistribution {
  int nx = 2, ny = 2, na = 2, nb = 2;
  std::vector<rational> p;  // p[((x*ny + y)*na + a)*nb + b]

  rational& at(int x, int y, int a, int b) {
    return p[static_cast<std::size_t>(((x * ny + y) * na + a) * nb + b)];
  }
  const rational& at(int x, int y, int a, int b) const {
    return p[static_cast<std::size_t>(((x * ny + y) * na + a) * nb + b)];
  }

  void validate_normalized() const {
    for (int a = 0; a < na; ++a)
      for (int b = 0; b < nb; ++b) {
        rational s = 0;
        for (int x = 0; x < nx; ++x)
          for (int y = 0; y < ny; ++y) s += at(x, y, a, b);
        if (s != 1) throw LpError("distribution is not normalized at context (" +
                                  std::to_string(a) + "," + std::to_string(b) + ")");
      }
  }
};

struct CausalDecomposition {
  rational q;                      // weight of the A-before-B component
  std::vector<rational> p_ab;      // q * P^{A<B}, same layout as the input
  std::vector<rational> p_ba;      // (1-q) * P^{B<A}
};

struct CausalDistributionResult {
  bool causal = false;
  std::optional<CausalDecomposition> decomposition;
  std::vector<rational> farkas;  // infeasibility certificate when not causal
};

// Linear feasibility for P = q P^{A<B} + (1-q) P^{B<A}: variables are the
// subnormalized components Q1 = q P^{A<B} and Q2, with the one-way
// no-signalling equalities and constant total mass per context.
inline CausalDistributionResult is_causal_distribution(const BipartiteDistribution& d) {
  d.validate_normalized();
  const int nx = d.nx, ny = d.ny, na = d.na, nb = d.nb;
  const int block = nx * ny * na * nb;
  const int nvars = 2 * block;
  auto q1 = [&](int x, int y, int a, int b) { return ((x * ny + y) * na + a) * nb + b; };
  auto q2 = [&](int x, int y, int a, int b) { return block + q1(x, y, a, b); };

  std::vector<std::vector<rational>> rows;
  std::vector<rational> rhs;
  auto new_row = [&]() -> std::vector<rational>& {
    rows.emplace_back(static_cast<std::size_t>(nvars), 0);
    rhs.emplace_back(0);
    return rows.back();
  };

  // Q1 + Q2 = P
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int a = 0; a < na; ++a)
        for (int b = 0; b < nb; ++b) {
          auto& r = new_row();
          r[static_cast<std::size_t>(q1(x, y, a, b))] = 1;
          r[static_cast<std::size_t>(q2(x, y, a, b))] = 1;
          rhs.back() = d.at(x, y, a, b);
        }
  // Q1: marginal of x independent of b  (A before B)
  for (int x = 0; x < nx; ++x)
    for (int a = 0; a < na; ++a)
      for (int b = 1; b < nb; ++b) {
        auto& r = new_row();
        for (int y = 0; y < ny; ++y) {
          r[static_cast<std::size_t>(q1(x, y, a, b))] += 1;
          r[static_cast<std::size_t>(q1(x, y, a, 0))] -= 1;
        }
      }
  // Q2: marginal of y independent of a  (B before A)
  for (int y = 0; y < ny; ++y)
    for (int b = 0; b < nb; ++b)
      for (int a = 1; a < na; ++a) {
        auto& r = new_row();
        for (int x = 0; x < nx; ++x) {
          r[static_cast<std::size_t>(q2(x, y, a, b))] += 1;
          r[static_cast<std::size_t>(q2(x, y, 0, b))] -= 1;
        }
      }
  // total mass of Q1 equal across contexts (it must be the constant q)
  for (int a = 0; a < na; ++a)
    for (int b = 0; b < nb; ++b) {
      if (a == 0 && b == 0) continue;
      auto& r = new_row();
      for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) {
          r[static_cast<std::size_t>(q1(x, y, a, b))] += 1;
          r[static_cast<std::size_t>(q1(x, y, 0, 0))] -= 1;
        }
    }

  auto lp = solve_feasibility(std::move(rows), std::move(rhs));
  CausalDistributionResult res;
  res.causal = lp.feasible;
  if (lp.feasible) {
    CausalDecomposition dec;
    dec.p_ab.assign(static_cast<std::size_t>(block), 0);
    dec.p_ba.assign(static_cast<std::size_t>(block), 0);
    rational q = 0;
    for (int i = 0; i < block; ++i) {
      dec.p_ab[static_cast<std::size_t>(i)] = lp.x[static_cast<std::size_t>(i)];
      dec.p_ba[static_cast<std::size_t>(i)] = lp.x[static_cast<std::size_t>(block + i)];
    }
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) q += dec.p_ab[static_cast<std::size_t>(q1(x, y, 0, 0))];
    dec.q = q;
    res.decomposition = std::move(dec);
  } else {
    res.farkas = std::move(lp.farkas);
  }
  return res;
}

inline BipartiteDistribution distribution_from_doubles(const std::vector<double>& values, int nx,
                                                       int ny, int na, int nb,
                                                       long denominator = 1000000000L) {
  BipartiteDistribution d;
  d.nx = nx;
  d.ny = ny;
  d.na = na;
  d.nb = nb;
  d.p.resize(static_cast<std::size_t>(nx * ny * na * nb));
  for (std::size_t k = 0; k < d.p.size(); ++k) {
    long num = std::lround(values[k] * static_cast<double>(denominator));
    d.p[k] = rational(num, denominator);
  }
  // repair rounding so every context sums to one exactly
  for (int a = 0; a < na; ++a)
    for (int b = 0; b < nb; ++b) {
      rational s = 0;
      for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) s += d.at(x, y, a, b);
      rational gap = rational(1) - s;
      d.at(0, 0, a, b) += gap;
    }
  return d;
}

}  // namespace causalflow
