#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace pars {

enum class SdpStatus { Feasible, Infeasible, Indeterminate };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::Feasible: return "Feasible";
    case SdpStatus::Infeasible: return "Infeasible";
    case SdpStatus::Indeterminate: return "Indeterminate";
  }
  return "Indeterminate";
}

/// Equality-constrained semidefinite program over a block-diagonal matrix
/// variable and a vector of free scalars:
///
///   minimize    sum_k <C_k, X_k> + c_f' f
///   subject to  sum_k <A_{i,k}, X_k> + F_i f = b_i   (i = 1..m)
///               X_k >= 0 (symmetric PSD), f free.
///
/// Scalar variables are indexed in a packed layout: for each PSD block the
/// upper-triangle entries (i <= j) in row-major order, then the free scalars.
/// A coefficient on a packed off-diagonal entry (i, j) multiplies the value
/// X(i, j) of that entry (which equals its mirror X(j, i)).
struct SdpProblem {
  struct Term {
    int var = 0;
    double coeff = 0.0;
  };
  struct Row {
    std::vector<Term> terms;
    double rhs = 0.0;
  };

  std::vector<int> psd_blocks;
  int free_count = 0;
  std::vector<Row> equalities;
  std::vector<Term> objective;

  int matrix_var_count() const {
    int n = 0;
    for (int s : psd_blocks) n += s * (s + 1) / 2;
    return n;
  }

  int var_count() const { return matrix_var_count() + free_count; }

  int block_offset(int block) const {
    int off = 0;
    for (int k = 0; k < block; ++k) off += psd_blocks[k] * (psd_blocks[k] + 1) / 2;
    return off;
  }

  /// Packed index of entry (i, j), i <= j, of a PSD block.
  int entry_index(int block, int i, int j) const {
    const int n = psd_blocks.at(static_cast<std::size_t>(block));
    if (i < 0 || j < i || j >= n) throw std::invalid_argument("SdpProblem: bad entry index");
    return block_offset(block) + i * n - i * (i - 1) / 2 + (j - i);
  }

  int free_index(int s) const {
    if (s < 0 || s >= free_count) throw std::invalid_argument("SdpProblem: bad free index");
    return matrix_var_count() + s;
  }

  void validate() const {
    for (int s : psd_blocks) {
      if (s <= 0) throw std::invalid_argument("SdpProblem: block side must be positive");
    }
    if (free_count < 0) throw std::invalid_argument("SdpProblem: negative free count");
    const int nv = var_count();
    auto check_terms = [nv](const std::vector<Term>& terms, const char* where) {
      for (const Term& t : terms) {
        if (t.var < 0 || t.var >= nv) {
          throw std::invalid_argument(std::string("SdpProblem: variable index out of range in ") +
                                      where);
        }
        if (!std::isfinite(t.coeff)) {
          throw std::invalid_argument(std::string("SdpProblem: non-finite coefficient in ") +
                                      where);
        }
      }
    };
    for (const Row& r : equalities) {
      check_terms(r.terms, "equality row");
      if (!std::isfinite(r.rhs)) throw std::invalid_argument("SdpProblem: non-finite rhs");
    }
    check_terms(objective, "objective");
  }
};

/// Farkas-type certificate of primal infeasibility: a dual ray y with
/// b'y > 0 whose matrix combination sum_i y_i A_i is negative semidefinite
/// and whose free-variable combination vanishes.
struct SdpCertificate {
  Eigen::VectorXd y;
  double b_dot_y = 0.0;
  double max_block_eigenvalue = 0.0;
  double max_free_residual = 0.0;
};

struct SdpSolution {
  SdpStatus status = SdpStatus::Indeterminate;
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::VectorXd free_values;
  Eigen::VectorXd dual;
  double objective = 0.0;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string message;
  std::optional<SdpCertificate> certificate;
};

struct SdpOptions {
  double feas_tol = 1e-8;
  double gap_tol = 1e-8;
  int max_iterations = 200;
  bool parallel_blocks = false;
  /// 0 silent, 1 keeps the last iteration line in the solution message,
  /// 2 additionally streams per-iteration lines to stderr.
  int verbosity = 0;
};

/// Independent feasibility/optimality figures for a candidate solution,
/// recomputed from the original problem data.
struct ResidualReport {
  double max_equality_violation = 0.0;
  double min_block_eigenvalue = 0.0;
  double objective = 0.0;
  double dual_objective = 0.0;
  double min_dual_slack_eigenvalue = 0.0;
  double max_free_stationarity = 0.0;
  double duality_gap = 0.0;
  bool has_dual = false;

  bool primal_feasible(double eq_tol = 1e-7, double psd_tol = 1e-8) const {
    return max_equality_violation <= eq_tol && min_block_eigenvalue >= -psd_tol;
  }
};

namespace detail {

struct BlockConstraintEntry {
  int r = 0;
  int c = 0;
  double v = 0.0;
};

// Constraint data for one PSD block: for every equality row, the sparse
// upper-triangle entries that touch this block.
struct BlockRows {
  std::vector<std::vector<BlockConstraintEntry>> rows;
};

inline Eigen::MatrixXd symmetric_from_entries(int n,
                                              const std::vector<BlockConstraintEntry>& entries) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : entries) {
    if (e.r == e.c) {
      A(e.r, e.r) += e.v;
    } else {
      A(e.r, e.c) += 0.5 * e.v;
      A(e.c, e.r) += 0.5 * e.v;
    }
  }
  return A;
}

// <A, S> for sparse A given by packed-entry coefficients and symmetric S.
inline double sparse_dot(const std::vector<BlockConstraintEntry>& entries,
                         const Eigen::MatrixXd& S) {
  double v = 0.0;
  for (const auto& e : entries) v += e.v * S(e.r, e.c);
  return v;
}

inline void svec_into(const Eigen::MatrixXd& S, double* out) {
  static const double kSqrt2 = std::sqrt(2.0);
  const int n = static_cast<int>(S.rows());
  int idx = 0;
  for (int i = 0; i < n; ++i) {
    out[idx++] = S(i, i);
    for (int j = i + 1; j < n; ++j) out[idx++] = kSqrt2 * S(i, j);
  }
}

// Cholesky factor with an eigenvalue-floor retry for matrices that lost
// positive definiteness to rounding.
inline bool robust_cholesky(const Eigen::MatrixXd& S, Eigen::MatrixXd& L) {
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() == Eigen::Success) {
    L = llt.matrixL();
    return true;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success) return false;
  const double floor = 1e-14 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd repaired =
      es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  Eigen::LLT<Eigen::MatrixXd> llt2(repaired);
  if (llt2.info() != Eigen::Success) return false;
  L = llt2.matrixL();
  return true;
}

// Largest step alpha in [0, cap] keeping S + alpha * dS positive
// semidefinite, where S is positive definite.
inline double psd_step_length(const Eigen::MatrixXd& S, const Eigen::MatrixXd& dS, double cap) {
  if (S.rows() == 0) return cap;
  Eigen::MatrixXd L;
  if (!robust_cholesky(S, L)) return 0.0;
  Eigen::MatrixXd M = L.triangularView<Eigen::Lower>().solve(dS);
  M = L.triangularView<Eigen::Lower>().solve(M.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin >= 0.0) return cap;
  return std::min(cap, -1.0 / lmin);
}

}  // namespace detail

inline ResidualReport check_solution(const SdpProblem& prob, const SdpSolution& sol) {
  prob.validate();
  const int nb = static_cast<int>(prob.psd_blocks.size());
  if (static_cast<int>(sol.blocks.size()) != nb) {
    throw std::invalid_argument("check_solution: block count mismatch");
  }
  if (static_cast<int>(sol.free_values.size()) != prob.free_count) {
    throw std::invalid_argument("check_solution: free variable count mismatch");
  }

  // Flatten the candidate into the packed scalar layout.
  Eigen::VectorXd x(prob.var_count());
  {
    int idx = 0;
    for (int k = 0; k < nb; ++k) {
      const int n = prob.psd_blocks[static_cast<std::size_t>(k)];
      if (sol.blocks[static_cast<std::size_t>(k)].rows() != n ||
          sol.blocks[static_cast<std::size_t>(k)].cols() != n) {
        throw std::invalid_argument("check_solution: block size mismatch");
      }
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) x(idx++) = sol.blocks[static_cast<std::size_t>(k)](i, j);
      }
    }
    for (int s = 0; s < prob.free_count; ++s) x(idx++) = sol.free_values(s);
  }

  ResidualReport rep;
  for (const auto& row : prob.equalities) {
    double v = -row.rhs;
    for (const auto& t : row.terms) v += t.coeff * x(t.var);
    rep.max_equality_violation = std::max(rep.max_equality_violation, std::abs(v));
  }

  rep.min_block_eigenvalue = 0.0;
  for (int k = 0; k < nb; ++k) {
    const auto& B = sol.blocks[static_cast<std::size_t>(k)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (B + B.transpose()),
                                                      Eigen::EigenvaluesOnly);
    rep.min_block_eigenvalue = std::min(rep.min_block_eigenvalue, es.eigenvalues().minCoeff());
  }

  for (const auto& t : prob.objective) rep.objective += t.coeff * x(t.var);

  if (sol.dual.size() == static_cast<Eigen::Index>(prob.equalities.size()) &&
      sol.dual.size() > 0) {
    rep.has_dual = true;
    // Dual slack per block: C_k - sum_i y_i A_{i,k}.
    const int mvars = prob.matrix_var_count();
    Eigen::VectorXd combo = Eigen::VectorXd::Zero(prob.var_count());
    for (const auto& t : prob.objective) combo(t.var) += t.coeff;
    for (std::size_t i = 0; i < prob.equalities.size(); ++i) {
      for (const auto& t : prob.equalities[i].terms) {
        combo(t.var) -= sol.dual(static_cast<Eigen::Index>(i)) * t.coeff;
      }
    }
    rep.min_dual_slack_eigenvalue = std::numeric_limits<double>::infinity();
    int idx = 0;
    for (int k = 0; k < nb; ++k) {
      const int n = prob.psd_blocks[static_cast<std::size_t>(k)];
      std::vector<detail::BlockConstraintEntry> entries;
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
          entries.push_back({i, j, combo(idx++)});
        }
      }
      Eigen::MatrixXd S = detail::symmetric_from_entries(n, entries);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
      rep.min_dual_slack_eigenvalue =
          std::min(rep.min_dual_slack_eigenvalue, es.eigenvalues().minCoeff());
    }
    if (nb == 0) rep.min_dual_slack_eigenvalue = 0.0;
    for (int s = 0; s < prob.free_count; ++s) {
      rep.max_free_stationarity = std::max(rep.max_free_stationarity, std::abs(combo(mvars + s)));
    }
    for (std::size_t i = 0; i < prob.equalities.size(); ++i) {
      rep.dual_objective += sol.dual(static_cast<Eigen::Index>(i)) * prob.equalities[i].rhs;
    }
    rep.duality_gap = std::abs(rep.objective - rep.dual_objective);
  }
  return rep;
}

namespace detail {

struct ScaledData {
  // Canonicalized, row-scaled problem data.
  std::vector<int> sides;
  int nf = 0;
  int m = 0;
  Eigen::VectorXd b;
  Eigen::MatrixXd F;        // m x nf
  Eigen::VectorXd cf;       // nf
  std::vector<Eigen::MatrixXd> C;
  std::vector<BlockRows> block_rows;    // per block, per row
  std::vector<int> kept_rows;           // map solver row -> original row
  Eigen::VectorXd row_scale;            // per solver row
  double obj_scale = 1.0;
  std::vector<int> fixed_free;          // free columns absent from all data; pinned to zero
};

inline bool build_scaled_data(const SdpProblem& prob, double feas_tol, ScaledData& data,
                              SdpSolution& early) {
  const int nb = static_cast<int>(prob.psd_blocks.size());
  const int mvars = prob.matrix_var_count();
  data.sides = prob.psd_blocks;
  data.nf = prob.free_count;

  // Locate the block of a packed matrix-variable index.
  std::vector<int> offsets(static_cast<std::size_t>(nb) + 1, 0);
  for (int k = 0; k < nb; ++k) {
    offsets[static_cast<std::size_t>(k) + 1] =
        offsets[static_cast<std::size_t>(k)] +
        prob.psd_blocks[static_cast<std::size_t>(k)] * (prob.psd_blocks[static_cast<std::size_t>(k)] + 1) / 2;
  }
  auto locate = [&](int var, int& block, int& r, int& c) {
    int k = static_cast<int>(std::upper_bound(offsets.begin(), offsets.end(), var) -
                             offsets.begin()) - 1;
    block = k;
    int rem = var - offsets[static_cast<std::size_t>(k)];
    const int n = prob.psd_blocks[static_cast<std::size_t>(k)];
    int i = 0;
    while (rem >= n - i) {
      rem -= n - i;
      ++i;
    }
    r = i;
    c = i + rem;
  };

  // Canonicalize rows: merge duplicate variables, drop zero rows, detect
  // trivially inconsistent rows.
  const int m_orig = static_cast<int>(prob.equalities.size());
  std::vector<std::vector<SdpProblem::Term>> canon(static_cast<std::size_t>(m_orig));
  for (int i = 0; i < m_orig; ++i) {
    auto terms = prob.equalities[static_cast<std::size_t>(i)].terms;
    std::sort(terms.begin(), terms.end(),
              [](const SdpProblem::Term& a, const SdpProblem::Term& b) { return a.var < b.var; });
    std::vector<SdpProblem::Term> merged;
    for (const auto& t : terms) {
      if (!merged.empty() && merged.back().var == t.var) {
        merged.back().coeff += t.coeff;
      } else {
        merged.push_back(t);
      }
    }
    std::erase_if(merged, [](const SdpProblem::Term& t) { return t.coeff == 0.0; });
    canon[static_cast<std::size_t>(i)] = std::move(merged);
  }

  std::vector<bool> free_used(static_cast<std::size_t>(prob.free_count), false);
  for (const auto& row : canon) {
    for (const auto& t : row) {
      if (t.var >= mvars) free_used[static_cast<std::size_t>(t.var - mvars)] = true;
    }
  }
  for (const auto& t : prob.objective) {
    if (t.var >= mvars) free_used[static_cast<std::size_t>(t.var - mvars)] = true;
  }
  for (int s = 0; s < prob.free_count; ++s) {
    if (!free_used[static_cast<std::size_t>(s)]) data.fixed_free.push_back(s);
  }

  double rhs_scale = 0.0;
  for (const auto& eq : prob.equalities) rhs_scale = std::max(rhs_scale, std::abs(eq.rhs));
  // A row with no variables is inconsistent on its own, but right-hand sides
  // within the feasibility band are solve noise in the data (a prior
  // solution fed back as a constant), not a contradiction. Dropping them
  // keeps the violation inside the advertised residual tolerance; the final
  // residual check still reports it.
  const double drop_tol = std::max(1e-12, feas_tol * (1.0 + rhs_scale));
  for (int i = 0; i < m_orig; ++i) {
    double max_abs = 0.0;
    for (const auto& t : canon[static_cast<std::size_t>(i)]) {
      max_abs = std::max(max_abs, std::abs(t.coeff));
    }
    const double rhs = prob.equalities[static_cast<std::size_t>(i)].rhs;
    if (max_abs == 0.0) {
      if (std::abs(rhs) > drop_tol) {
        SdpCertificate cert;
        cert.y = Eigen::VectorXd::Zero(m_orig);
        cert.y(i) = rhs > 0.0 ? 1.0 : -1.0;
        cert.b_dot_y = std::abs(rhs);
        early.status = SdpStatus::Infeasible;
        early.certificate = cert;
        early.message = "equality row " + std::to_string(i) +
                        " has zero coefficients and nonzero right-hand side";
        return false;
      }
      continue;
    }
    data.kept_rows.push_back(i);
  }

  data.m = static_cast<int>(data.kept_rows.size());
  data.b.resize(data.m);
  data.row_scale.resize(data.m);
  data.F = Eigen::MatrixXd::Zero(data.m, data.nf);
  data.block_rows.assign(static_cast<std::size_t>(nb), BlockRows{});
  for (int k = 0; k < nb; ++k) {
    data.block_rows[static_cast<std::size_t>(k)].rows.assign(static_cast<std::size_t>(data.m),
                                                             {});
  }

  for (int ii = 0; ii < data.m; ++ii) {
    const int i = data.kept_rows[static_cast<std::size_t>(ii)];
    double max_abs = 0.0;
    for (const auto& t : canon[static_cast<std::size_t>(i)]) {
      max_abs = std::max(max_abs, std::abs(t.coeff));
    }
    data.row_scale(ii) = max_abs;
    data.b(ii) = prob.equalities[static_cast<std::size_t>(i)].rhs / max_abs;
    for (const auto& t : canon[static_cast<std::size_t>(i)]) {
      const double v = t.coeff / max_abs;
      if (t.var >= mvars) {
        data.F(ii, t.var - mvars) = v;
      } else {
        int k, r, c;
        locate(t.var, k, r, c);
        data.block_rows[static_cast<std::size_t>(k)].rows[static_cast<std::size_t>(ii)].push_back(
            {r, c, v});
      }
    }
  }

  // Objective, scaled to unit magnitude.
  data.C.resize(static_cast<std::size_t>(nb));
  for (int k = 0; k < nb; ++k) {
    data.C[static_cast<std::size_t>(k)] =
        Eigen::MatrixXd::Zero(prob.psd_blocks[static_cast<std::size_t>(k)],
                              prob.psd_blocks[static_cast<std::size_t>(k)]);
  }
  data.cf = Eigen::VectorXd::Zero(data.nf);
  double cmax = 0.0;
  for (const auto& t : prob.objective) cmax = std::max(cmax, std::abs(t.coeff));
  data.obj_scale = std::max(1.0, cmax);
  for (const auto& t : prob.objective) {
    const double v = t.coeff / data.obj_scale;
    if (t.var >= mvars) {
      data.cf(t.var - mvars) += v;
    } else {
      int k, r, c;
      locate(t.var, k, r, c);
      auto& Ck = data.C[static_cast<std::size_t>(k)];
      if (r == c) {
        Ck(r, c) += v;
      } else {
        Ck(r, c) += 0.5 * v;
        Ck(c, r) += 0.5 * v;
      }
    }
  }
  return true;
}

// Workspace for one interior-point iteration; everything indexed per block.
struct NtScaling {
  std::vector<Eigen::MatrixXd> R;
  std::vector<Eigen::MatrixXd> Rinv;
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> lambda;
  bool ok = false;
};

inline void compute_nt_block(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                             Eigen::MatrixXd& R, Eigen::MatrixXd& Rinv, Eigen::MatrixXd& W,
                             Eigen::VectorXd& lambda, bool& ok) {
  Eigen::MatrixXd Lx, Lz;
  if (!robust_cholesky(X, Lx) || !robust_cholesky(Z, Lz)) {
    ok = false;
    return;
  }
  Eigen::MatrixXd M = Lz.transpose() * Lx;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  lambda = svd.singularValues();
  if (lambda.minCoeff() <= 0.0) {
    ok = false;
    return;
  }
  Eigen::VectorXd inv_sqrt = lambda.cwiseSqrt().cwiseInverse();
  R = Lx * svd.matrixV() * inv_sqrt.asDiagonal();
  Rinv = inv_sqrt.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
  W = R * R.transpose();
  ok = true;
}

}  // namespace detail

/// Interior-point solve via the homogeneous self-dual embedding with
/// Nesterov-Todd scaling and a Mehrotra predictor-corrector step.
///
/// The solver never fabricates an answer: Feasible is returned only when the
/// extracted solution passes the feasibility tolerances, Infeasible only with
/// a verified certificate, and everything else is Indeterminate with a
/// diagnostic message.
inline SdpSolution solve(const SdpProblem& prob, const SdpOptions& opts = {}) {
  prob.validate();

  SdpSolution sol;
  detail::ScaledData data;
  if (!detail::build_scaled_data(prob, opts.feas_tol, data, sol)) {
    sol.blocks.clear();
    for (int s : prob.psd_blocks) sol.blocks.push_back(Eigen::MatrixXd::Zero(s, s));
    sol.free_values = Eigen::VectorXd::Zero(prob.free_count);
    sol.dual = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.equalities.size()));
    if (sol.certificate) sol.dual = sol.certificate->y;
    return sol;
  }

  const int nb = static_cast<int>(data.sides.size());
  const int m = data.m;
  const int nf = data.nf;
  const int kkt_dim = m + nf + 1;

  std::vector<int> svec_dim(static_cast<std::size_t>(nb));
  int nu = 0;
  for (int k = 0; k < nb; ++k) {
    svec_dim[static_cast<std::size_t>(k)] =
        data.sides[static_cast<std::size_t>(k)] * (data.sides[static_cast<std::size_t>(k)] + 1) / 2;
    nu += data.sides[static_cast<std::size_t>(k)];
  }

  // Iterates.
  std::vector<Eigen::MatrixXd> X, Z;
  for (int k = 0; k < nb; ++k) {
    X.push_back(Eigen::MatrixXd::Identity(data.sides[static_cast<std::size_t>(k)],
                                          data.sides[static_cast<std::size_t>(k)]));
    Z.push_back(X.back());
  }
  Eigen::VectorXd f = Eigen::VectorXd::Zero(nf);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  double tau = 1.0, kappa = 1.0;

  const double bnorm = m > 0 ? data.b.cwiseAbs().maxCoeff() : 0.0;
  double cnorm = data.cf.size() > 0 ? data.cf.cwiseAbs().maxCoeff() : 0.0;
  for (int k = 0; k < nb; ++k) {
    if (data.sides[static_cast<std::size_t>(k)] > 0) {
      cnorm = std::max(cnorm, data.C[static_cast<std::size_t>(k)].cwiseAbs().maxCoeff());
    }
  }

  auto apply_adjoint = [&](const Eigen::VectorXd& v, int k) {
    // sum_i v_i A_{i,k} as a dense symmetric matrix.
    const int n = data.sides[static_cast<std::size_t>(k)];
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    const auto& rows = data.block_rows[static_cast<std::size_t>(k)].rows;
    for (int i = 0; i < m; ++i) {
      const double vi = v(i);
      if (vi == 0.0) continue;
      for (const auto& e : rows[static_cast<std::size_t>(i)]) {
        if (e.r == e.c) {
          S(e.r, e.r) += vi * e.v;
        } else {
          S(e.r, e.c) += 0.5 * vi * e.v;
          S(e.c, e.r) += 0.5 * vi * e.v;
        }
      }
    }
    return S;
  };

  auto apply_forward = [&](const std::vector<Eigen::MatrixXd>& Xs) {
    // (<A_{i,k}, X_k>)_i summed over blocks.
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < nb; ++k) {
      const auto& rows = data.block_rows[static_cast<std::size_t>(k)].rows;
      for (int i = 0; i < m; ++i) {
        const auto& ents = rows[static_cast<std::size_t>(i)];
        if (!ents.empty()) out(i) += detail::sparse_dot(ents, Xs[static_cast<std::size_t>(k)]);
      }
    }
    return out;
  };

  auto inner_c = [&](const std::vector<Eigen::MatrixXd>& Xs) {
    double v = 0.0;
    for (int k = 0; k < nb; ++k) {
      v += (data.C[static_cast<std::size_t>(k)].array() * Xs[static_cast<std::size_t>(k)].array())
               .sum();
    }
    return v;
  };

  auto finalize_feasible = [&](const char* ok_msg, const char* path) {
    sol.blocks.clear();
    for (int k = 0; k < nb; ++k) sol.blocks.push_back(X[static_cast<std::size_t>(k)] / tau);
    sol.free_values = f / tau;
    sol.dual = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.equalities.size()));
    for (int ii = 0; ii < m; ++ii) {
      sol.dual(data.kept_rows[static_cast<std::size_t>(ii)]) =
          data.obj_scale * y(ii) / (tau * data.row_scale(ii));
    }
    for (int s : data.fixed_free) sol.free_values(s) = 0.0;
    ResidualReport rep = check_solution(prob, sol);
    sol.objective = rep.objective;
    sol.primal_residual = rep.max_equality_violation;
    sol.dual_residual = std::max(-rep.min_dual_slack_eigenvalue, rep.max_free_stationarity);
    sol.gap = rep.duality_gap;
    // Honest status: only claim feasibility if the independent check agrees.
    const double eq_tol = std::max(1e-7, 10.0 * opts.feas_tol * (1.0 + std::abs(bnorm)));
    if (rep.max_equality_violation <= eq_tol && rep.min_block_eigenvalue >= -1e-8) {
      sol.status = SdpStatus::Feasible;
      sol.message = ok_msg;
      return true;
    }
    sol.status = SdpStatus::Indeterminate;
    std::ostringstream os;
    os << path << " (equality " << rep.max_equality_violation << ", min eigenvalue "
       << rep.min_block_eigenvalue << ")";
    sol.message = os.str();
    return false;
  };

  auto try_certificate = [&]() -> bool {
    // Normalize the dual ray so b'y = 1, then verify the Farkas conditions.
    const double bty = m > 0 ? data.b.dot(y) : 0.0;
    if (bty <= 0.0) return false;
    Eigen::VectorXd yr = y / bty;
    double max_eig = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < nb; ++k) {
      Eigen::MatrixXd S = apply_adjoint(yr, k);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
      max_eig = std::max(max_eig, es.eigenvalues().maxCoeff());
    }
    if (nb == 0) max_eig = 0.0;
    double free_res = nf > 0 ? (data.F.transpose() * yr).cwiseAbs().maxCoeff() : 0.0;
    if (max_eig > 1e-7 || free_res > 1e-7) return false;
    SdpCertificate cert;
    cert.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.equalities.size()));
    for (int ii = 0; ii < m; ++ii) {
      cert.y(data.kept_rows[static_cast<std::size_t>(ii)]) =
          yr(ii) / data.row_scale(ii);
    }
    double bty_orig = 0.0;
    for (std::size_t i = 0; i < prob.equalities.size(); ++i) {
      bty_orig += cert.y(static_cast<Eigen::Index>(i)) * prob.equalities[i].rhs;
    }
    cert.b_dot_y = bty_orig;
    cert.max_block_eigenvalue = max_eig;
    cert.max_free_residual = free_res;
    if (bty_orig <= 0.0) return false;
    sol.status = SdpStatus::Infeasible;
    sol.certificate = cert;
    sol.dual = cert.y;
    sol.blocks.clear();
    for (int s : prob.psd_blocks) sol.blocks.push_back(Eigen::MatrixXd::Zero(s, s));
    sol.free_values = Eigen::VectorXd::Zero(prob.free_count);
    sol.message = "Farkas certificate verified";
    return true;
  };

  double mu = 1.0;
  int consecutive_short_steps = 0;

  detail::NtScaling nt;
  nt.R.resize(static_cast<std::size_t>(nb));
  nt.Rinv.resize(static_cast<std::size_t>(nb));
  nt.W.resize(static_cast<std::size_t>(nb));
  nt.lambda.resize(static_cast<std::size_t>(nb));

  std::vector<Eigen::MatrixXd> Mk(static_cast<std::size_t>(nb));

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    sol.iterations = iter;

    // Residuals of the self-dual system.
    Eigen::VectorXd rp = data.b * tau - apply_forward(X);
    if (nf > 0) rp -= data.F * f;
    std::vector<Eigen::MatrixXd> Rd(static_cast<std::size_t>(nb));
    for (int k = 0; k < nb; ++k) {
      Rd[static_cast<std::size_t>(k)] = data.C[static_cast<std::size_t>(k)] * tau -
                                        apply_adjoint(y, k) - Z[static_cast<std::size_t>(k)];
    }
    Eigen::VectorXd rf = data.cf * tau;
    if (nf > 0) rf -= data.F.transpose() * y;
    const double cx = inner_c(X) + data.cf.dot(f);
    const double by = m > 0 ? data.b.dot(y) : 0.0;
    const double rg = kappa + cx - by;

    double xz = tau * kappa;
    for (int k = 0; k < nb; ++k) {
      xz += (X[static_cast<std::size_t>(k)].array() * Z[static_cast<std::size_t>(k)].array())
                .sum();
    }
    mu = xz / (static_cast<double>(nu) + 1.0);

    // Convergence of the de-homogenized iterate.
    const double pobj = cx / tau;
    const double dobj = by / tau;
    const double p_res = m > 0 ? (rp / tau).cwiseAbs().maxCoeff() / (1.0 + bnorm) : 0.0;
    double d_res = nf > 0 ? (rf / tau).cwiseAbs().maxCoeff() / (1.0 + cnorm) : 0.0;
    for (int k = 0; k < nb; ++k) {
      if (data.sides[static_cast<std::size_t>(k)] > 0) {
        d_res = std::max(d_res, (Rd[static_cast<std::size_t>(k)] / tau).cwiseAbs().maxCoeff() /
                                    (1.0 + cnorm));
      }
    }
    const double gap_rel = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    const double comp_rel = (xz / (tau * tau)) / (1.0 + std::abs(pobj) + std::abs(dobj));

    if (opts.verbosity > 0) {
      std::ostringstream os;
      os << "iter " << iter << " mu=" << mu << " p=" << p_res << " d=" << d_res
         << " gap=" << gap_rel << " tau=" << tau << " kappa=" << kappa;
      sol.message = os.str();
      if (opts.verbosity > 1) std::cerr << os.str() << "\n";
    }

    if (p_res <= opts.feas_tol && d_res <= opts.feas_tol &&
        std::min(gap_rel, comp_rel) <= opts.gap_tol) {
      finalize_feasible(
          "converged",
          "converged in scaled space but the extracted solution misses tolerances");
      return sol;
    }

    // Ray detection: the embedding pushes tau to zero on infeasible problems.
    if (tau <= 1e-9 * std::max(1.0, kappa) && mu <= 1e-9) {
      if (try_certificate()) return sol;
      sol.status = SdpStatus::Indeterminate;
      sol.message = "homogeneous model converged to a ray without a verifiable certificate "
                    "(the problem may be unbounded or weakly infeasible)";
      return sol;
    }
    if (kappa > 1e6 * tau && try_certificate()) return sol;

    // Nesterov-Todd scaling per block.
    bool scaling_ok = true;
    auto compute_block = [&](int k) {
      bool ok = true;
      detail::compute_nt_block(X[static_cast<std::size_t>(k)], Z[static_cast<std::size_t>(k)],
                               nt.R[static_cast<std::size_t>(k)],
                               nt.Rinv[static_cast<std::size_t>(k)],
                               nt.W[static_cast<std::size_t>(k)],
                               nt.lambda[static_cast<std::size_t>(k)], ok);
      return ok;
    };
    if (opts.parallel_blocks && nb > 1) {
      std::vector<unsigned char> oks(static_cast<std::size_t>(nb), 1);
      std::vector<std::thread> workers;
      for (int k = 0; k < nb; ++k) {
        workers.emplace_back([&, k] { oks[static_cast<std::size_t>(k)] = compute_block(k) ? 1 : 0; });
      }
      for (auto& w : workers) w.join();
      for (auto okv : oks) scaling_ok = scaling_ok && okv != 0;
    } else {
      for (int k = 0; k < nb; ++k) scaling_ok = scaling_ok && compute_block(k);
    }
    if (!scaling_ok) {
      sol.status = SdpStatus::Indeterminate;
      sol.message = "scaling breakdown: an iterate lost positive definiteness";
      return sol;
    }

    // Schur complement H = sum_k M_k M_k', M_k rows = svec(R' A_i R).
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
    double vcc = 0.0;
    std::vector<Eigen::MatrixXd> WCW(static_cast<std::size_t>(nb));
    for (int k = 0; k < nb; ++k) {
      const int n = data.sides[static_cast<std::size_t>(k)];
      const int s = svec_dim[static_cast<std::size_t>(k)];
      const auto& rows = data.block_rows[static_cast<std::size_t>(k)].rows;
      auto& M = Mk[static_cast<std::size_t>(k)];
      M.resize(m, s);
      M.setZero();
      const Eigen::MatrixXd& R = nt.R[static_cast<std::size_t>(k)];
      std::vector<double> buf(static_cast<std::size_t>(s));
      for (int i = 0; i < m; ++i) {
        const auto& ents = rows[static_cast<std::size_t>(i)];
        if (ents.empty()) continue;
        Eigen::MatrixXd Ai = detail::symmetric_from_entries(n, ents);
        Eigen::MatrixXd T = R.transpose() * Ai * R;
        detail::svec_into(T, buf.data());
        for (int q = 0; q < s; ++q) M(i, q) = buf[static_cast<std::size_t>(q)];
      }
      H.selfadjointView<Eigen::Lower>().rankUpdate(M, 1.0);
      WCW[static_cast<std::size_t>(k)] = nt.W[static_cast<std::size_t>(k)] *
                                         data.C[static_cast<std::size_t>(k)] *
                                         nt.W[static_cast<std::size_t>(k)];
      for (int i = 0; i < m; ++i) {
        const auto& ents = rows[static_cast<std::size_t>(i)];
        if (!ents.empty()) u(i) += detail::sparse_dot(ents, WCW[static_cast<std::size_t>(k)]);
      }
      vcc += (data.C[static_cast<std::size_t>(k)].array() *
              WCW[static_cast<std::size_t>(k)].array())
                 .sum();
    }
    H = H.selfadjointView<Eigen::Lower>();

    // Bordered KKT matrix for (dy, df, dtau).
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(kkt_dim, kkt_dim);
    K.topLeftCorner(m, m) = H;
    if (nf > 0) {
      K.block(0, m, m, nf) = data.F;
      K.block(m, 0, nf, m) = data.F.transpose();
    }
    K.block(0, m + nf, m, 1) = -(u + data.b);
    if (nf > 0) K.block(m, m + nf, nf, 1) = -data.cf;
    K.block(m + nf, 0, 1, m) = (u - data.b).transpose();
    if (nf > 0) K.block(m + nf, m, 1, nf) = data.cf.transpose();
    K(m + nf, m + nf) = -(vcc + kappa / tau);

    const double reg = 1e-12 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    Eigen::MatrixXd Kreg = K;
    for (int i = 0; i < kkt_dim; ++i) Kreg(i, i) += (i < m) ? reg : -reg;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Kreg);

    auto solve_kkt = [&](const Eigen::VectorXd& rhs) {
      Eigen::VectorXd sol_v = lu.solve(rhs);
      for (int round = 0; round < 2; ++round) {
        Eigen::VectorXd resid = rhs - K * sol_v;
        if (resid.cwiseAbs().maxCoeff() < 1e-14 * std::max(1.0, rhs.cwiseAbs().maxCoeff())) break;
        sol_v += lu.solve(resid);
      }
      return sol_v;
    };

    // One Newton solve for given centering/corrector data. Returns the full
    // direction set.
    struct Direction {
      std::vector<Eigen::MatrixXd> dX, dZ;
      Eigen::VectorXd dy, df;
      double dtau = 0.0, dkappa = 0.0;
    };
    auto newton = [&](double eta, const std::vector<Eigen::MatrixXd>& Ghat, double g_tk) {
      Direction d;
      d.dX.resize(static_cast<std::size_t>(nb));
      d.dZ.resize(static_cast<std::size_t>(nb));

      // N_k = R Ghat R' - eta W Rd W, entering dX = W A*(dy) W - WCW dtau + N.
      std::vector<Eigen::MatrixXd> N(static_cast<std::size_t>(nb));
      Eigen::VectorXd aN = Eigen::VectorXd::Zero(m);
      double cN = 0.0;
      for (int k = 0; k < nb; ++k) {
        const Eigen::MatrixXd& R = nt.R[static_cast<std::size_t>(k)];
        const Eigen::MatrixXd& W = nt.W[static_cast<std::size_t>(k)];
        N[static_cast<std::size_t>(k)] =
            R * Ghat[static_cast<std::size_t>(k)] * R.transpose() -
            eta * W * Rd[static_cast<std::size_t>(k)] * W;
        const auto& rows = data.block_rows[static_cast<std::size_t>(k)].rows;
        for (int i = 0; i < m; ++i) {
          const auto& ents = rows[static_cast<std::size_t>(i)];
          if (!ents.empty()) aN(i) += detail::sparse_dot(ents, N[static_cast<std::size_t>(k)]);
        }
        cN += (data.C[static_cast<std::size_t>(k)].array() *
               N[static_cast<std::size_t>(k)].array())
                  .sum();
      }

      Eigen::VectorXd rhs(kkt_dim);
      rhs.head(m) = eta * rp - aN;
      if (nf > 0) rhs.segment(m, nf) = eta * rf;
      rhs(m + nf) = -eta * rg - g_tk / tau - cN;

      Eigen::VectorXd step = solve_kkt(rhs);
      d.dy = step.head(m);
      d.df = nf > 0 ? step.segment(m, nf).eval() : Eigen::VectorXd();
      d.dtau = step(m + nf);
      d.dkappa = (g_tk - kappa * d.dtau) / tau;

      for (int k = 0; k < nb; ++k) {
        const Eigen::MatrixXd& W = nt.W[static_cast<std::size_t>(k)];
        Eigen::MatrixXd Sy = apply_adjoint(d.dy, k);
        d.dZ[static_cast<std::size_t>(k)] = data.C[static_cast<std::size_t>(k)] * d.dtau - Sy +
                                            eta * Rd[static_cast<std::size_t>(k)];
        d.dX[static_cast<std::size_t>(k)] =
            W * (Sy - data.C[static_cast<std::size_t>(k)] * d.dtau) * W +
            N[static_cast<std::size_t>(k)];
        // Symmetrize against rounding.
        d.dX[static_cast<std::size_t>(k)] =
            0.5 * (d.dX[static_cast<std::size_t>(k)] +
                   d.dX[static_cast<std::size_t>(k)].transpose().eval());
        d.dZ[static_cast<std::size_t>(k)] =
            0.5 * (d.dZ[static_cast<std::size_t>(k)] +
                   d.dZ[static_cast<std::size_t>(k)].transpose().eval());
      }
      return d;
    };

    auto step_length = [&](const Direction& d, double cap) {
      double alpha = cap;
      for (int k = 0; k < nb; ++k) {
        alpha = detail::psd_step_length(X[static_cast<std::size_t>(k)],
                                        d.dX[static_cast<std::size_t>(k)], alpha);
        alpha = detail::psd_step_length(Z[static_cast<std::size_t>(k)],
                                        d.dZ[static_cast<std::size_t>(k)], alpha);
      }
      if (d.dtau < 0.0) alpha = std::min(alpha, -tau / d.dtau);
      if (d.dkappa < 0.0) alpha = std::min(alpha, -kappa / d.dkappa);
      return alpha;
    };

    // Predictor: pure Newton towards the boundary (sigma = 0). In scaled
    // space the complementarity right-hand side is -Lambda.
    std::vector<Eigen::MatrixXd> Ghat(static_cast<std::size_t>(nb));
    for (int k = 0; k < nb; ++k) {
      Ghat[static_cast<std::size_t>(k)] =
          Eigen::MatrixXd((-nt.lambda[static_cast<std::size_t>(k)]).asDiagonal());
    }
    Direction aff = newton(1.0, Ghat, -tau * kappa);
    double alpha_aff = step_length(aff, 1.0);

    double mu_aff = (tau + alpha_aff * aff.dtau) * (kappa + alpha_aff * aff.dkappa);
    for (int k = 0; k < nb; ++k) {
      mu_aff += ((X[static_cast<std::size_t>(k)] + alpha_aff * aff.dX[static_cast<std::size_t>(k)])
                     .array() *
                 (Z[static_cast<std::size_t>(k)] + alpha_aff * aff.dZ[static_cast<std::size_t>(k)])
                     .array())
                    .sum();
    }
    mu_aff /= (static_cast<double>(nu) + 1.0);
    double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3.0);
    sigma = std::clamp(sigma, 1e-8, 1.0 - 1e-8);

    // Corrector with Mehrotra second-order term in scaled space.
    for (int k = 0; k < nb; ++k) {
      const Eigen::MatrixXd& Rm = nt.R[static_cast<std::size_t>(k)];
      const Eigen::MatrixXd& Rinv = nt.Rinv[static_cast<std::size_t>(k)];
      const Eigen::VectorXd& lam = nt.lambda[static_cast<std::size_t>(k)];
      const int n = data.sides[static_cast<std::size_t>(k)];
      Eigen::MatrixXd dxb = Rinv * aff.dX[static_cast<std::size_t>(k)] * Rinv.transpose();
      Eigen::MatrixXd dzb = Rm.transpose() * aff.dZ[static_cast<std::size_t>(k)] * Rm;
      Eigen::MatrixXd cross = 0.5 * (dxb * dzb + dzb * dxb);
      Eigen::MatrixXd G = -cross;
      for (int i = 0; i < n; ++i) G(i, i) += sigma * mu - lam(i) * lam(i);
      Eigen::MatrixXd& Gh = Ghat[static_cast<std::size_t>(k)];
      Gh.resize(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) Gh(i, j) = 2.0 * G(i, j) / (lam(i) + lam(j));
      }
    }
    const double g_tk = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
    Direction dir = newton(1.0 - sigma, Ghat, g_tk);
    double alpha = 0.98 * step_length(dir, 1.0 / 0.98);
    alpha = std::min(alpha, 1.0);

    if (alpha < 1e-3) {
      ++consecutive_short_steps;
    } else {
      consecutive_short_steps = 0;
    }
    if (opts.verbosity > 1) {
      std::cerr << "       alpha=" << alpha << " sigma=" << sigma << " alpha_aff=" << alpha_aff
                << "\n";
    }

    for (int k = 0; k < nb; ++k) {
      X[static_cast<std::size_t>(k)] += alpha * dir.dX[static_cast<std::size_t>(k)];
      Z[static_cast<std::size_t>(k)] += alpha * dir.dZ[static_cast<std::size_t>(k)];
      X[static_cast<std::size_t>(k)] =
          0.5 * (X[static_cast<std::size_t>(k)] + X[static_cast<std::size_t>(k)].transpose().eval());
      Z[static_cast<std::size_t>(k)] =
          0.5 * (Z[static_cast<std::size_t>(k)] + Z[static_cast<std::size_t>(k)].transpose().eval());
    }
    if (nf > 0) f += alpha * dir.df;
    y += alpha * dir.dy;
    tau += alpha * dir.dtau;
    kappa += alpha * dir.dkappa;

    if (consecutive_short_steps >= 3) {
      if (try_certificate()) return sol;
      sol.iterations = iter + 1;
      // Collapsed steps usually mean the iterate sits at the precision floor
      // for this data; the de-homogenized point is often acceptable anyway.
      if (tau > 1e-6 * std::max(1.0, kappa)) {
        finalize_feasible("stopped at the attainable precision floor; "
                          "solution passes independent feasibility checks",
                          "stalled: step lengths collapsed before reaching tolerances");
        return sol;
      }
      sol.status = SdpStatus::Indeterminate;
      sol.message = "stalled: step lengths collapsed before reaching tolerances";
      return sol;
    }
  }

  if (try_certificate()) return sol;
  sol.iterations = opts.max_iterations;
  if (tau > 1e-6 * std::max(1.0, kappa)) {
    finalize_feasible("stopped at the iteration cap; "
                      "solution passes independent feasibility checks",
                      "iteration cap reached before convergence");
    return sol;
  }
  sol.status = SdpStatus::Indeterminate;
  sol.message = "iteration cap reached before convergence";
  return sol;
}

}  // namespace pars
