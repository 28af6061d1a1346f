#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pars/linexpr.hpp"
#include "pars/monomial.hpp"
#include "pars/polynomial.hpp"
#include "pars/polynomial_matrix.hpp"
#include "pars/sdp.hpp"

namespace pars {

/// Handle for a symmetric matrix polynomial X(a) constrained to be a sum of
/// squares: X(a) = (m(a) (x) I_n)^T Q (m(a) (x) I_n) with Q >= 0. The Gram
/// basis m(a) holds every monomial of degree <= ceil(degree/2) in the first
/// `basis_vars` parameters; Gram row u*n+i pairs basis monomial u with matrix
/// row i.
struct SosMatrixVar {
  const void* owner = nullptr;
  int group = -1;
  int size = 0;
  std::vector<Monomial> basis;
  int gram_block = -1;
  int id_start = 0;
};

/// Handle for an unconstrained matrix polynomial: one free scalar per
/// (basis monomial, row, col), basis of all monomials of degree <= degree in
/// the first `basis_vars` parameters.
struct FreePolyMatrixVar {
  const void* owner = nullptr;
  int group = -1;
  int rows = 0;
  int cols = 0;
  std::vector<Monomial> basis;
  int id_start = 0;
  int free_base = 0;
};

/// Result of compiling a program: the equality-form SDP plus the bookkeeping
/// needed to report objective values in the caller's units.
struct SosCompilation {
  SdpProblem problem;
  double objective_offset = 0.0;
  int equality_count = 0;
};

/// Assembles matrix-polynomial identities over SOS and free decision
/// variables into a block SDP by matching coefficients monomial by monomial.
class SosProgram {
 public:
  explicit SosProgram(int num_vars) : num_vars_(num_vars) {
    if (num_vars < 0) throw std::invalid_argument("SosProgram: negative parameter count");
    groups_ = std::make_shared<VarGroups>();
  }

  int num_vars() const { return num_vars_; }

  /// `basis_vars` restricts the Gram basis to the leading parameters (default
  /// all of them); the variable still lives in the full parameter space.
  SosMatrixVar declare_sos_matrix(const std::string& name, int size, int degree,
                                  int basis_vars = -1) {
    if (size <= 0) throw std::invalid_argument("declare_sos_matrix: size must be positive");
    if (degree < 0) throw std::invalid_argument("declare_sos_matrix: negative degree");
    SosMatrixVar var;
    var.owner = this;
    var.group = static_cast<int>(groups_->size());
    var.size = size;
    var.basis = embedded_basis(basis_vars, (degree + 1) / 2, "declare_sos_matrix");
    var.gram_block = static_cast<int>(gram_sides_.size());
    var.id_start = next_id_;
    const int side = static_cast<int>(var.basis.size()) * size;
    const int packed = side * (side + 1) / 2;
    gram_sides_.push_back(side);
    groups_->push_back({name, next_id_, packed});
    next_id_ += packed;
    sos_vars_.push_back(var);
    return var;
  }

  FreePolyMatrixVar declare_free_poly_matrix(const std::string& name, int rows, int cols,
                                             int degree, int basis_vars = -1) {
    if (rows <= 0 || cols <= 0) {
      throw std::invalid_argument("declare_free_poly_matrix: dimensions must be positive");
    }
    if (degree < 0) throw std::invalid_argument("declare_free_poly_matrix: negative degree");
    FreePolyMatrixVar var;
    var.owner = this;
    var.group = static_cast<int>(groups_->size());
    var.rows = rows;
    var.cols = cols;
    var.basis = embedded_basis(basis_vars, degree, "declare_free_poly_matrix");
    var.id_start = next_id_;
    var.free_base = free_count_;
    const int count = static_cast<int>(var.basis.size()) * rows * cols;
    groups_->push_back({name, next_id_, count});
    next_id_ += count;
    free_count_ += count;
    free_vars_.push_back(var);
    return var;
  }

  /// Expands the Gram parameterization of an SOS variable into an expression.
  LinPolyMatrix expr(const SosMatrixVar& var) const {
    check_owner(var.owner, "expr");
    const int n = var.size;
    const int nb = static_cast<int>(var.basis.size());
    LinPolyMatrix out(n, n, num_vars_, groups_);
    for (int u = 0; u < nb; ++u) {
      for (int v = 0; v < nb; ++v) {
        const Monomial mono = var.basis[u] * var.basis[v];
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            const int a = u * n + i;
            const int b = v * n + j;
            const int id = var.id_start + packed_index(std::min(a, b), std::max(a, b),
                                                       nb * n);
            out.at(mono, i, j) += LinForm::variable(id);
          }
        }
      }
    }
    return out;
  }

  LinPolyMatrix expr(const FreePolyMatrixVar& var) const {
    check_owner(var.owner, "expr");
    LinPolyMatrix out(var.rows, var.cols, num_vars_, groups_);
    for (std::size_t b = 0; b < var.basis.size(); ++b) {
      for (int i = 0; i < var.rows; ++i) {
        for (int j = 0; j < var.cols; ++j) {
          out.at(var.basis[b], i, j) +=
              LinForm::variable(scalar_id(var, static_cast<int>(b), i, j));
        }
      }
    }
    return out;
  }

  LinPolyMatrix lift(const PolynomialMatrix& m) const {
    if (m.num_vars() != num_vars_) {
      throw std::invalid_argument("SosProgram::lift: parameter count mismatch");
    }
    return LinPolyMatrix::lift(m, groups_);
  }

  LinPolyMatrix identity(int n) const {
    return LinPolyMatrix::identity(n, num_vars_, groups_);
  }

  /// Pins every coefficient of `expr` to zero, one scalar equality per
  /// (monomial, entry); structurally symmetric expressions emit only the
  /// upper triangle. Returns the number of equalities added.
  int assert_zero(const LinPolyMatrix& expr) {
    if (expr.num_vars() != num_vars_) {
      throw std::invalid_argument("assert_zero: parameter count mismatch");
    }
    if (expr.groups() && expr.groups() != groups_) {
      throw std::invalid_argument("assert_zero: expression belongs to a different program");
    }
    const bool symmetric = expr.rows() == expr.cols() && expr.is_symmetric();
    int added = 0;
    for (const auto& [mono, forms] : expr.terms()) {
      for (int i = 0; i < expr.rows(); ++i) {
        for (int j = symmetric ? i : 0; j < expr.cols(); ++j) {
          LinForm f = forms[expr.flat(i, j)];
          f.drop_small_terms(kCoeffPruneTol);
          if (f.is_zero()) continue;
          Constraint row;
          row.terms.assign(f.terms().begin(), f.terms().end());
          row.rhs = -f.constant();
          constraints_.push_back(std::move(row));
          ++added;
        }
      }
    }
    return added;
  }

  int assert_poly_eq(const LinPolyMatrix& lhs, const LinPolyMatrix& rhs) {
    return assert_zero(lhs - rhs);
  }

  int assert_poly_eq(const LinPolyMatrix& lhs, const PolynomialMatrix& rhs) {
    return assert_zero(lhs - lift(rhs));
  }

  void set_objective_min(const LinForm& objective) {
    objective_ = objective;
    has_objective_ = true;
  }

  SosCompilation compile() const {
    SosCompilation out;
    SdpProblem& p = out.problem;
    p.psd_blocks = gram_sides_;
    p.free_count = free_count_;
    const std::vector<int> id_map = build_id_map(p);
    p.equalities.reserve(constraints_.size());
    for (const auto& c : constraints_) {
      SdpProblem::Row row;
      row.rhs = c.rhs;
      row.terms.reserve(c.terms.size());
      for (const auto& [id, coeff] : c.terms) {
        row.terms.push_back({id_map[id], coeff});
      }
      p.equalities.push_back(std::move(row));
    }
    if (has_objective_) {
      out.objective_offset = objective_.constant();
      p.objective.reserve(objective_.terms().size());
      for (const auto& [id, coeff] : objective_.terms()) {
        p.objective.push_back({id_map[id], coeff});
      }
    }
    out.equality_count = static_cast<int>(constraints_.size());
    p.validate();
    return out;
  }

  const Eigen::MatrixXd& gram_of(const SosMatrixVar& var, const SdpSolution& sol) const {
    check_owner(var.owner, "gram_of");
    require_feasible(sol, "gram_of");
    return sol.blocks.at(var.gram_block);
  }

  /// Trace of the Gram matrix behind an SOS variable. On the PSD cone this
  /// is the nuclear norm, so adding a small multiple to an objective picks a
  /// minimal representative from an otherwise flat optimal face.
  LinForm gram_trace(const SosMatrixVar& var) const {
    check_owner(var.owner, "gram_trace");
    const int side = static_cast<int>(var.basis.size()) * var.size;
    LinForm out;
    for (int k = 0; k < side; ++k) {
      out = out + LinForm::variable(var.id_start + packed_index(k, k, side));
    }
    return out;
  }

  /// Recovers the matrix polynomial an SOS variable settled on. Hard error
  /// unless the solve ended Feasible: any other status has no witness.
  PolynomialMatrix value_of(const SosMatrixVar& var, const SdpSolution& sol) const {
    check_owner(var.owner, "value_of");
    require_feasible(sol, "value_of");
    const Eigen::MatrixXd& gram = sol.blocks.at(var.gram_block);
    const int n = var.size;
    const int nb = static_cast<int>(var.basis.size());
    PolynomialMatrix out = PolynomialMatrix::zero(n, n, num_vars_);
    for (int u = 0; u < nb; ++u) {
      for (int v = 0; v < nb; ++v) {
        out.add_term(var.basis[u] * var.basis[v], gram.block(u * n, v * n, n, n));
      }
    }
    out.prune();
    out.mark_symmetric();
    return out;
  }

  PolynomialMatrix value_of(const FreePolyMatrixVar& var, const SdpSolution& sol) const {
    check_owner(var.owner, "value_of");
    require_feasible(sol, "value_of");
    const auto& g = (*groups_)[var.group];
    if (sol.free_values.size() < var.free_base + g.count) {
      throw std::runtime_error("SosProgram::value_of: solution lacks this free variable");
    }
    PolynomialMatrix out = PolynomialMatrix::zero(var.rows, var.cols, num_vars_);
    Eigen::MatrixXd coeff(var.rows, var.cols);
    for (std::size_t b = 0; b < var.basis.size(); ++b) {
      for (int i = 0; i < var.rows; ++i) {
        for (int j = 0; j < var.cols; ++j) {
          coeff(i, j) =
              sol.free_values(var.free_base + flat_scalar(var, static_cast<int>(b), i, j));
        }
      }
      out.add_term(var.basis[b], coeff);
    }
    out.prune();
    return out;
  }

  int equality_count() const { return static_cast<int>(constraints_.size()); }
  int scalar_count() const { return next_id_; }

 private:
  struct Constraint {
    std::vector<std::pair<int, double>> terms;
    double rhs = 0.0;
  };

  static int packed_index(int i, int j, int n) {
    return i * n - i * (i - 1) / 2 + (j - i);
  }

  static int flat_scalar(const FreePolyMatrixVar& var, int b, int i, int j) {
    return (b * var.rows + i) * var.cols + j;
  }

  int scalar_id(const FreePolyMatrixVar& var, int b, int i, int j) const {
    return var.id_start + flat_scalar(var, b, i, j);
  }

  std::vector<Monomial> embedded_basis(int basis_vars, int degree, const char* where) const {
    const int bv = basis_vars < 0 ? num_vars_ : basis_vars;
    if (bv > num_vars_) {
      throw std::invalid_argument(std::string(where) +
                                  ": basis variables exceed parameter count");
    }
    std::vector<Monomial> basis = monomial_basis(bv, degree);
    std::vector<Monomial> out;
    out.reserve(basis.size());
    for (const auto& m : basis) out.push_back(m.embedded(num_vars_));
    return out;
  }

  void check_owner(const void* owner, const char* where) const {
    if (owner != this) {
      throw std::invalid_argument(std::string("SosProgram::") + where +
                                  ": variable belongs to a different program");
    }
  }

  static void require_feasible(const SdpSolution& sol, const char* where) {
    if (sol.status != SdpStatus::Feasible) {
      throw std::runtime_error(std::string("SosProgram::") + where +
                               ": no solution to extract (solver status: " +
                               to_string(sol.status) + ")");
    }
  }

  /// Scalar id -> SDP variable index. Gram entries map onto the packed upper
  /// triangle of their block in declaration order; free scalars follow all
  /// matrix entries, also in declaration order.
  std::vector<int> build_id_map(const SdpProblem& p) const {
    std::vector<int> map(static_cast<std::size_t>(next_id_), -1);
    for (const auto& var : sos_vars_) {
      const auto& g = (*groups_)[var.group];
      const int base = p.block_offset(var.gram_block);
      for (int k = 0; k < g.count; ++k) map[g.id_start + k] = base + k;
    }
    const int matrix_total = p.matrix_var_count();
    for (const auto& var : free_vars_) {
      const auto& g = (*groups_)[var.group];
      for (int k = 0; k < g.count; ++k) {
        map[g.id_start + k] = matrix_total + var.free_base + k;
      }
    }
    return map;
  }

  int num_vars_ = 0;
  std::shared_ptr<VarGroups> groups_;
  int next_id_ = 0;
  int free_count_ = 0;
  std::vector<int> gram_sides_;
  std::vector<SosMatrixVar> sos_vars_;
  std::vector<FreePolyMatrixVar> free_vars_;
  std::vector<Constraint> constraints_;
  LinForm objective_;
  bool has_objective_ = false;
};

}  // namespace pars
