#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pars/monomial.hpp"
#include "pars/polynomial.hpp"

namespace pars {

/// Matrix-valued polynomial in a fixed number of parameters, stored as a
/// sparse map from monomials to dense real coefficient matrices.
class PolynomialMatrix {
 public:
  using TermMap = std::map<Monomial, Eigen::MatrixXd, GradedLexLess>;

  PolynomialMatrix(int rows, int cols, int num_vars)
      : rows_(rows), cols_(cols), num_vars_(num_vars) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("PolynomialMatrix: negative size");
    if (num_vars < 0) throw std::invalid_argument("PolynomialMatrix: num_vars < 0");
  }

  static PolynomialMatrix zero(int rows, int cols, int num_vars) {
    return PolynomialMatrix(rows, cols, num_vars);
  }

  /// Constant (parameter independent) matrix.
  static PolynomialMatrix constant(const Eigen::MatrixXd& value, int num_vars) {
    PolynomialMatrix m(static_cast<int>(value.rows()), static_cast<int>(value.cols()), num_vars);
    m.add_term(Monomial::one(num_vars), value);
    return m;
  }

  static PolynomialMatrix identity(int n, int num_vars) {
    return constant(Eigen::MatrixXd::Identity(n, n), num_vars);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int num_vars() const { return num_vars_; }
  const TermMap& terms() const { return terms_; }

  /// The flag records that the matrix is known symmetric; it is validated
  /// against the stored coefficients whenever it is set.
  bool symmetric() const { return symmetric_; }

  void mark_symmetric(double tol = 1e-10) {
    if (rows_ != cols_) {
      throw std::invalid_argument("PolynomialMatrix::mark_symmetric: matrix not square");
    }
    for (const auto& [m, c] : terms_) {
      if (c.size() > 0 && (c - c.transpose()).cwiseAbs().maxCoeff() > tol) {
        throw std::invalid_argument(
            "PolynomialMatrix::mark_symmetric: coefficient of " + m.to_string() +
            " is not symmetric");
      }
    }
    symmetric_ = true;
  }

  /// Accumulates `coeff` onto the coefficient matrix of `m`.
  void add_term(const Monomial& m, const Eigen::MatrixXd& coeff) {
    if (m.num_vars() != num_vars_) {
      throw std::invalid_argument("PolynomialMatrix::add_term: parameter count mismatch");
    }
    if (coeff.rows() != rows_ || coeff.cols() != cols_) {
      throw std::invalid_argument("PolynomialMatrix::add_term: coefficient size mismatch");
    }
    if (coeff.size() == 0) return;
    auto it = terms_.find(m);
    if (it == terms_.end()) {
      terms_.emplace(m, coeff);
    } else {
      it->second += coeff;
    }
    symmetric_ = false;
  }

  /// Coefficient matrix of `m`, zero when the monomial is absent.
  Eigen::MatrixXd coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? Eigen::MatrixXd::Zero(rows_, cols_).eval() : it->second;
  }

  Polynomial entry(int i, int j) const {
    check_index(i, j);
    Polynomial p(num_vars_);
    for (const auto& [m, c] : terms_) p.add_term(m, c(i, j));
    p.prune();
    return p;
  }

  void set_entry(int i, int j, const Polynomial& p) {
    check_index(i, j);
    if (p.num_vars() != num_vars_) {
      throw std::invalid_argument("PolynomialMatrix::set_entry: parameter count mismatch");
    }
    for (auto& [m, c] : terms_) c(i, j) = 0.0;
    for (const auto& [m, c] : p.terms()) {
      auto it = terms_.find(m);
      if (it == terms_.end()) {
        Eigen::MatrixXd z = Eigen::MatrixXd::Zero(rows_, cols_);
        z(i, j) = c;
        terms_.emplace(m, std::move(z));
      } else {
        it->second(i, j) = c;
      }
    }
    symmetric_ = false;
    prune();
  }

  /// Copies `block` into this matrix with upper-left corner (i0, j0),
  /// overwriting that range in every coefficient.
  void set_block(int i0, int j0, const PolynomialMatrix& block) {
    if (block.num_vars_ != num_vars_) {
      throw std::invalid_argument("PolynomialMatrix::set_block: parameter count mismatch");
    }
    if (i0 < 0 || j0 < 0 || i0 + block.rows_ > rows_ || j0 + block.cols_ > cols_) {
      throw std::invalid_argument("PolynomialMatrix::set_block: block out of range");
    }
    for (auto& [m, c] : terms_) c.block(i0, j0, block.rows_, block.cols_).setZero();
    for (const auto& [m, c] : block.terms_) {
      auto it = terms_.find(m);
      if (it == terms_.end()) {
        Eigen::MatrixXd z = Eigen::MatrixXd::Zero(rows_, cols_);
        z.block(i0, j0, block.rows_, block.cols_) = c;
        terms_.emplace(m, std::move(z));
      } else {
        it->second.block(i0, j0, block.rows_, block.cols_) = c;
      }
    }
    symmetric_ = false;
    prune();
  }

  PolynomialMatrix block(int i0, int j0, int r, int c) const {
    if (i0 < 0 || j0 < 0 || i0 + r > rows_ || j0 + c > cols_) {
      throw std::invalid_argument("PolynomialMatrix::block: range out of bounds");
    }
    PolynomialMatrix b(r, c, num_vars_);
    for (const auto& [m, coeff] : terms_) b.add_term(m, coeff.block(i0, j0, r, c));
    b.prune();
    return b;
  }

  int degree() const {
    int d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, m.degree());
    return d;
  }

  bool is_zero(double tol = kCoeffPruneTol) const {
    for (const auto& [m, c] : terms_) {
      if (c.size() > 0 && c.cwiseAbs().maxCoeff() > tol) return false;
    }
    return true;
  }

  template <typename Vector>
  Eigen::MatrixXd evaluate(const Vector& alpha) const {
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(rows_, cols_);
    for (const auto& [m, c] : terms_) v += m.evaluate(alpha) * c;
    return v;
  }

  void prune(double tol = kCoeffPruneTol) {
    for (auto it = terms_.begin(); it != terms_.end();) {
      if (it->second.size() == 0 || it->second.cwiseAbs().maxCoeff() <= tol) {
        it = terms_.erase(it);
      } else {
        ++it;
      }
    }
  }

  PolynomialMatrix operator+(const PolynomialMatrix& other) const {
    check_same_shape(other, "operator+");
    PolynomialMatrix r = *this;
    r.symmetric_ = false;
    for (const auto& [m, c] : other.terms_) r.add_term(m, c);
    r.prune();
    return r;
  }

  PolynomialMatrix operator-(const PolynomialMatrix& other) const {
    check_same_shape(other, "operator-");
    PolynomialMatrix r = *this;
    r.symmetric_ = false;
    for (const auto& [m, c] : other.terms_) r.add_term(m, (-c).eval());
    r.prune();
    return r;
  }

  PolynomialMatrix operator-() const { return *this * -1.0; }

  PolynomialMatrix operator*(double s) const {
    PolynomialMatrix r(rows_, cols_, num_vars_);
    for (const auto& [m, c] : terms_) r.add_term(m, (s * c).eval());
    r.prune();
    return r;
  }

  friend PolynomialMatrix operator*(double s, const PolynomialMatrix& m) { return m * s; }

  PolynomialMatrix operator*(const PolynomialMatrix& other) const {
    if (other.num_vars_ != num_vars_) {
      throw std::invalid_argument("PolynomialMatrix::operator*: parameter count mismatch");
    }
    if (cols_ != other.rows_) {
      throw std::invalid_argument("PolynomialMatrix::operator*: inner dimension mismatch");
    }
    PolynomialMatrix r(rows_, other.cols_, num_vars_);
    for (const auto& [ma, ca] : terms_) {
      for (const auto& [mb, cb] : other.terms_) {
        r.add_term(ma * mb, ca * cb);
      }
    }
    r.prune();
    return r;
  }

  PolynomialMatrix transpose() const {
    PolynomialMatrix r(cols_, rows_, num_vars_);
    for (const auto& [m, c] : terms_) r.add_term(m, c.transpose());
    return r;
  }

  PolynomialMatrix embedded(int new_num_vars) const {
    PolynomialMatrix r(rows_, cols_, new_num_vars);
    for (const auto& [m, c] : terms_) r.add_term(m.embedded(new_num_vars), c);
    return r;
  }

  PolynomialMatrix restricted(int new_num_vars) const {
    PolynomialMatrix r(rows_, cols_, new_num_vars);
    for (const auto& [m, c] : terms_) r.add_term(m.restricted(new_num_vars), c);
    return r;
  }

  bool supported_on_prefix(int prefix_vars) const {
    for (const auto& [m, c] : terms_) {
      if (c.size() > 0 && c.cwiseAbs().maxCoeff() > kCoeffPruneTol &&
          !m.supported_on_prefix(prefix_vars)) {
        return false;
      }
    }
    return true;
  }

 private:
  void check_index(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_) {
      throw std::invalid_argument("PolynomialMatrix: entry index out of range");
    }
  }

  void check_same_shape(const PolynomialMatrix& other, const char* where) const {
    if (other.num_vars_ != num_vars_) {
      throw std::invalid_argument(std::string("PolynomialMatrix::") + where +
                                  ": parameter count mismatch");
    }
    if (other.rows_ != rows_ || other.cols_ != cols_) {
      throw std::invalid_argument(std::string("PolynomialMatrix::") + where +
                                  ": shape mismatch");
    }
  }

  int rows_ = 0;
  int cols_ = 0;
  int num_vars_ = 0;
  bool symmetric_ = false;
  TermMap terms_;
};

}  // namespace pars
