#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pars/monomial.hpp"

namespace pars {

/// Coefficients with magnitude at or below this are dropped when polynomial
/// arithmetic results are normalized.
inline constexpr double kCoeffPruneTol = 1e-12;

/// Scalar polynomial in a fixed number of parameters, stored as a sparse
/// map from monomials to real coefficients in canonical monomial order.
class Polynomial {
 public:
  using TermMap = std::map<Monomial, double, GradedLexLess>;

  explicit Polynomial(int num_vars) : num_vars_(num_vars) {
    if (num_vars < 0) throw std::invalid_argument("Polynomial: num_vars < 0");
  }

  static Polynomial constant(int num_vars, double value) {
    Polynomial p(num_vars);
    p.add_term(Monomial::one(num_vars), value);
    return p;
  }

  static Polynomial variable(int index, int num_vars) {
    Polynomial p(num_vars);
    p.add_term(Monomial::variable(index, num_vars), 1.0);
    return p;
  }

  static Polynomial from_terms(int num_vars,
                               const std::vector<std::pair<Monomial, double>>& terms) {
    Polynomial p(num_vars);
    for (const auto& [m, c] : terms) p.add_term(m, c);
    p.prune();
    return p;
  }

  int num_vars() const { return num_vars_; }

  const TermMap& terms() const { return terms_; }

  /// Accumulates `coeff` onto the coefficient of `m`.
  void add_term(const Monomial& m, double coeff) {
    if (m.num_vars() != num_vars_) {
      throw std::invalid_argument("Polynomial::add_term: parameter count mismatch");
    }
    terms_[m] += coeff;
  }

  double coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? 0.0 : it->second;
  }

  /// Total degree; the zero polynomial has degree 0.
  int degree() const {
    int d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, m.degree());
    return d;
  }

  bool is_zero(double tol = kCoeffPruneTol) const {
    for (const auto& [m, c] : terms_) {
      if (std::abs(c) > tol) return false;
    }
    return true;
  }

  double evaluate(const std::vector<double>& alpha) const {
    double v = 0.0;
    for (const auto& [m, c] : terms_) v += c * m.evaluate(alpha);
    return v;
  }

  template <typename Vector>
  double evaluate(const Vector& alpha) const {
    double v = 0.0;
    for (const auto& [m, c] : terms_) v += c * m.evaluate(alpha);
    return v;
  }

  void prune(double tol = kCoeffPruneTol) {
    for (auto it = terms_.begin(); it != terms_.end();) {
      if (std::abs(it->second) <= tol) {
        it = terms_.erase(it);
      } else {
        ++it;
      }
    }
  }

  Polynomial operator+(const Polynomial& other) const {
    check_same_vars(other, "operator+");
    Polynomial r = *this;
    for (const auto& [m, c] : other.terms_) r.add_term(m, c);
    r.prune();
    return r;
  }

  Polynomial operator-(const Polynomial& other) const {
    check_same_vars(other, "operator-");
    Polynomial r = *this;
    for (const auto& [m, c] : other.terms_) r.add_term(m, -c);
    r.prune();
    return r;
  }

  Polynomial operator-() const { return *this * -1.0; }

  Polynomial operator*(const Polynomial& other) const {
    check_same_vars(other, "operator*");
    Polynomial r(num_vars_);
    for (const auto& [ma, ca] : terms_) {
      for (const auto& [mb, cb] : other.terms_) {
        r.add_term(ma * mb, ca * cb);
      }
    }
    r.prune();
    return r;
  }

  Polynomial operator*(double s) const {
    Polynomial r(num_vars_);
    for (const auto& [m, c] : terms_) r.add_term(m, c * s);
    r.prune();
    return r;
  }

  friend Polynomial operator*(double s, const Polynomial& p) { return p * s; }

  Polynomial embedded(int new_num_vars) const {
    Polynomial r(new_num_vars);
    for (const auto& [m, c] : terms_) r.add_term(m.embedded(new_num_vars), c);
    return r;
  }

  Polynomial restricted(int new_num_vars) const {
    Polynomial r(new_num_vars);
    for (const auto& [m, c] : terms_) r.add_term(m.restricted(new_num_vars), c);
    return r;
  }

  bool supported_on_prefix(int prefix_vars) const {
    for (const auto& [m, c] : terms_) {
      if (std::abs(c) > kCoeffPruneTol && !m.supported_on_prefix(prefix_vars)) return false;
    }
    return true;
  }

  std::string to_string() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& [m, c] : terms_) {
      if (!first) os << (c < 0 ? " - " : " + ");
      if (first && c < 0) os << "-";
      first = false;
      const double a = std::abs(c);
      if (m.degree() == 0) {
        os << a;
      } else {
        if (a != 1.0) os << a << "*";
        os << m.to_string();
      }
    }
    return os.str();
  }

 private:
  void check_same_vars(const Polynomial& other, const char* where) const {
    if (other.num_vars_ != num_vars_) {
      throw std::invalid_argument(std::string("Polynomial::") + where +
                                  ": parameter count mismatch");
    }
  }

  int num_vars_ = 0;
  TermMap terms_;
};

}  // namespace pars
