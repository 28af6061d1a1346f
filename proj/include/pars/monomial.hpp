#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pars {

/// Exponent vector of a monomial in a fixed set of scalar parameters.
///
/// A monomial over p parameters is stored as its exponent vector
/// (e_1, ..., e_p) and denotes the product a1^e1 * ... * ap^ep.
class Monomial {
 public:
  Monomial() = default;

  explicit Monomial(std::vector<int> exponents) : exponents_(std::move(exponents)) {
    for (int e : exponents_) {
      if (e < 0) throw std::invalid_argument("Monomial: negative exponent");
    }
  }

  /// The constant monomial (all exponents zero) over `num_vars` parameters.
  static Monomial one(int num_vars) {
    if (num_vars < 0) throw std::invalid_argument("Monomial::one: num_vars < 0");
    return Monomial(std::vector<int>(static_cast<std::size_t>(num_vars), 0));
  }

  /// The monomial a_{index+1} (a single parameter to the first power).
  static Monomial variable(int index, int num_vars) {
    if (index < 0 || index >= num_vars) {
      throw std::invalid_argument("Monomial::variable: index out of range");
    }
    std::vector<int> e(static_cast<std::size_t>(num_vars), 0);
    e[static_cast<std::size_t>(index)] = 1;
    return Monomial(std::move(e));
  }

  int num_vars() const { return static_cast<int>(exponents_.size()); }

  int degree() const { return std::accumulate(exponents_.begin(), exponents_.end(), 0); }

  int exponent(int i) const { return exponents_.at(static_cast<std::size_t>(i)); }

  const std::vector<int>& exponents() const { return exponents_; }

  Monomial operator*(const Monomial& other) const {
    check_same_vars(other, "operator*");
    std::vector<int> e(exponents_.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = exponents_[i] + other.exponents_[i];
    return Monomial(std::move(e));
  }

  bool operator==(const Monomial& other) const { return exponents_ == other.exponents_; }
  bool operator!=(const Monomial& other) const { return !(*this == other); }

  /// Value of the monomial at a parameter point.
  template <typename Vector>
  double evaluate(const Vector& alpha) const {
    if (static_cast<int>(alpha.size()) != num_vars()) {
      throw std::invalid_argument("Monomial::evaluate: point dimension mismatch");
    }
    double v = 1.0;
    for (int i = 0; i < num_vars(); ++i) {
      for (int k = 0; k < exponents_[static_cast<std::size_t>(i)]; ++k) {
        v *= alpha[i];
      }
    }
    return v;
  }

  /// Same monomial viewed over a larger parameter set (extra exponents zero).
  Monomial embedded(int new_num_vars) const {
    if (new_num_vars < num_vars()) {
      throw std::invalid_argument("Monomial::embedded: cannot shrink parameter set");
    }
    std::vector<int> e = exponents_;
    e.resize(static_cast<std::size_t>(new_num_vars), 0);
    return Monomial(std::move(e));
  }

  /// Same monomial over the first `new_num_vars` parameters; the dropped
  /// trailing exponents must all be zero.
  Monomial restricted(int new_num_vars) const {
    if (new_num_vars < 0 || new_num_vars > num_vars()) {
      throw std::invalid_argument("Monomial::restricted: bad parameter count");
    }
    for (int i = new_num_vars; i < num_vars(); ++i) {
      if (exponents_[static_cast<std::size_t>(i)] != 0) {
        throw std::invalid_argument("Monomial::restricted: nonzero exponent on dropped parameter");
      }
    }
    std::vector<int> e(exponents_.begin(), exponents_.begin() + new_num_vars);
    return Monomial(std::move(e));
  }

  /// True when the monomial only involves the first `prefix_vars` parameters.
  bool supported_on_prefix(int prefix_vars) const {
    for (int i = prefix_vars; i < num_vars(); ++i) {
      if (exponents_[static_cast<std::size_t>(i)] != 0) return false;
    }
    return true;
  }

  std::string to_string() const {
    if (degree() == 0) return "1";
    std::string s;
    for (int i = 0; i < num_vars(); ++i) {
      int e = exponents_[static_cast<std::size_t>(i)];
      if (e == 0) continue;
      if (!s.empty()) s += "*";
      s += "a" + std::to_string(i + 1);
      if (e > 1) s += "^" + std::to_string(e);
    }
    return s;
  }

 private:
  void check_same_vars(const Monomial& other, const char* where) const {
    if (other.num_vars() != num_vars()) {
      throw std::invalid_argument(std::string("Monomial::") + where +
                                  ": parameter count mismatch");
    }
  }

  std::vector<int> exponents_;
};

/// Canonical monomial order: total degree first, then the exponent tuple
/// lexicographically with earlier parameters dominating, so that for two
/// parameters the order starts 1, a1, a2, a1^2, a1*a2, a2^2.
struct GradedLexLess {
  bool operator()(const Monomial& a, const Monomial& b) const {
    const int da = a.degree();
    const int db = b.degree();
    if (da != db) return da < db;
    return a.exponents() > b.exponents();
  }
};

/// All monomials over `num_vars` parameters with total degree at most
/// `max_degree`, in the canonical order. The count is
/// binomial(num_vars + max_degree, max_degree).
inline std::vector<Monomial> monomial_basis(int num_vars, int max_degree) {
  if (num_vars < 0 || max_degree < 0) {
    throw std::invalid_argument("monomial_basis: negative argument");
  }
  std::vector<Monomial> basis;
  std::vector<int> current(static_cast<std::size_t>(num_vars), 0);
  // Enumerate exponent vectors recursively, then sort into canonical order.
  auto enumerate = [&](auto&& self, int var, int remaining) -> void {
    if (var == num_vars) {
      basis.emplace_back(current);
      return;
    }
    for (int e = 0; e <= remaining; ++e) {
      current[static_cast<std::size_t>(var)] = e;
      self(self, var + 1, remaining - e);
    }
    current[static_cast<std::size_t>(var)] = 0;
  };
  if (num_vars == 0) {
    basis.push_back(Monomial::one(0));
  } else {
    enumerate(enumerate, 0, max_degree);
  }
  std::sort(basis.begin(), basis.end(), GradedLexLess{});
  return basis;
}

}  // namespace pars
