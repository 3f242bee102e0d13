#ifndef TWDIDP_BASIS_HPP
#define TWDIDP_BASIS_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "twdidp/common.hpp"

namespace twdidp::sieve {

/// Sieve basis over the observation space. Three families:
///   Indicator(n_states)          one-hot over a finite state set, L = n_states
///   Polynomial(degrees, cross)   monomials per dimension; without cross terms
///                                L = 1 + sum(degrees), with cross terms the
///                                tensor-product size prod(degrees[j]+1)
///   BSpline(degree, knots/dim)   Cox-de Boor B-splines, tensor product across dims
class BasisSpec {
public:
    enum class Kind { Indicator, Polynomial, BSpline };

    static BasisSpec indicator(int n_states);
    static BasisSpec polynomial(std::vector<int> degree_per_dim, bool cross_terms = false);
    static BasisSpec bspline(int degree, std::vector<std::vector<double>> knots_per_dim);

    Kind kind() const { return kind_; }
    int n_states() const { return n_states_; }
    int dim() const;
    /// Basis size L.
    int size() const;

    /// Evaluate the basis at an observation. Indicator bases reject
    /// out-of-range states; polynomial and spline bases extrapolate.
    Eigen::VectorXd eval(const Eigen::VectorXd& obs) const;

    std::string describe() const;

    bool operator==(const BasisSpec& other) const;

private:
    BasisSpec() = default;
    Kind kind_ = Kind::Indicator;
    int n_states_ = 0;
    std::vector<int> degrees_;
    bool cross_terms_ = false;
    int spline_degree_ = 0;
    std::vector<std::vector<double>> knots_;
};

/// One-dimensional B-spline basis values at x for the given degree and knot
/// vector (length = n_basis + degree + 1, non-decreasing).
Eigen::VectorXd bspline_eval_1d(double x, int degree, const std::vector<double>& knots);

}  // namespace twdidp::sieve

#endif
