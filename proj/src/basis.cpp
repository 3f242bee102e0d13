#include "twdidp/basis.hpp"

#include <cmath>
#include <sstream>

namespace twdidp::sieve {

BasisSpec BasisSpec::indicator(int n_states) {
    if (n_states < 1) throw ValidationError("indicator basis needs n_states >= 1");
    BasisSpec s;
    s.kind_ = Kind::Indicator;
    s.n_states_ = n_states;
    return s;
}

BasisSpec BasisSpec::polynomial(std::vector<int> degree_per_dim, bool cross_terms) {
    if (degree_per_dim.empty()) throw ValidationError("polynomial basis needs >= 1 dimension");
    for (int d : degree_per_dim)
        if (d < 0) throw ValidationError("polynomial degree must be nonnegative");
    BasisSpec s;
    s.kind_ = Kind::Polynomial;
    s.degrees_ = std::move(degree_per_dim);
    s.cross_terms_ = cross_terms;
    return s;
}

BasisSpec BasisSpec::bspline(int degree, std::vector<std::vector<double>> knots_per_dim) {
    if (degree < 0) throw ValidationError("spline degree must be nonnegative");
    if (knots_per_dim.empty()) throw ValidationError("bspline basis needs >= 1 dimension");
    for (const auto& kn : knots_per_dim) {
        if (static_cast<int>(kn.size()) < degree + 2)
            throw ValidationError("knot vector too short for requested degree");
        for (size_t j = 1; j < kn.size(); ++j)
            if (kn[j] < kn[j - 1]) throw ValidationError("knot vector must be non-decreasing");
    }
    BasisSpec s;
    s.kind_ = Kind::BSpline;
    s.spline_degree_ = degree;
    s.knots_ = std::move(knots_per_dim);
    return s;
}

int BasisSpec::dim() const {
    switch (kind_) {
        case Kind::Indicator: return 1;
        case Kind::Polynomial: return static_cast<int>(degrees_.size());
        case Kind::BSpline: return static_cast<int>(knots_.size());
    }
    return 1;
}

int BasisSpec::size() const {
    switch (kind_) {
        case Kind::Indicator: return n_states_;
        case Kind::Polynomial: {
            if (!cross_terms_) {
                int L = 1;
                for (int d : degrees_) L += d;
                return L;
            }
            int L = 1;
            for (int d : degrees_) L *= (d + 1);
            return L;
        }
        case Kind::BSpline: {
            int L = 1;
            for (const auto& kn : knots_)
                L *= static_cast<int>(kn.size()) - spline_degree_ - 1;
            return L;
        }
    }
    return 0;
}

Eigen::VectorXd bspline_eval_1d(double x, int degree, const std::vector<double>& knots) {
    const int n_basis = static_cast<int>(knots.size()) - degree - 1;
    // degree-0 seed of the Cox-de Boor recursion; the last span is closed on
    // the right so x == knots.back() lands in the final basis function.
    std::vector<double> cur(knots.size() - 1, 0.0);
    for (size_t i = 0; i + 1 < knots.size(); ++i) {
        const bool last_span = knots[i] < knots[i + 1] && knots[i + 1] == knots.back();
        if ((x >= knots[i] && x < knots[i + 1]) || (last_span && x == knots.back())) cur[i] = 1.0;
    }
    for (int d = 1; d <= degree; ++d) {
        std::vector<double> next(knots.size() - 1 - d, 0.0);
        for (size_t i = 0; i < next.size(); ++i) {
            double v = 0.0;
            const double den_l = knots[i + d] - knots[i];
            if (den_l > 0.0) v += (x - knots[i]) / den_l * cur[i];
            const double den_r = knots[i + d + 1] - knots[i + 1];
            if (den_r > 0.0) v += (knots[i + d + 1] - x) / den_r * cur[i + 1];
            next[i] = v;
        }
        cur = std::move(next);
    }
    Eigen::VectorXd out(n_basis);
    for (int i = 0; i < n_basis; ++i) out(i) = cur[i];
    return out;
}

Eigen::VectorXd BasisSpec::eval(const Eigen::VectorXd& obs) const {
    switch (kind_) {
        case Kind::Indicator: {
            if (obs.size() != 1) throw ValidationError("indicator basis expects scalar state");
            const double raw = obs(0);
            const int s = static_cast<int>(std::llround(raw));
            if (std::abs(raw - s) > 1e-9 || s < 0 || s >= n_states_) {
                throw ValidationError("unknown state " + std::to_string(raw) +
                                      " for indicator basis of size " + std::to_string(n_states_));
            }
            Eigen::VectorXd v = Eigen::VectorXd::Zero(n_states_);
            v(s) = 1.0;
            return v;
        }
        case Kind::Polynomial: {
            const int d = dim();
            if (obs.size() != d) throw ValidationError("observation dimension mismatch");
            if (!cross_terms_) {
                Eigen::VectorXd v(size());
                v(0) = 1.0;
                int pos = 1;
                for (int j = 0; j < d; ++j) {
                    double p = 1.0;
                    for (int q = 1; q <= degrees_[j]; ++q) {
                        p *= obs(j);
                        v(pos++) = p;
                    }
                }
                return v;
            }
            // tensor product of per-dim monomials
            Eigen::VectorXd v = Eigen::VectorXd::Ones(1);
            for (int j = 0; j < d; ++j) {
                Eigen::VectorXd pj(degrees_[j] + 1);
                pj(0) = 1.0;
                for (int q = 1; q <= degrees_[j]; ++q) pj(q) = pj(q - 1) * obs(j);
                Eigen::VectorXd nv(v.size() * pj.size());
                for (Eigen::Index b = 0; b < pj.size(); ++b)
                    nv.segment(b * v.size(), v.size()) = v * pj(b);
                v = std::move(nv);
            }
            return v;
        }
        case Kind::BSpline: {
            const int d = dim();
            if (obs.size() != d) throw ValidationError("observation dimension mismatch");
            Eigen::VectorXd v = Eigen::VectorXd::Ones(1);
            for (int j = 0; j < d; ++j) {
                Eigen::VectorXd bj = bspline_eval_1d(obs(j), spline_degree_, knots_[j]);
                Eigen::VectorXd nv(v.size() * bj.size());
                for (Eigen::Index b = 0; b < bj.size(); ++b)
                    nv.segment(b * v.size(), v.size()) = v * bj(b);
                v = std::move(nv);
            }
            return v;
        }
    }
    throw ValidationError("unreachable basis kind");
}

std::string BasisSpec::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case Kind::Indicator: os << "indicator(" << n_states_ << ")"; break;
        case Kind::Polynomial:
            os << "poly(";
            for (size_t j = 0; j < degrees_.size(); ++j) os << (j ? "," : "") << degrees_[j];
            os << (cross_terms_ ? ";cross" : "") << ")";
            break;
        case Kind::BSpline:
            os << "bspline(deg=" << spline_degree_ << ";";
            for (size_t j = 0; j < knots_.size(); ++j) {
                if (j) os << "|";
                for (size_t q = 0; q < knots_[j].size(); ++q)
                    os << (q ? "," : "") << knots_[j][q];
            }
            os << ")";
            break;
    }
    return os.str();
}

bool BasisSpec::operator==(const BasisSpec& o) const {
    return kind_ == o.kind_ && n_states_ == o.n_states_ && degrees_ == o.degrees_ &&
           cross_terms_ == o.cross_terms_ && spline_degree_ == o.spline_degree_ &&
           knots_ == o.knots_;
}

}  // namespace twdidp::sieve
