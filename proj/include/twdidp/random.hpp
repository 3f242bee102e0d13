#ifndef TWDIDP_RANDOM_HPP
#define TWDIDP_RANDOM_HPP

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "twdidp/common.hpp"

namespace twdidp {

// Hand-rolled samplers so that seeded runs are reproducible independent of
// the standard library's distribution implementations.

inline double uniform01(std::mt19937_64& g) {
    return (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
}

inline double sample_normal(std::mt19937_64& g) {
    const double u1 = uniform01(g);
    const double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline int sample_categorical(std::mt19937_64& g, const Eigen::VectorXd& probs) {
    double u = uniform01(g);
    for (Eigen::Index k = 0; k + 1 < probs.size(); ++k) {
        u -= probs(k);
        if (u < 0.0) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
}

inline int sample_categorical(std::mt19937_64& g, const Eigen::Vector3d& probs) {
    double u = uniform01(g);
    if ((u -= probs(0)) < 0.0) return 0;
    if ((u -= probs(1)) < 0.0) return 1;
    return 2;
}

}  // namespace twdidp

#endif
