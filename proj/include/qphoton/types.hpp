#pragma once

#include <complex>

#include <Eigen/Dense>

namespace qphoton {

// Dense complex types, templated on the real scalar. Everything in the
// library instantiates them with double; the templates exist so ladder and
// phase-space helpers can be evaluated in long double from test oracles.
template <typename Scalar>
using CMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using CVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

using Complex = std::complex<double>;
using Matrix = CMatrix<double>;
using Vector = CVector<double>;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr Complex kI{0.0, 1.0};

}  // namespace qphoton
