#pragma once

#include "tpred/common.hpp"

namespace tpred {

/// Per-row z-score. Columns are samples.
template <typename Scalar>
struct Normalizer {
  static constexpr double kSdFloor = 1e-8;

  Vector<Scalar> mean;
  Vector<Scalar> sd;

  Index dim() const { return mean.size(); }

  template <typename Derived>
  Matrix<Scalar> apply(const Eigen::MatrixBase<Derived>& x) const {
    return ((x.colwise() - mean).array().colwise() / sd.array()).matrix();
  }

  template <typename Derived>
  Matrix<Scalar> invert(const Eigen::MatrixBase<Derived>& z) const {
    return ((z.array().colwise() * sd.array()).matrix().colwise() + mean);
  }

  static Normalizer identity(Index dim) {
    return {Vector<Scalar>::Zero(dim), Vector<Scalar>::Ones(dim)};
  }
};

/// Sample mean and (n - 1) standard deviation per row, sd floored at 1e-8.
template <typename Scalar>
Normalizer<Scalar> fit_normalizer(const Matrix<Scalar>& data) {
  if (data.cols() < 2) throw std::invalid_argument("normalizer needs at least two samples");
  Normalizer<Scalar> n;
  n.mean = data.rowwise().mean();
  const Matrix<Scalar> centered = data.colwise() - n.mean;
  n.sd = (centered.rowwise().squaredNorm() / static_cast<Scalar>(data.cols() - 1))
             .array()
             .sqrt()
             .max(static_cast<Scalar>(Normalizer<Scalar>::kSdFloor))
             .matrix();
  return n;
}

}  // namespace tpred
