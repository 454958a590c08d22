#pragma once

#include <Eigen/Dense>

namespace ivqr {

// One estimation problem.  x is n x d with the intercept in column 0; z holds
// the raw instruments (d_z >= d once projected).
struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    Eigen::MatrixXd z;
    double q = 0.5;

    Eigen::Index n() const { return y.size(); }
    Eigen::Index d() const { return x.cols(); }
};

}  // namespace ivqr
