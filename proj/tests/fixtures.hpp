#pragma once

#include <robosynth/problem.hpp>

namespace fixtures {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Two-state benchmark: stable drift, single input, correlated disturbance.
inline robosynth::ProblemSpec second_order() {
  robosynth::ProblemSpec s;
  s.A.resize(2, 2);
  s.A << 0.732, -0.086, 0.172, 0.990;
  s.B.resize(2, 1);
  s.B << 0.060, 0.006;
  s.G.resize(2, 2);
  s.G << 0.3, 0.4, 0.2, 0.15;
  s.Q = MatrixXd::Identity(2, 2);
  s.R.resize(1, 1);
  s.R << 0.01;
  s.P.resize(2, 2);
  s.P << 5.5461, 4.9873, 4.9873, 10.4940;
  s.N = 5;
  s.X = robosynth::Polytope::box(VectorXd::Constant(2, 1.5));
  s.U = robosynth::Polytope::box(VectorXd::Constant(1, 2.0));
  s.w_half = VectorXd::Constant(2, 0.05);
  s.eps = 0.03;
  return s;
}

/// Four-state benchmark: scalar disturbance on every state, no terminal weight.
inline robosynth::ProblemSpec fourth_order() {
  robosynth::ProblemSpec s;
  s.A.resize(4, 4);
  s.A << 0.40, 0.37, 0.29, -0.72,
        -0.21, 0.64, -0.67, -0.04,
         0.83, 0.01, -0.28, 0.38,
        -0.07, 0.60, 0.55, 0.49;
  s.B.resize(4, 1);
  s.B << 1.61, 0.40, -1.45, -0.67;
  s.G = MatrixXd::Ones(4, 1);
  s.Q = MatrixXd::Identity(4, 4);
  s.R.resize(1, 1);
  s.R << 0.2;
  s.P = MatrixXd::Zero(4, 4);
  s.N = 8;
  s.X = robosynth::Polytope::box(VectorXd::Constant(4, 5.0));
  s.U = robosynth::Polytope::box(VectorXd::Constant(1, 0.2));
  s.w_half = VectorXd::Constant(1, 0.01);
  s.eps = 0.1;
  return s;
}

/// Scalar toy used by the analytic / brute-force checks.
inline robosynth::ProblemSpec scalar_toy(int N = 2, double a = 0.5, double b = 1.0,
                                         double wbound = 0.1, double eps = 0.0) {
  robosynth::ProblemSpec s;
  s.A.resize(1, 1);
  s.A << a;
  s.B.resize(1, 1);
  s.B << b;
  s.G = MatrixXd::Identity(1, 1);
  s.Q = MatrixXd::Identity(1, 1);
  s.R = MatrixXd::Identity(1, 1);
  s.P = MatrixXd::Identity(1, 1);
  s.N = N;
  s.X = robosynth::Polytope::box(VectorXd::Constant(1, 1.0));
  s.U = robosynth::Polytope::box(VectorXd::Constant(1, 1.0));
  s.w_half = VectorXd::Constant(1, wbound);
  s.eps = eps;
  return s;
}

}  // namespace fixtures
