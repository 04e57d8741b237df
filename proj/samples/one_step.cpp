// Library usage: one Shampoo step and its polar-factor relationship.

#include <cstdio>

#include "matopt/optim.hpp"

int main() {
  using namespace matopt;
  const Matrix g{{3.0, 1.0, 0.0}, {1.0, 2.0, 1.0}};

  OptimizerSpec spec;
  spec.family = Family::Shampoo;
  spec.p = 0.25;
  spec.beta1 = spec.beta2 = spec.beta3 = 0.0;
  spec.epsilon = 0.0;
  OptimizerState state = init_state(spec, g.rows(), g.cols());
  const StepResult r = step(spec, state, Matrix(g.rows(), g.cols()), g, 1.0);

  std::printf("||update - polar(G)||_F = %.3e\n", frobenius_distance(r.update, polar_svd(g)));
  return 0;
}
