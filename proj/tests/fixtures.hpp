// Shared model sources for the test suites. Line layout is deliberate:
// factor ids are derived from statement line numbers (F12..F16 below).
#pragma once

namespace fixtures {

// Hierarchical eight-schools variant: a non-distribution prior on mu,
// an unconstrained normal prior on tau, vectorized likelihood.
inline const char* eight_schools = R"(data {
  int J;
  real y[J];
  real sigma[J];
}
parameters {
  real mu;
  real tau;
  real theta[J];
}
model {
  target += -(mu - 1)^2;
  tau ~ normal(1, 1);
  theta ~ normal(mu, tau);
  y ~ normal(theta, sigma);
}
)";

// Factors F12..F16 land on lines 12..16. F15 and F16 together form an
// inverse-Gaussian density on e with mean c and shape d, so the transform
// finds two valid edge selection sets (F16 with e, or F16 with c).
inline const char* query_model = R"(data {
  int N;
  real y[N];
}
parameters {
  real b;
  real c;
  real d;
  real e;
}
model {
  b ~ normal(1, e);
  target += -(c - 3)^2;
  target += -(d - 4)^2;
  target += 0.5 * log(d) - 1.5 * log(e);
  target += -(d * square(e - c)) / (2 * square(c) * e);
  y ~ normal(b, 1);
}
)";

// Two parameters, three factors, two valid orderings.
inline const char* two_solutions = R"(parameters {
  real x;
  real y;
}
model {
  target += -(x - 1)^2;
  target += -(y - 2)^2;
  target += -square(x - y) / 4;
}
)";

// Pairwise coupling over three parameters: every assignment closes a cycle,
// so no forward-sampling form exists.
inline const char* triangle = R"(parameters {
  real x;
  real y;
  real z;
}
model {
  target += -square(x - y);
  target += -square(x - z);
  target += -square(y - z);
}
)";

// Conjugate normal-normal model with a closed-form posterior; used by the
// calibration self-consistency checks.
inline const char* normal_normal = R"(data {
  real y;
}
parameters {
  real mu;
}
model {
  mu ~ normal(0, 1);
  y ~ normal(mu, 1);
}
)";

// Intermediate variable between a parameter and the density that uses it.
inline const char* intermediate = R"(parameters {
  real mu;
  real x;
}
transformed parameters {
  real m;
  m = mu * 2;
}
model {
  target += -(mu - 1)^2;
  target += normal_lpdf(x | m, 1);
}
)";

}  // namespace fixtures
