# Numerical core: grids, potentials, kernel, projection, estimator, sampler, fixed point
