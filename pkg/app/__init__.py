# ABF torus sampler package
