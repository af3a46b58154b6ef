"""Delta-constrained convolution integrals over hyperbolic surfaces."""
