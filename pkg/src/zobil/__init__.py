"""Derivative-free stochastic proximal-gradient bilevel learning.

A zeroth-order method for composite problems min_y E[H(y, xi)] + r1(y)
where H(y, xi) is a noisy black box, typically the reconstruction loss of
an inner variational problem solved to certified accuracy.  The gradient of
the Gaussian-smoothed objective is estimated from paired function values,
and the outer loop is a stochastic proximal-gradient iteration with
decreasing steps and growing mini-batches.
"""

__version__ = "0.1.0"
