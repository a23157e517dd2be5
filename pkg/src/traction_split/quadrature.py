"""Quadrature rules used throughout assembly.

The 6-point triangle rule is exact for polynomials of degree 4, the 3-point
Gauss rule on edges for degree 5 -- enough for every polynomial integrand
arising from the P2/P1 pair.
"""
from __future__ import annotations

import numpy as np


def triangle_rule():
    """Degree-4 rule: reference points (xi, eta) and weights summing to one.

    Integrate with sum(w_q * f(x_q)) * area(T).
    """
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    bary = np.array(
        [
            [1.0 - 2.0 * a1, a1, a1],
            [a1, 1.0 - 2.0 * a1, a1],
            [a1, a1, 1.0 - 2.0 * a1],
            [1.0 - 2.0 * a2, a2, a2],
            [a2, 1.0 - 2.0 * a2, a2],
            [a2, a2, 1.0 - 2.0 * a2],
        ]
    )
    weights = np.array([w1, w1, w1, w2, w2, w2])
    points = bary[:, 1:]  # (xi, eta) = (lambda_1, lambda_2)
    return points, weights


def edge_rule():
    """3-point Gauss rule on [0, 1]: parameters and weights summing to one."""
    s = 0.5 * np.sqrt(0.6)
    points = np.array([0.5 - s, 0.5, 0.5 + s])
    weights = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
    return points, weights
