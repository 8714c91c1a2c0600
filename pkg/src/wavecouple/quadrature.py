"""Quadrature rules on the reference triangle and for singular triangle pairs.

Reference triangle ``{0 <= x2 <= x1 <= 1}`` mapped to a physical triangle
``(P0, P1, P2)`` by ``P0 + x1 (P1 - P0) + x2 (P2 - P1)``; physical integrals
pick up the factor ``2 * area``.  The P1 shape functions in these
coordinates are ``(1 - x1, x1 - x2, x2)``.

The singular rules follow Sauter & Schwab, *Boundary Element Methods*
(Springer 2011), ch. 5.2: the double integral over a pair of reference
triangles is split into simplices on which a Duffy-type map produces a
Jacobian that cancels the ``1/|x - y|`` singularity.  Conventions for the
pair geometry:

* identical: both triangles use the same vertex order;
* common edge: the shared edge is ``P0 P1`` in both triangles;
* common vertex: the shared vertex is ``P0`` in both triangles.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

MIN_ORDER = 1


def gauss_legendre_01(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@functools.lru_cache(maxsize=None)
def triangle_rule(q: int):
    """Collapsed tensor Gauss rule with ``q*q`` points; weights sum to 1/2."""
    if q < MIN_ORDER:
        raise InvalidParameterError(f"quadrature order must be >= {MIN_ORDER}, got {q}")
    t, w = gauss_legendre_01(q)
    u, v = np.meshgrid(t, t, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    pts = np.column_stack([u.ravel(), (u * v).ravel()])
    wts = (wu * wv * u).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def shape_p1(pts):
    """P1 shape values ``(n, 3)`` at reference points ``(n, 2)``."""
    x1, x2 = pts[:, 0], pts[:, 1]
    return np.column_stack([1.0 - x1, x1 - x2, x2])


@dataclass(frozen=True)
class PairRule:
    """Points on two reference triangles and weights for their product."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray

    @property
    def size(self):
        return len(self.w)


def _hypercube(q):
    t, w = gauss_legendre_01(q)
    g = np.meshgrid(t, t, t, t, indexing="ij")
    gw = np.meshgrid(w, w, w, w, indexing="ij")
    xi, e1, e2, e3 = (a.ravel() for a in g)
    wt = np.prod([a.ravel() for a in gw], axis=0)
    return xi, e1, e2, e3, wt


def _pack(regions, wt):
    xs, ys, ws = [], [], []
    for x1, x2, y1, y2, jac in regions:
        xs.append(np.column_stack([x1, x2]))
        ys.append(np.column_stack([y1, y2]))
        ws.append(wt * jac)
    rule = PairRule(np.concatenate(xs), np.concatenate(ys), np.concatenate(ws))
    for a in (rule.x, rule.y, rule.w):
        a.setflags(write=False)
    return rule


@functools.lru_cache(maxsize=None)
def identical_rule(q: int) -> PairRule:
    if q < MIN_ORDER:
        raise InvalidParameterError(f"quadrature order must be >= {MIN_ORDER}, got {q}")
    xi, a, b, c, wt = _hypercube(q)
    jac = xi**3 * a**2 * b
    regions = [
        (xi, xi * (1 - a + a * b), xi * (1 - a * b * c), xi * (1 - a), jac),
        (xi * (1 - a * b * c), xi * (1 - a), xi, xi * (1 - a + a * b), jac),
        (xi, xi * a * (1 - b + b * c), xi * (1 - a * b), xi * a * (1 - b), jac),
        (xi * (1 - a * b), xi * a * (1 - b), xi, xi * a * (1 - b + b * c), jac),
        (xi * (1 - a * b * c), xi * a * (1 - b * c), xi, xi * a * (1 - b), jac),
        (xi, xi * a * (1 - b), xi * (1 - a * b * c), xi * a * (1 - b * c), jac),
    ]
    return _pack(regions, wt)


@functools.lru_cache(maxsize=None)
def edge_rule(q: int) -> PairRule:
    if q < MIN_ORDER:
        raise InvalidParameterError(f"quadrature order must be >= {MIN_ORDER}, got {q}")
    xi, a, b, c, wt = _hypercube(q)
    j1 = xi**3 * a**2
    j2 = j1 * b
    regions = [
        (xi, xi * a * c, xi * (1 - a * b), xi * a * (1 - b), j1),
        (xi, xi * a, xi * (1 - a * b * c), xi * a * b * (1 - c), j2),
        (xi * (1 - a * b), xi * a * (1 - b), xi, xi * a * b * c, j2),
        (xi * (1 - a * b * c), xi * a * b * (1 - c), xi, xi * a, j2),
        (xi * (1 - a * b * c), xi * a * (1 - b * c), xi, xi * a * b, j2),
    ]
    return _pack(regions, wt)


@functools.lru_cache(maxsize=None)
def vertex_rule(q: int) -> PairRule:
    if q < MIN_ORDER:
        raise InvalidParameterError(f"quadrature order must be >= {MIN_ORDER}, got {q}")
    xi, a, b, c, wt = _hypercube(q)
    jac = xi**3 * b
    regions = [
        (xi, xi * a, xi * b, xi * b * c, jac),
        (xi * b, xi * b * c, xi, xi * a, jac),
    ]
    return _pack(regions, wt)


def map_points(tri_xyz, pts):
    """Map reference points ``(n, 2)`` through triangles ``(m, 3, 3)`` -> ``(m, n, 3)``."""
    p0, p1, p2 = tri_xyz[:, 0], tri_xyz[:, 1], tri_xyz[:, 2]
    return (
        p0[:, None, :]
        + pts[None, :, 0, None] * (p1 - p0)[:, None, :]
        + pts[None, :, 1, None] * (p2 - p1)[:, None, :]
    )
