"""Quadrature rules: symmetric Gauss rules on triangles, 1D Gauss-Legendre,
and Sauter-Schwab relative-coordinate transforms for singular triangle pairs.

Triangle rules are given in barycentric coordinates on an abstract triangle
(v0, v1, v2); weights sum to 1 and are to be multiplied by the triangle area.

The Sauter-Schwab maps return 4D tensor-product quadrature nodes mapped to
pairs of points on two triangles sharing a face, an edge or a vertex.  The
parameter domain is the Sauter reference triangle {0 <= u2 <= u1 <= 1}; the
chart onto a physical triangle (a, b, c) is x = a + u1*(b-a) + u2*(c-b).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# ---------------------------------------------------------------------------
# Triangle rules (Dunavant). Each entry: list of (weight, multiplicity-group)
# where a group is either a 3-permutation of (a, a, 1-2a) or a 6-permutation
# of (a, b, c).
# ---------------------------------------------------------------------------

def _perm3(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _perm6(a, b, c):
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


_TRI_RULES = {
    1: [(1.0, [(1 / 3, 1 / 3, 1 / 3)])],
    2: [(1 / 3, _perm3(1 / 6))],
    4: [
        (0.223381589678011, _perm3(0.445948490915965)),
        (0.109951743655322, _perm3(0.091576213509771)),
    ],
    5: [
        (0.225, [(1 / 3, 1 / 3, 1 / 3)]),
        (0.132394152788506, _perm3(0.470142064105115)),
        (0.125939180544827, _perm3(0.101286507323456)),
    ],
    6: [
        (0.116786275726379, _perm3(0.249286745170910)),
        (0.050844906370207, _perm3(0.063089014491502)),
        (0.082851075618374, _perm6(0.310352451033785, 0.636502499121399,
                                   0.053145049844816)),
    ],
    8: [
        (0.144315607677787, [(1 / 3, 1 / 3, 1 / 3)]),
        (0.0950916342672846, _perm3(0.459292588292723)),
        (0.103217370534718, _perm3(0.170569307751760)),
        (0.032458497623198, _perm3(0.050547228317031)),
        (0.027230314174435, _perm6(0.263112829634638, 0.728492392955404,
                                   0.008394777409958)),
    ],
}


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Barycentric points and weights exact for polynomials of `degree`.

    Returns (bary, w): bary has shape (n, 3), w shape (n,), sum(w) == 1.
    """
    for d in sorted(_TRI_RULES):
        if d >= degree:
            break
    else:
        raise ValueError(f"no triangle rule of degree >= {degree}")
    pts, wts = [], []
    for w, group in _TRI_RULES[d]:
        for p in group:
            pts.append(p)
            wts.append(w)
    bary = np.array(pts)
    w = np.array(wts)
    return bary, w / w.sum() * 1.0


@lru_cache(maxsize=None)
def gauss1d(n: int):
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# ---------------------------------------------------------------------------
# Sauter-Schwab transforms.
#
# All maps take tensor Gauss points in [0,1]^4 and produce lists of
# (u_test, u_trial, weight) where u are coordinates in the Sauter reference
# triangle {0 <= u2 <= u1 <= 1}.  The weights include the Jacobians of the
# transforms but not the physical-triangle Jacobians (2*area each).
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _tensor4(n: int):
    x, w = gauss1d(n)
    e1, e2, e3, xi = np.meshgrid(x, x, x, x, indexing="ij")
    w4 = (w[:, None, None, None] * w[None, :, None, None]
          * w[None, None, :, None] * w[None, None, None, :])
    return (e1.ravel(), e2.ravel(), e3.ravel(), xi.ravel(), w4.ravel())


@lru_cache(maxsize=None)
def sauter_schwab_coincident(n: int):
    """Quadrature for identical triangles.  Returns (u, v, w) arrays."""
    e1, e2, e3, xi, w0 = _tensor4(n)
    jac = w0 * xi ** 3 * e1 ** 2 * e2
    regions = [
        ((xi, xi * (1 - e1 + e1 * e2)),
         (xi * (1 - e1 * e2 * e3), xi * (1 - e1))),
        ((xi * (1 - e1 * e2 * e3), xi * (1 - e1)),
         (xi, xi * (1 - e1 + e1 * e2))),
        ((xi, xi * (e1 - e1 * e2 + e1 * e2 * e3)),
         (xi * (1 - e1 * e2), xi * (e1 - e1 * e2))),
        ((xi * (1 - e1 * e2), xi * (e1 - e1 * e2)),
         (xi, xi * (e1 - e1 * e2 + e1 * e2 * e3))),
        ((xi * (1 - e1 * e2 * e3), xi * (e1 - e1 * e2 * e3)),
         (xi, xi * (e1 - e1 * e2))),
        ((xi, xi * (e1 - e1 * e2)),
         (xi * (1 - e1 * e2 * e3), xi * (e1 - e1 * e2 * e3))),
    ]
    return _stack_regions(regions, [jac] * 6)


@lru_cache(maxsize=None)
def sauter_schwab_edge(n: int):
    """Quadrature for triangles sharing the edge u2 = 0 (same direction)."""
    e1, e2, e3, xi, w0 = _tensor4(n)
    j1 = w0 * xi ** 3 * e1 ** 2
    j2 = w0 * xi ** 3 * e1 ** 2 * e2
    regions = [
        ((xi, xi * e1 * e3),
         (xi * (1 - e1 * e2), xi * e1 * (1 - e2))),
        ((xi, xi * e1),
         (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3))),
        ((xi * (1 - e1 * e2), xi * e1 * (1 - e2)),
         (xi, xi * e1 * e2 * e3)),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)),
         (xi, xi * e1)),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)),
         (xi, xi * e1 * e2)),
    ]
    return _stack_regions(regions, [j1, j2, j2, j2, j2])


@lru_cache(maxsize=None)
def sauter_schwab_vertex(n: int):
    """Quadrature for triangles sharing the vertex at the chart origin."""
    e1, e2, e3, xi, w0 = _tensor4(n)
    jac = w0 * xi ** 3 * e2
    regions = [
        ((xi, xi * e1), (xi * e2, xi * e2 * e3)),
        ((xi * e2, xi * e2 * e3), (xi, xi * e1)),
    ]
    return _stack_regions(regions, [jac, jac])


def _stack_regions(regions, jacs):
    us, vs, ws = [], [], []
    for ((u1, u2), (v1, v2)), j in zip(regions, jacs):
        us.append(np.stack([u1, u2], axis=-1))
        vs.append(np.stack([v1, v2], axis=-1))
        ws.append(j)
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ws)


def sauter_to_bary(u: np.ndarray) -> np.ndarray:
    """Convert Sauter coordinates (u1, u2) to barycentric (l0, l1, l2)
    w.r.t. the chart triangle (a, b, c): x = a + u1*(b-a) + u2*(c-b)."""
    u1 = u[..., 0]
    u2 = u[..., 1]
    return np.stack([1.0 - u1, u1 - u2, u2], axis=-1)
