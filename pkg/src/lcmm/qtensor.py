"""Pointwise algebra of the symmetric traceless order tensor.

The five independent components are stored in the last axis of an array,
``q[..., 0:5] = (q1, q2, q3, q4, q5)``, laid out as::

    [[q1, q2, q3],
     [q2, q4, q5],
     [q3, q5, -q1-q4]]

Every function here accepts either a :class:`QTensor` or an array whose last
axis has length 5, and is vectorised over the leading axes where that makes
sense.

Two-dimensional problems live in the plane spanned by tensor axes 1 and 3
(``PLANE_AXES``); tensor axis 2 is the invariant out-of-plane direction.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

SQRT6 = np.sqrt(6.0)
SQRT3_2 = np.sqrt(1.5)

# tensor axes spanned by the (x, y) coordinates of the computational plane
PLANE_AXES = (0, 2)

EPS_ISO = 1e-14
DEGENERATE_GAP = 1e-12


@dataclass(frozen=True)
class QTensor:
    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0
    q4: float = 0.0
    q5: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.array)):
            raise ValueError("QTensor components must be finite")

    @property
    def array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3, self.q4, self.q5], dtype=float)

    def matrix(self) -> np.ndarray:
        return to_matrix(self.array)

    @classmethod
    def from_array(cls, q) -> "QTensor":
        q = np.asarray(q, dtype=float)
        return cls(*(float(v) for v in q))

    @classmethod
    def from_matrix(cls, Q) -> "QTensor":
        return cls.from_array(from_matrix(Q))


@dataclass(frozen=True)
class DirectorFrame:
    """Orthonormal eigenvector triple with the scalar order parameters S, T."""

    l: np.ndarray
    m: np.ndarray
    n: np.ndarray
    S: float
    T: float

    def reconstruct(self) -> np.ndarray:
        return from_frame(self.n, self.m, self.l, self.S, self.T)


def _as_array(q) -> np.ndarray:
    if isinstance(q, QTensor):
        return q.array
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 5:
        raise ValueError(f"expected last axis of length 5, got shape {q.shape}")
    return q


def to_matrix(q) -> np.ndarray:
    """Expand components (..., 5) into explicit 3x3 matrices (..., 3, 3)."""
    q = _as_array(q)
    q1, q2, q3, q4, q5 = np.moveaxis(q, -1, 0)
    Q = np.empty(q.shape[:-1] + (3, 3))
    Q[..., 0, 0] = q1
    Q[..., 0, 1] = Q[..., 1, 0] = q2
    Q[..., 0, 2] = Q[..., 2, 0] = q3
    Q[..., 1, 1] = q4
    Q[..., 1, 2] = Q[..., 2, 1] = q5
    Q[..., 2, 2] = -q1 - q4
    return Q


def from_matrix(Q) -> np.ndarray:
    """Pack a symmetric traceless matrix (..., 3, 3) into components (..., 5)."""
    Q = np.asarray(Q, dtype=float)
    Qs = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    return np.stack(
        [Qs[..., 0, 0], Qs[..., 0, 1], Qs[..., 0, 2], Qs[..., 1, 1], Qs[..., 1, 2]], axis=-1
    )


def plane_to_tensor(v) -> np.ndarray:
    """Map a vector given as (in-plane x, in-plane y, out-of-plane) to tensor axes."""
    v = np.asarray(v, dtype=float)
    return v[..., [0, 2, 1]]


def uniaxial_from_director(n, S) -> np.ndarray:
    """Uniaxial tensor sqrt(3/2) S (n n - I/3), normalised so that tr(Q^2) = S^2.

    ``n`` is a unit 3-vector in tensor axes (or an array of them); ``S`` a
    scalar or broadcastable array.
    """
    n = np.asarray(n, dtype=float)
    norm = np.linalg.norm(n, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-12):
        raise ValueError("director must have unit length")
    S = np.asarray(S, dtype=float)
    c = SQRT3_2 * S
    nx, ny, nz = np.moveaxis(n, -1, 0)
    return np.stack(
        [
            c * (nx * nx - 1.0 / 3.0),
            c * nx * ny,
            c * nx * nz,
            c * (ny * ny - 1.0 / 3.0),
            c * ny * nz,
        ],
        axis=-1,
    )


def trace_q2(q) -> np.ndarray:
    q = _as_array(q)
    q1, q2, q3, q4, q5 = np.moveaxis(q, -1, 0)
    return 2.0 * (q1 * q1 + q1 * q4 + q4 * q4) + 2.0 * (q2 * q2 + q3 * q3 + q5 * q5)


def determinant(q) -> np.ndarray:
    q = _as_array(q)
    q1, q2, q3, q4, q5 = np.moveaxis(q, -1, 0)
    r = -q1 - q4
    return q1 * q4 * r - q1 * q5 * q5 - q2 * q2 * r + 2.0 * q2 * q3 * q5 - q3 * q3 * q4


def trace_q3(q) -> np.ndarray:
    # Cayley-Hamilton for traceless matrices: tr(Q^3) = 3 det(Q)
    return 3.0 * determinant(q)


def grad_trace_q2(q) -> np.ndarray:
    q = _as_array(q)
    q1, q2, q3, q4, q5 = np.moveaxis(q, -1, 0)
    return np.stack([4 * q1 + 2 * q4, 4 * q2, 4 * q3, 4 * q4 + 2 * q1, 4 * q5], axis=-1)


HESS_TRACE_Q2 = np.array(
    [
        [4.0, 0, 0, 2, 0],
        [0, 4, 0, 0, 0],
        [0, 0, 4, 0, 0],
        [2, 0, 0, 4, 0],
        [0, 0, 0, 0, 4],
    ]
)


def grad_determinant(q) -> np.ndarray:
    q = _as_array(q)
    q1, q2, q3, q4, q5 = np.moveaxis(q, -1, 0)
    r = -q1 - q4
    return np.stack(
        [
            q4 * r - q1 * q4 - q5 * q5 + q2 * q2,
            -2 * q2 * r + 2 * q3 * q5,
            2 * q2 * q5 - 2 * q3 * q4,
            q1 * r - q1 * q4 + q2 * q2 - q3 * q3,
            -2 * q1 * q5 + 2 * q2 * q3,
        ],
        axis=-1,
    )


def hess_determinant(q) -> np.ndarray:
    q = _as_array(q)
    q1, q2, q3, q4, q5 = np.moveaxis(q, -1, 0)
    H = np.zeros(q.shape[:-1] + (5, 5))
    H[..., 0, 0] = -2 * q4
    H[..., 0, 1] = 2 * q2
    H[..., 0, 3] = -2 * (q1 + q4)
    H[..., 0, 4] = -2 * q5
    H[..., 1, 1] = 2 * (q1 + q4)
    H[..., 1, 2] = 2 * q5
    H[..., 1, 3] = 2 * q2
    H[..., 1, 4] = 2 * q3
    H[..., 2, 2] = -2 * q4
    H[..., 2, 3] = -2 * q3
    H[..., 2, 4] = 2 * q2
    H[..., 3, 3] = -2 * q1
    H[..., 4, 4] = -2 * q1
    iu = np.triu_indices(5, 1)
    H[..., iu[1], iu[0]] = H[..., iu[0], iu[1]]
    return H


def order_parameter(q) -> np.ndarray:
    return np.sqrt(trace_q2(q))


_SYM = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_SYM_W = np.array([1.0, 1.0, 1.0, np.sqrt(2.0), np.sqrt(2.0), np.sqrt(2.0)])
_MINORS = np.array(list(itertools.combinations(range(6), 3)))


def discriminant(q) -> np.ndarray:
    """prod_{i<j} (lambda_i - lambda_j)^2, equal to tr(Q^2)^3 / 2 - 3 tr(Q^3)^2.

    Evaluated as the Gram determinant of {I, Q, Q^2} under the Frobenius
    product, expanded by Cauchy-Binet into a sum of squared 3x3 minors. Each
    minor vanishes to rounding for a uniaxial tensor, so unlike the invariant
    difference this does not lose all significant digits near uniaxiality.
    """
    Q = to_matrix(q)
    Q2 = Q @ Q
    eye = np.broadcast_to(np.eye(3), Q.shape)
    V = np.stack([np.stack([m[..., i, j] for i, j in _SYM], axis=-1) * _SYM_W for m in (eye, Q, Q2)], axis=-1)
    minors = np.linalg.det(V[..., _MINORS, :])  # (..., 20)
    return (minors * minors).sum(-1)


def _beta_squared(q, t2):
    return np.clip(2.0 * discriminant(q) / t2**3, 0.0, 1.0)


def biaxiality(q) -> float:
    """Invariant biaxiality [1 - 6 tr(Q^3)^2 / tr(Q^2)^3]^(1/2) of a single tensor.

    The bracket equals 2 * discriminant / tr(Q^2)^3, which is how it is
    evaluated. Raises ``ValueError`` at (numerically) isotropic states, where
    the measure is undefined; use :func:`biaxiality_field` for arrays, which
    returns 0 there.
    """
    t2 = float(trace_q2(q))
    if t2 <= EPS_ISO:
        raise ValueError("biaxiality undefined at an isotropic state (tr Q^2 <= %g)" % EPS_ISO)
    return float(np.sqrt(_beta_squared(_as_array(q), t2)))


def biaxiality_field(q) -> np.ndarray:
    """Vectorised biaxiality with the isotropic guard mapped to 0."""
    q = _as_array(q)
    t2 = trace_q2(q)
    iso = t2 <= EPS_ISO
    safe = np.where(iso, 1.0, t2)
    return np.where(iso, 0.0, np.sqrt(_beta_squared(q, safe)))


def eigenvalues(q) -> np.ndarray:
    """Eigenvalues in descending order, (..., 3), by the trigonometric method."""
    q = _as_array(q)
    # scale to unit size first so that p**3 cannot underflow
    scale = np.abs(q).max(axis=-1)
    scale = np.where(scale > 0, scale, 1.0)
    qs = q / scale[..., None]
    p = np.sqrt(trace_q2(qs) / 6.0)
    safe = np.where(p > 0, p, 1.0)
    r = np.clip(determinant(qs) / (2.0 * safe**3), -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = 2.0 * p * np.cos(phi)
    e3 = 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = -e1 - e3
    return np.stack([e1, e2, e3], axis=-1) * scale[..., None]


def _sign_fix(v: np.ndarray) -> np.ndarray:
    k = np.argmax(np.abs(v))
    return -v if v[k] < 0 else v


def _null_vector(A: np.ndarray, mu: float) -> np.ndarray | None:
    B = A - mu * np.eye(3)
    c = [np.cross(B[0], B[1]), np.cross(B[0], B[2]), np.cross(B[1], B[2])]
    norms = [np.linalg.norm(v) for v in c]
    k = int(np.argmax(norms))
    scale = max(np.abs(B).max(), 1e-300)
    if norms[k] <= 1e-14 * scale * scale:
        return None
    return c[k] / norms[k]


def _complement_basis(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal basis of the plane orthogonal to ``v``."""
    cands = []
    for e in np.eye(3):
        w = e - np.dot(e, v) * v
        cands.append(w)
    order = np.argsort([-np.linalg.norm(w) for w in cands], kind="stable")
    a = cands[order[0]] / np.linalg.norm(cands[order[0]])
    b = cands[order[1]] - np.dot(cands[order[1]], a) * a
    b = b / np.linalg.norm(b)
    a, b = _sign_fix(a), _sign_fix(b)
    pair = sorted([a, b], key=lambda x: tuple(x), reverse=True)
    return pair[0], pair[1]


def eigen_frame(q) -> DirectorFrame:
    """Director frame (l, m, n) and order parameters (S, T) of one tensor.

    With the normalisation tr(Q^2) = S^2 of a uniaxial state, the frame
    parameterisation reads

        Q = sqrt(3/2) [ S (n n - I/3) + T (m m - l l) ],

    so that for eigenvalues mu_n >= mu_m >= mu_l:

        S = sqrt(3/2) mu_n,        T = (mu_m - mu_l) / sqrt(6).
    """
    qa = _as_array(q)
    A = to_matrix(qa)
    mu = eigenvalues(qa)
    mu_n, mu_m, mu_l = (float(v) for v in mu)
    S = SQRT3_2 * mu_n
    T = (mu_m - mu_l) / SQRT6

    top_deg = mu_n - mu_m < DEGENERATE_GAP
    low_deg = mu_m - mu_l < DEGENERATE_GAP
    if top_deg and low_deg:
        e = np.eye(3)
        return DirectorFrame(l=e[2], m=e[1], n=e[0], S=0.0 if abs(S) < DEGENERATE_GAP else S, T=0.0)

    if top_deg:
        l = _null_vector(A, mu_l)
        l = _sign_fix(l)
        n, m = _complement_basis(l)
    elif low_deg:
        n = _sign_fix(_null_vector(A, mu_n))
        m, l = _complement_basis(n)
    else:
        n = _null_vector(A, mu_n)
        l = _null_vector(A, mu_l)
        l = l - np.dot(l, n) * n
        l /= np.linalg.norm(l)
        m = np.cross(l, n)
        n, m, l = _sign_fix(n), _sign_fix(m), _sign_fix(l)
    return DirectorFrame(l=l, m=m, n=n, S=S, T=T)


def from_frame(n, m, l, S, T) -> np.ndarray:
    n, m, l = (np.asarray(v, dtype=float) for v in (n, m, l))
    M = SQRT3_2 * (S * (np.outer(n, n) - np.eye(3) / 3.0) + T * (np.outer(m, m) - np.outer(l, l)))
    return from_matrix(M)


def inplane_angle(q) -> np.ndarray:
    """Orientation angle in (-pi/2, pi/2] of the principal axis of the in-plane 2x2 block."""
    q = _as_array(q)
    qxx = q[..., 0]
    qxy = q[..., 2]
    qyy = -q[..., 0] - q[..., 3]
    return 0.5 * np.arctan2(2.0 * qxy, qxx - qyy)
