"""Grids, coefficient tuples and ellipticity constants.

Coefficients are cellwise constant: a tuple (A, b, c, V) is stored as one
array per slot with the grid shape leading and the vector/matrix axes
trailing.  Essential infima over the domain therefore become plain minima
over cells.  All containers are frozen after construction and safe to share
between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

_BCS = (DIRICHLET, NEUMANN)


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def ellipticity_constants(A):
    """Lower and upper ellipticity constants of a complex square matrix.

    Returns ``(lam, Lam)`` where ``lam`` is the minimum over the unit sphere
    of ``Re<A xi, xi>`` (the smallest eigenvalue of the Hermitian part) and
    ``Lam`` is the operator norm (largest singular value).  ``lam <= 0``
    means the matrix is not elliptic; no error is raised here so that
    perturbed matrices can be inspected, but consumers that require
    ellipticity must check the sign.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    herm = (A + A.conj().T) / 2.0
    lam = float(np.linalg.eigvalsh(herm)[0])
    Lam = float(np.linalg.norm(A, 2))
    return lam, Lam


@dataclass(frozen=True)
class ComplexMatrix:
    """A complex d x d matrix with cached ellipticity constants."""

    entries: np.ndarray
    lam: float
    Lam: float

    @classmethod
    def from_array(cls, A):
        A = np.asarray(A, dtype=complex)
        lam, Lam = ellipticity_constants(A)
        return cls(entries=_frozen(A), lam=lam, Lam=Lam)

    @property
    def d(self):
        return self.entries.shape[0]

    @property
    def is_elliptic(self):
        return self.lam > 0.0

    def adjoint(self):
        return ComplexMatrix.from_array(self.entries.conj().T)


@dataclass(frozen=True)
class GridDomain:
    """A 1D interval or 2D rectangle split into equal cells.

    ``extents`` is a tuple of per-axis ``(lo, hi)`` pairs and ``n_cells`` a
    tuple of per-axis cell counts.  Unknowns and coefficients live at cell
    centers; ``bc`` selects Dirichlet or Neumann handling of the boundary.
    """

    extents: tuple
    n_cells: tuple
    bc: str = DIRICHLET

    def __post_init__(self):
        if self.bc not in _BCS:
            raise ValueError(f"bc must be one of {_BCS}, got {self.bc!r}")
        if len(self.extents) != len(self.n_cells):
            raise ValueError("extents and n_cells must have the same length")
        if self.dim not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        for (lo, hi), n in zip(self.extents, self.n_cells):
            if not hi > lo:
                raise ValueError("extents must have positive length")
            if n < 2:
                raise ValueError("need at least 2 cells per axis")

    @classmethod
    def interval(cls, lo, hi, n, bc=DIRICHLET):
        return cls(extents=((float(lo), float(hi)),), n_cells=(int(n),), bc=bc)

    @classmethod
    def rectangle(cls, ext_x, ext_y, nx, ny, bc=DIRICHLET):
        return cls(
            extents=(tuple(map(float, ext_x)), tuple(map(float, ext_y))),
            n_cells=(int(nx), int(ny)),
            bc=bc,
        )

    @property
    def dim(self):
        return len(self.n_cells)

    @property
    def shape(self):
        return tuple(self.n_cells)

    @property
    def h(self):
        """Cell widths per axis."""
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.extents, self.n_cells))

    @property
    def cell_volume(self):
        v = 1.0
        for h in self.h:
            v *= h
        return v

    def centers(self, axis=0):
        (lo, hi), n = self.extents[axis], self.n_cells[axis]
        h = (hi - lo) / n
        return lo + h * (np.arange(n) + 0.5)

    def meshgrid(self):
        axes = [self.centers(k) for k in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")


@dataclass(frozen=True)
class SubcriticalityCert:
    """Constants (alpha, sigma) witnessing strong subcriticality of V."""

    alpha: float
    sigma: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError("sigma must lie in [0, 1)")

    def as_dict(self):
        return {"alpha": self.alpha, "sigma": self.sigma}


@dataclass(frozen=True)
class CoefficientTuple:
    """Cellwise fields (A, b, c, V) over a grid domain.

    Shapes: ``A`` is ``grid_shape + (d, d)``, ``b`` and ``c`` are
    ``grid_shape + (d,)`` and ``V`` is ``grid_shape``.  The vector dimension
    ``d`` is independent of the grid dimension for pure matrix algebra, but
    PDE assembly requires them to match.
    """

    domain: GridDomain
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    V: np.ndarray
    d: int = field(init=False, default=0)

    def __post_init__(self):
        shape = self.domain.shape
        A = np.asarray(self.A, dtype=complex)
        d = A.shape[-1]
        if A.shape != shape + (d, d):
            raise ValueError(f"A must have shape {shape + (d, d)}, got {A.shape}")
        b = np.asarray(self.b, dtype=complex)
        c = np.asarray(self.c, dtype=complex)
        V = np.asarray(self.V, dtype=float)
        if b.shape != shape + (d,) or c.shape != shape + (d,):
            raise ValueError("b and c must have shape grid_shape + (d,)")
        if V.shape != shape:
            raise ValueError("V must have the grid shape")
        for name, arr in (("A", A), ("b", b), ("c", c), ("V", V)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "V", _frozen(V))
        object.__setattr__(self, "d", d)

    @classmethod
    def constant(cls, domain, A, b=None, c=None, V=0.0):
        """Broadcast constant per-cell values over the whole grid."""
        A = np.atleast_2d(np.asarray(A, dtype=complex))
        d = A.shape[-1]
        shape = domain.shape
        if b is None:
            b = np.zeros(d, dtype=complex)
        if c is None:
            c = np.zeros(d, dtype=complex)
        b = np.broadcast_to(np.asarray(b, dtype=complex), (d,))
        c = np.broadcast_to(np.asarray(c, dtype=complex), (d,))
        A_f = np.broadcast_to(A, shape + (d, d)).copy()
        b_f = np.broadcast_to(b, shape + (d,)).copy()
        c_f = np.broadcast_to(c, shape + (d,)).copy()
        V_f = np.broadcast_to(np.asarray(V, dtype=float), shape).copy()
        return cls(domain=domain, A=A_f, b=b_f, c=c_f, V=V_f)

    @property
    def n_cells_total(self):
        return int(np.prod(self.domain.shape))

    @property
    def V_plus(self):
        return np.maximum(self.V, 0.0)

    @property
    def V_minus(self):
        return np.maximum(-self.V, 0.0)

    def cells(self):
        """Iterate over flat cell indices and per-cell (A, b, c, V)."""
        shape = self.domain.shape
        A = self.A.reshape(-1, self.d, self.d)
        b = self.b.reshape(-1, self.d)
        c = self.c.reshape(-1, self.d)
        V = self.V.reshape(-1)
        for i in range(int(np.prod(shape))):
            yield i, (A[i], b[i], c[i], V[i])


def tuple_fields(coeffs, x):
    """Per-cell values ``(A, b, c, V)`` at grid index ``x`` (tuple or int)."""
    if np.isscalar(x):
        x = (int(x),)
    x = tuple(int(i) for i in x)
    shape = coeffs.domain.shape
    if len(x) != len(shape) or any(not 0 <= i < n for i, n in zip(x, shape)):
        raise IndexError(f"index {x} outside grid of shape {shape}")
    return coeffs.A[x], coeffs.b[x], coeffs.c[x], coeffs.V[x]


def v_split(V):
    """Split a signed potential value/array into (V_plus, V_minus)."""
    V = np.asarray(V, dtype=float)
    return np.maximum(V, 0.0), np.maximum(-V, 0.0)


# ---------------------------------------------------------------------------
# JSON interchange.  Complex scalars are [re, im] pairs; A, b, c, V may be
# constants (broadcast over cells) or nested per-cell lists.

def _decode_complex(obj):
    if isinstance(obj, (int, float)):
        return complex(obj)
    if isinstance(obj, list) and len(obj) == 2 and all(
        isinstance(t, (int, float)) for t in obj
    ):
        return complex(obj[0], obj[1])
    if isinstance(obj, list):
        return [_decode_complex(t) for t in obj]
    raise ValueError(f"cannot decode complex entry {obj!r}")


def _encode_complex(arr):
    arr = np.asarray(arr)
    if arr.ndim == 0:
        z = complex(arr)
        return [z.real, z.imag]
    return [_encode_complex(a) for a in arr]


def domain_from_dict(doc):
    dim = int(doc["dim"])
    extents = doc["extents"]
    if dim == 1 and not isinstance(extents[0], list):
        extents = [extents]
    n_cells = doc["n_cells"]
    if isinstance(n_cells, int):
        n_cells = [n_cells]
    return GridDomain(
        extents=tuple(tuple(map(float, e)) for e in extents),
        n_cells=tuple(int(n) for n in n_cells),
        bc=str(doc["bc"]).lower(),
    )


def coefficients_from_dict(doc):
    """Build (domain, CoefficientTuple) from a plain JSON document."""
    domain = domain_from_dict(doc)
    shape = domain.shape

    A_raw = np.asarray(_decode_complex(doc["A"]), dtype=complex)
    A_raw = np.atleast_2d(A_raw)
    d = A_raw.shape[-1]
    if A_raw.shape == (d, d):
        A = np.broadcast_to(A_raw, shape + (d, d)).copy()
    else:
        A = A_raw.reshape(shape + (d, d))

    def vec(key):
        raw = np.asarray(_decode_complex(doc.get(key, [0.0] * d)), dtype=complex)
        raw = np.atleast_1d(raw)
        if raw.shape == (d,):
            return np.broadcast_to(raw, shape + (d,)).copy()
        return raw.reshape(shape + (d,))

    V_raw = np.asarray(doc.get("V", 0.0), dtype=float)
    if V_raw.ndim == 0:
        V = np.broadcast_to(V_raw, shape).copy()
    else:
        V = V_raw.reshape(shape)

    coeffs = CoefficientTuple(domain=domain, A=A, b=vec("b"), c=vec("c"), V=V)
    return domain, coeffs


def coefficients_to_dict(coeffs):
    dom = coeffs.domain
    return {
        "dim": dom.dim,
        "extents": [list(e) for e in dom.extents],
        "n_cells": list(dom.n_cells),
        "bc": dom.bc,
        "A": _encode_complex(coeffs.A),
        "b": _encode_complex(coeffs.b),
        "c": _encode_complex(coeffs.c),
        "V": np.asarray(coeffs.V).tolist(),
    }


def load_coefficients(path):
    with open(path) as f:
        return coefficients_from_dict(json.load(f))
