"""Dense Hermitian linear algebra, unitary propagators, Nelder-Mead and seeded RNG.

All spin operators in the package are small dense complex matrices
(dimension 2**n with n <= 8), so everything here works on plain
``numpy`` arrays. Generators are always Hermitian, which lets propagators
be formed from an eigendecomposition rather than a general matrix
exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import NoConvergence, NonHermitian

HERMITIAN_TOL = 1e-9


@dataclass(frozen=True)
class HermEigen:
    """Eigendecomposition of a Hermitian matrix.

    Attributes:
        values: real eigenvalues in ascending order.
        vectors: unitary matrix whose columns are the eigenvectors.
    """

    values: np.ndarray
    vectors: np.ndarray


def as_matrix(m) -> np.ndarray:
    """Return ``m`` as a finite square complex array."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real and >= 0.

    Works on a single matrix or on a stack ``(..., dim, dim)``.
    """
    v = np.array(vectors, dtype=complex, copy=True)
    idx = np.argmax(np.abs(v), axis=-2)
    pivots = np.take_along_axis(v, idx[..., None, :], axis=-2)
    mag = np.abs(pivots)
    phase = np.where(mag > 0, pivots.conj() / np.where(mag > 0, mag, 1.0), 1.0)
    return v * phase


def herm_eig(m) -> HermEigen:
    """Eigendecomposition of a Hermitian matrix with a fixed eigenvector gauge.

    The input is symmetrized before solving. Eigenvalues come back ascending
    and every eigenvector has its largest component real and nonnegative.

    Raises:
        NonHermitian: if ``max|m - m^H| > 1e-9``.
        NoConvergence: if LAPACK fails to converge.
    """
    a = as_matrix(m)
    if not is_hermitian(a):
        raise NonHermitian(
            f"matrix is not Hermitian (max|m - m^H| = {np.max(np.abs(a - a.conj().T)):.3e})"
        )
    a = 0.5 * (a + a.conj().T)
    try:
        values, vectors = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NoConvergence(str(exc)) from exc
    return HermEigen(values=values, vectors=fix_phases(vectors))


def expm_propagator(h, t: float) -> np.ndarray:
    """Unitary ``exp(-i h t)`` for a Hermitian generator ``h`` in rad/s."""
    eig = herm_eig(h)
    return propagator_from_eigen(eig.values, eig.vectors, t)


def propagator_from_eigen(values: np.ndarray, vectors: np.ndarray, t) -> np.ndarray:
    """``V exp(-i diag(values) t) V^H``; broadcasts over leading stack axes of
    ``values``/``vectors`` and over an array ``t`` matching them."""
    t = np.asarray(t, dtype=float)
    phases = np.exp(-1j * values * t[..., None])
    return (vectors * phases[..., None, :]) @ np.swapaxes(vectors.conj(), -1, -2)


def expm_propagator_batch(h_stack: np.ndarray, t) -> np.ndarray:
    """Stacked version of :func:`expm_propagator` for ``(..., dim, dim)`` input.

    No Hermiticity check is made; callers build the generators themselves.
    """
    h_stack = 0.5 * (h_stack + np.swapaxes(h_stack.conj(), -1, -2))
    values, vectors = np.linalg.eigh(h_stack)
    return propagator_from_eigen(values, vectors, t)


# ---------------------------------------------------------------------------
# Random streams


def rng_stream(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 generator for ``seed`` and a stream index path.

    Streams are derived with ``numpy.random.SeedSequence`` spawn keys, so
    ``rng_stream(s, 0)`` and ``rng_stream(s, 1)`` are independent and each
    is reproducible on its own.
    """
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.PCG64(seq))


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + a.conj().T)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


# ---------------------------------------------------------------------------
# Nelder-Mead


@dataclass
class SimplexConfig:
    """Settings for :func:`nelder_mead`.

    ``initial_step`` is either one scale for every parameter or one per
    parameter; it sets the edge lengths of the starting simplex and of the
    randomly rotated simplex built at each restart.
    """

    max_evals: int = 2000
    f_tol: float = 1e-12
    x_tol: float = 1e-10
    restarts: int = 0
    seed: int = 0
    initial_step: float | Sequence[float] = 0.1

    def __post_init__(self):
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")
        if not (self.f_tol > 0 and self.x_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")

    def steps(self, p: int) -> np.ndarray:
        step = np.broadcast_to(np.asarray(self.initial_step, dtype=float), (p,)).copy()
        step[step == 0] = 1.0
        return step


class SimplexResult(NamedTuple):
    x: np.ndarray
    fun: float
    nfev: int
    budget_exhausted: bool
    history: list  # (eval_index, incumbent value, restart index) at each improvement


REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0,
    cfg: SimplexConfig | None = None,
    callback: Callable[[int, float, int], None] | None = None,
) -> SimplexResult:
    """Minimize ``objective`` with the Nelder-Mead downhill simplex.

    Uses the classic coefficients (reflection 1, expansion 2, contraction
    0.5, shrink 0.5). A run stops when the spread of simplex values drops
    below ``f_tol`` or the simplex diameter drops below ``x_tol``; each of
    the ``cfg.restarts`` restarts then rebuilds a randomly rotated simplex
    around the incumbent from its own RNG stream. ``max_evals`` bounds the
    total number of objective calls over all restarts; hitting it is
    reported through ``budget_exhausted`` rather than raised.

    Non-finite objective values are treated as ``+inf``.
    """
    cfg = cfg or SimplexConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    p = x0.size
    step = cfg.steps(p)

    nfev = 0
    history: list = []
    best_x = x0.copy()
    best_f = math.inf
    restart = 0

    class _Budget(Exception):
        pass

    def f(x):
        nonlocal nfev, best_f, best_x
        if nfev >= cfg.max_evals:
            raise _Budget
        nfev += 1
        val = float(objective(x))
        if not math.isfinite(val):
            val = math.inf
        if val < best_f:
            best_f = val
            best_x = x.copy()
            history.append((nfev, val, restart))
            if callback is not None:
                callback(nfev, val, restart)
        return val

    exhausted = False
    try:
        f(x0)
        for restart in range(cfg.restarts + 1):
            if restart == 0:
                sim = np.vstack([x0, x0 + np.diag(step)])
            else:
                q, _ = np.linalg.qr(rng_stream(cfg.seed, restart).normal(size=(p, p)))
                sim = np.vstack([best_x, best_x + (q * step[:, None]).T])
            fs = np.empty(p + 1)
            fs[0] = best_f
            for i in range(1, p + 1):
                fs[i] = f(sim[i])
            _simplex_loop(f, sim, fs, cfg)
    except _Budget:
        exhausted = True
    return SimplexResult(best_x, best_f, nfev, exhausted, history)


def _simplex_loop(f, sim: np.ndarray, fs: np.ndarray, cfg: SimplexConfig) -> None:
    p = sim.shape[1]
    while True:
        order = np.argsort(fs, kind="stable")
        sim[:] = sim[order]
        fs[:] = fs[order]
        if fs[-1] - fs[0] <= cfg.f_tol or np.max(np.abs(sim[1:] - sim[0])) <= cfg.x_tol:
            return
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + REFLECT * (centroid - sim[-1])
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + CONTRACT * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + CONTRACT * (sim[-1] - centroid)
                fc = f(xc)
                accept = fc < fs[-1]
            if accept:
                sim[-1], fs[-1] = xc, fc
            else:
                for i in range(1, p + 1):
                    sim[i] = sim[0] + SHRINK * (sim[i] - sim[0])
                    fs[i] = f(sim[i])
