"""Dipolar-coupled spin-1/2 Hamiltonians, eigenbasis, transitions and spectra.

Conventions:
    * Kronecker order puts spin 0 leftmost, so Zeeman basis index ``i``
      written as an n-bit string is the label (bit 0 = spin 0).
    * ``|0>`` is spin-up (``I_z = +1/2``).
    * Frequencies are stored in Hz and Hamiltonians are returned in rad/s.
    * Shifts are rotating-frame offsets from the RF carrier.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AmbiguousLabeling,
    AssignmentUnstable,
    DimensionTooLarge,
    ValidationError,
)
from .numerics import SimplexConfig, herm_eig, nelder_mead

TWO_PI = 2.0 * math.pi
MAX_SPINS = 8
MIN_MOMENT2 = 1e-6

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@functools.lru_cache(maxsize=None)
def _spin_op_cached(n: int, j: int, axis: str) -> np.ndarray:
    op = np.eye(1, dtype=complex)
    for k in range(n):
        op = np.kron(op, 0.5 * _PAULI[axis] if k == j else np.eye(2))
    op.setflags(write=False)
    return op


def spin_op(n: int, j: int, axis: str) -> np.ndarray:
    """Single-spin operator ``I_axis`` of spin ``j`` in an ``n``-spin space."""
    return _spin_op_cached(n, j, axis)


@functools.lru_cache(maxsize=None)
def _total_cached(n: int, axis: str) -> np.ndarray:
    op = sum(spin_op(n, j, axis) for j in range(n))
    op.setflags(write=False)
    return op


def total_op(n: int, axis: str) -> np.ndarray:
    """Collective operator ``F_axis = sum_j I_axis^j``."""
    return _total_cached(n, axis)


def zeeman_labels(n: int) -> list[str]:
    return [format(i, f"0{n}b") for i in range(2**n)]


@dataclass
class SpinSystem:
    """A homonuclear network of ``n`` spin-1/2 nuclei.

    Attributes:
        shifts_hz: rotating-frame chemical shift offsets (Hz).
        d_hz: symmetric dipolar coupling matrix (Hz), zero diagonal.
        j_hz: symmetric scalar coupling matrix (Hz), zero by default.
        linewidths_hz: optional per-line widths used only for rendering.
    """

    shifts_hz: np.ndarray
    d_hz: np.ndarray
    j_hz: np.ndarray | None = None
    linewidths_hz: np.ndarray | None = None

    def __post_init__(self):
        self.shifts_hz = np.asarray(self.shifts_hz, dtype=float).reshape(-1)
        n = self.shifts_hz.size
        if n < 1:
            raise ValidationError("a spin system needs at least one spin")
        self.d_hz = _coupling_matrix(self.d_hz, n, "d_hz")
        self.j_hz = _coupling_matrix(
            np.zeros((n, n)) if self.j_hz is None else self.j_hz, n, "j_hz"
        )
        if not np.all(np.isfinite(self.shifts_hz)):
            raise ValidationError("shifts must be finite")
        if self.linewidths_hz is not None:
            self.linewidths_hz = np.asarray(self.linewidths_hz, dtype=float)

    @property
    def n(self) -> int:
        return self.shifts_hz.size

    @property
    def dim(self) -> int:
        return 2**self.n

    def copy(self) -> "SpinSystem":
        return SpinSystem(
            self.shifts_hz.copy(),
            self.d_hz.copy(),
            self.j_hz.copy(),
            None if self.linewidths_hz is None else self.linewidths_hz.copy(),
        )


def _coupling_matrix(m, n: int, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (n, n):
        raise ValidationError(f"{name} must be {n}x{n}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} has non-finite entries")
    if not np.allclose(m, m.T, atol=1e-12) or np.any(np.diag(m) != 0):
        raise ValidationError(f"{name} must be symmetric with zero diagonal")
    return m


def build_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Full secular Hamiltonian in rad/s.

    ``H = sum_j 2pi nu_j I_z^j
        + sum_{j<k} 2pi D_jk (3 I_z^j I_z^k - I^j.I^k)
        + sum_{j<k} 2pi J_jk I^j.I^k``
    """
    n = sys.n
    if n > MAX_SPINS:
        raise DimensionTooLarge(f"n = {n} exceeds the supported maximum of {MAX_SPINS}")
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for j in range(n):
        h += sys.shifts_hz[j] * spin_op(n, j, "z")
    for j in range(n):
        for k in range(j + 1, n):
            d, jc = sys.d_hz[j, k], sys.j_hz[j, k]
            if d == 0 and jc == 0:
                continue
            zz = spin_op(n, j, "z") @ spin_op(n, k, "z")
            dot = zz + sum(spin_op(n, j, a) @ spin_op(n, k, a) for a in "xy")
            h += d * (3 * zz - dot) + jc * dot
    return TWO_PI * h


# ---------------------------------------------------------------------------
# Eigenbasis


@dataclass(frozen=True)
class EigenBasis:
    """Eigenstates of the system Hamiltonian, used as the computational basis.

    ``v[:, i]`` is eigenstate ``i`` (ascending energy) expanded in the
    Zeeman product basis; ``labels[i]`` is its bit-string name.
    """

    energies_hz: np.ndarray
    v: np.ndarray
    labels: tuple[str, ...] | None

    @property
    def dim(self) -> int:
        return self.energies_hz.size

    @property
    def n(self) -> int:
        return int(round(math.log2(self.dim)))

    def require_labels(self) -> tuple[str, ...]:
        if self.labels is None:
            raise AmbiguousLabeling("eigenbasis has no bijective labeling")
        return self.labels

    def index_of(self, label: str) -> int:
        return self.require_labels().index(label)

    def label_permutation(self) -> np.ndarray:
        """``perm[L]`` = eigenstate index carrying computational label ``L``."""
        labels = self.require_labels()
        perm = np.empty(self.dim, dtype=int)
        for i, lab in enumerate(labels):
            perm[int(lab, 2)] = i
        return perm

    def computational_frame(self) -> np.ndarray:
        """Unitary whose column ``L`` is the eigenstate labeled ``L``."""
        return self.v[:, self.label_permutation()]

    def to_eigen(self, op: np.ndarray) -> np.ndarray:
        return self.v.conj().T @ op @ self.v

    def from_eigen(self, op: np.ndarray) -> np.ndarray:
        return self.v @ op @ self.v.conj().T


def _block_eig(h: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonalize within total-``I_z`` blocks when ``h`` conserves it.

    This keeps eigenvectors of degenerate levels from different ``I_z``
    sectors from mixing. Levels are ordered by energy, ties by ``I_z``
    descending.
    """
    mz = np.real(np.diag(total_op(n, "z")))
    if np.max(np.abs(h[mz[:, None] != mz[None, :]]), initial=0.0) > 1e-9:
        eig = herm_eig(h)
        return eig.values, eig.vectors
    dim = h.shape[0]
    values = np.empty(dim)
    vectors = np.zeros((dim, dim), dtype=complex)
    sector = np.empty(dim)
    col = 0
    for m in np.unique(mz)[::-1]:
        idx = np.flatnonzero(mz == m)
        eig = herm_eig(h[np.ix_(idx, idx)])
        k = idx.size
        values[col : col + k] = eig.values
        vectors[idx, col : col + k] = eig.vectors
        sector[col : col + k] = m
        col += k
    order = np.lexsort((-sector, np.round(values, 9)))
    return values[order], vectors[:, order]


def eigenbasis(h, strict: bool = True) -> EigenBasis:
    """Diagonalize ``h`` and label each eigenstate by its dominant Zeeman state.

    Ties in ``|v_ij|^2`` go to the lowest Zeeman index. If two eigenstates
    claim the same label, ``AmbiguousLabeling`` is raised; with
    ``strict=False`` the basis is returned with ``labels=None`` instead.
    """
    h = np.asarray(h, dtype=complex)
    dim = h.shape[0]
    n = int(round(math.log2(dim)))
    if 2**n != dim:
        raise ValidationError(f"dimension {dim} is not a power of two")
    values, vectors = _block_eig(h, n)
    weights = np.abs(vectors) ** 2
    # quantize so that numerically-tied weights pick the lowest index
    dominant = np.argmax(np.round(weights, 12), axis=0)
    energies = values / TWO_PI
    if len(set(dominant.tolist())) != dim:
        if strict:
            claimed: dict[int, list[int]] = {}
            for i, z in enumerate(dominant):
                claimed.setdefault(int(z), []).append(i)
            clash = {format(z, f"0{n}b"): ids for z, ids in claimed.items() if len(ids) > 1}
            raise AmbiguousLabeling(f"eigenstates share dominant Zeeman labels: {clash}")
        return EigenBasis(energies, vectors, None)
    labels = tuple(format(int(z), f"0{n}b") for z in dominant)
    return EigenBasis(energies, vectors, labels)


# ---------------------------------------------------------------------------
# Transitions and spectra


@dataclass(frozen=True)
class Transition:
    """Single-quantum line between two eigenstates.

    ``upper`` is the state with the lower total ``I_z`` (the upper level of
    the laboratory-frame Zeeman ladder) and ``freq_hz`` is the signed
    rotating-frame line position ``E[lower] - E[upper]``, which is also the
    RF offset that drives the line.
    """

    upper: int
    lower: int
    freq_hz: float
    moment2: float


def transitions(eb: EigenBasis, h=None, min_moment2: float = MIN_MOMENT2) -> list[Transition]:
    """Allowed single-quantum lines between eigenstates, sorted by frequency.

    ``moment2 = |<upper|F_x|lower>|^2``. ``h`` is accepted for interface
    symmetry only; the eigenbasis already carries everything needed.
    """
    fx = eb.to_eigen(total_op(eb.n, "x"))
    mz = np.real(np.diag(eb.to_eigen(total_op(eb.n, "z"))))
    m2 = np.abs(fx) ** 2
    out = []
    for a in range(eb.dim):
        for b in range(a):
            if m2[a, b] <= min_moment2:
                continue
            upper, lower = (a, b) if mz[a] < mz[b] else (b, a)
            freq = eb.energies_hz[lower] - eb.energies_hz[upper]
            out.append(Transition(upper, lower, float(freq), float(m2[a, b])))
    out.sort(key=lambda t: (t.freq_hz, t.lower, t.upper))
    return out


def find_transition(trs: Sequence[Transition], eb: EigenBasis, label_a: str, label_b: str) -> int:
    """Index into ``trs`` of the line connecting the two labeled eigenstates."""
    a, b = eb.index_of(label_a), eb.index_of(label_b)
    for k, t in enumerate(trs):
        if {t.upper, t.lower} == {a, b}:
            return k
    raise ValidationError(f"no allowed transition between {label_a} and {label_b}")


def equilibrium_state(sys: SpinSystem) -> np.ndarray:
    """High-temperature deviation density operator ``sum_j I_z^j``."""
    return total_op(sys.n, "z").copy()


def eigen_populations(rho: np.ndarray, eb: EigenBasis) -> np.ndarray:
    """Diagonal of ``rho`` (Zeeman basis) in the eigenbasis."""
    return np.real(np.einsum("ji,jk,ki->i", eb.v.conj(), rho, eb.v))


@dataclass
class Spectrum:
    """Stick spectrum with optional Lorentzian widths (FWHM, Hz)."""

    freqs_hz: np.ndarray
    amplitudes: np.ndarray
    linewidths_hz: np.ndarray | None = None

    def __len__(self) -> int:
        return self.freqs_hz.size

    def render(self, grid_hz: np.ndarray, linewidth_hz: float | None = None) -> np.ndarray:
        """Sum of unit-area Lorentzians sampled on a strictly increasing grid."""
        grid = np.asarray(grid_hz, dtype=float)
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValidationError("rendering grid must be strictly increasing")
        if linewidth_hz is not None:
            widths = np.full(len(self), float(linewidth_hz))
        elif self.linewidths_hz is not None:
            widths = np.broadcast_to(self.linewidths_hz, (len(self),))
        else:
            widths = np.full(len(self), 1.0)
        hw = 0.5 * widths[:, None]
        shape = hw / math.pi / ((grid[None, :] - self.freqs_hz[:, None]) ** 2 + hw**2)
        return self.amplitudes @ shape


def synthesize_spectrum(populations, trs: Sequence[Transition], theta_rad: float) -> Spectrum:
    """Small-flip-angle line intensities ``theta * (p_lower - p_upper) * moment2``.

    Lines with exactly zero amplitude are kept, so the stick list stays
    aligned with ``trs``.
    """
    pops = np.asarray(populations, dtype=float)
    freqs = np.array([t.freq_hz for t in trs])
    amps = np.array([theta_rad * (pops[t.lower] - pops[t.upper]) * t.moment2 for t in trs])
    return Spectrum(freqs.reshape(-1), amps.reshape(-1))


def detection_matrix(trs: Sequence[Transition], dim: int, theta_rad: float) -> np.ndarray:
    """Linear map from eigenbasis populations to line amplitudes."""
    a = np.zeros((len(trs), dim))
    for r, t in enumerate(trs):
        a[r, t.lower] += theta_rad * t.moment2
        a[r, t.upper] -= theta_rad * t.moment2
    return a


# ---------------------------------------------------------------------------
# Fitting


@dataclass
class FitResult:
    system: SpinSystem
    freq_rms_hz: float
    intensity_rel_err: float
    assignment: list[int]  # observed line -> index into calculated transitions
    calc_freqs_hz: np.ndarray
    calc_amps: np.ndarray
    nfev: int


def _pack(sys: SpinSystem, fit_j: bool) -> np.ndarray:
    iu = np.triu_indices(sys.n, 1)
    parts = [sys.shifts_hz, sys.d_hz[iu]]
    if fit_j:
        parts.append(sys.j_hz[iu])
    return np.concatenate(parts)


def _unpack(x: np.ndarray, template: SpinSystem, fit_j: bool) -> SpinSystem:
    n = template.n
    iu = np.triu_indices(n, 1)
    m = len(iu[0])
    d = np.zeros((n, n))
    d[iu] = x[n : n + m]
    d = d + d.T
    j = template.j_hz.copy()
    if fit_j:
        j = np.zeros((n, n))
        j[iu] = x[n + m : n + 2 * m]
        j = j + j.T
    return SpinSystem(x[:n].copy(), d, j, template.linewidths_hz)


def _calc_lines(sys: SpinSystem, theta_rad: float):
    eb = eigenbasis(build_hamiltonian(sys), strict=False)
    trs = transitions(eb)
    pops = eigen_populations(equilibrium_state(sys), eb)
    spec = synthesize_spectrum(pops, trs, theta_rad)
    return spec.freqs_hz, spec.amplitudes


def _assign(obs_f: np.ndarray, calc_f: np.ndarray) -> list[int]:
    """Greedy nearest-frequency matching, closest pairs first, one-to-one."""
    dist = np.abs(obs_f[:, None] - calc_f[None, :])
    order = np.argsort(dist, axis=None, kind="stable")
    used_o, used_c = set(), set()
    out = [-1] * obs_f.size
    for flat in order:
        o, c = divmod(int(flat), calc_f.size)
        if o in used_o or c in used_c:
            continue
        out[o] = c
        used_o.add(o)
        used_c.add(c)
        if len(used_o) == obs_f.size:
            break
    return out


def fit_hamiltonian(
    observed,
    guess: SpinSystem,
    cfg: SimplexConfig | None = None,
    theta_rad: float = math.radians(3.0),
    w_freq: float = 1.0,
    w_int: float = 1.0,
    fit_j: bool = False,
    sweeps: int = 4,
) -> FitResult:
    """Refine shifts and couplings so calculated lines match an observed list.

    The objective is ``sum w_f (f_obs - f_calc)^2 + w_I (I_obs - I_calc)^2``
    with intensities normalized to unit total on both sides, and the
    observed-to-calculated line assignment redone greedily (nearest
    frequency first) at every evaluation. Nelder-Mead is rerun ``sweeps``
    times from the incumbent; the assignment is checked for stability
    between the last two sweeps.

    Returns:
        FitResult with RMS frequency error (Hz) and mean relative intensity
        error over assigned lines.

    Raises:
        AssignmentUnstable: if more than 20% of assignments changed between
            the final sweeps.
    """
    obs = np.asarray(observed, dtype=float)
    if obs.ndim != 2 or obs.shape[0] == 0 or obs.shape[1] != 2:
        raise ValidationError("observed must be a non-empty list of (freq_hz, amplitude)")
    obs_f, obs_a = obs[:, 0], obs[:, 1]
    obs_norm = np.sum(np.abs(obs_a)) or 1.0
    obs_i = obs_a / obs_norm

    def evaluate(x):
        sys = _unpack(x, guess, fit_j)
        cf, ca = _calc_lines(sys, theta_rad)
        if cf.size < obs_f.size:
            return math.inf, None, cf, ca
        asg = _assign(obs_f, cf)
        sel = np.array(asg)
        ci = ca / (np.sum(np.abs(ca[sel])) or 1.0)
        cost = w_freq * np.sum((obs_f - cf[sel]) ** 2) + w_int * np.sum((obs_i - ci[sel]) ** 2)
        return float(cost), asg, cf, ca

    x = _pack(guess, fit_j)
    cfg = cfg or SimplexConfig(max_evals=4000, f_tol=1e-14, x_tol=1e-9, initial_step=0.5)
    nfev = 1
    cost0, asg0, _, _ = evaluate(x)
    assignments = [asg0]
    for sweep in range(sweeps if cost0 > 0 else 0):
        sweep_cfg = SimplexConfig(
            max_evals=cfg.max_evals,
            f_tol=cfg.f_tol,
            x_tol=cfg.x_tol,
            restarts=cfg.restarts,
            seed=cfg.seed + sweep,
            initial_step=cfg.initial_step,
        )
        res = nelder_mead(lambda v: evaluate(v)[0], x, sweep_cfg)
        nfev += res.nfev
        x = res.x
        assignments.append(evaluate(x)[1])
        if res.fun == 0.0:
            break

    cost, asg, cf, ca = evaluate(x)
    prev = assignments[-2] if len(assignments) > 1 else None
    if prev is not None and asg is not None:
        changed = sum(a != b for a, b in zip(prev, asg))
        if changed > 0.2 * len(asg):
            raise AssignmentUnstable(f"{changed}/{len(asg)} assignments changed in the final sweep")
    sel = np.array(asg)
    rms = float(np.sqrt(np.mean((obs_f - cf[sel]) ** 2)))
    ci = ca[sel] / (np.sum(np.abs(ca[sel])) or 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(ci - obs_i) / np.abs(obs_i)
    rel = rel[np.isfinite(rel)]
    rel_err = float(np.mean(rel)) if rel.size else 0.0
    return FitResult(_unpack(x, guess, fit_j), rms, rel_err, list(asg), cf, ca, nfev)
