"""Strongly modulating pulses: propagators, fidelities and Nelder-Mead design.

A pulse is a list of segments, each a constant RF field (duration,
nutation amplitude, phase, frequency offset from the carrier) followed by
a free-evolution delay. The RF phase advances continuously at the segment
frequency on a clock that starts at the beginning of the pulse, so a
segment's propagator depends on its start time. Internally every segment
is computed once at start time zero and moved to its actual start by a
diagonal ``F_z`` rotation, which makes caching per-segment propagators
possible while parameters elsewhere in the pulse change.
"""

from __future__ import annotations

import json
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import DimensionMismatch, ValidationError, ZeroState
from .io import read_json
from .numerics import (
    SimplexConfig,
    expm_propagator,
    herm_eig,
    nelder_mead,
    rng_stream,
)
from .spin import TWO_PI, SpinSystem, build_hamiltonian, total_op

PARAMS = ("tau_s", "amp_hz", "phase_rad", "freq_hz", "delay_s")


@dataclass
class PulseSegment:
    tau_s: float
    amp_hz: float
    phase_rad: float = 0.0
    freq_hz: float = 0.0
    delay_s: float = 0.0

    def __post_init__(self):
        vals = [self.tau_s, self.amp_hz, self.phase_rad, self.freq_hz, self.delay_s]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("pulse segment parameters must be finite")
        if self.tau_s < 0 or self.delay_s < 0 or self.amp_hz < 0:
            raise ValidationError("tau_s, delay_s and amp_hz must be >= 0")

    @property
    def duration(self) -> float:
        return self.tau_s + self.delay_s


@dataclass
class Smp:
    segments: list[PulseSegment]

    def __post_init__(self):
        if len(self.segments) < 1:
            raise ValidationError("an SMP needs at least one segment")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def as_array(self) -> np.ndarray:
        return np.array([[getattr(s, p) for p in PARAMS] for s in self.segments], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Smp":
        arr = np.asarray(arr, dtype=float).reshape(-1, 5)
        return cls([PulseSegment(*map(float, row)) for row in arr])

    def subdivide(self, parts: int) -> "Smp":
        """Split every segment into ``parts`` equal pieces; the propagator is
        unchanged because the RF phase runs on the global clock."""
        out = []
        for s in self.segments:
            for i in range(parts):
                out.append(replace(s, tau_s=s.tau_s / parts,
                                   delay_s=s.delay_s if i == parts - 1 else 0.0))
        return Smp(out)

    def to_json(self) -> dict:
        return {"segments": [asdict(s) for s in self.segments]}

    @classmethod
    def from_json(cls, data: dict) -> "Smp":
        try:
            return cls([PulseSegment(**{p: float(seg[p]) for p in PARAMS})
                        for seg in data["segments"]])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed SMP file: {exc}") from exc


def load_smp(path) -> Smp:
    return Smp.from_json(read_json(path))


def save_smp(smp: Smp, path) -> None:
    Path(path).write_text(json.dumps(smp.to_json(), indent=2))


@dataclass
class RobustnessGrid:
    """RF-scale and static-offset samples with weights.

    The grid is the Cartesian product; point weights are the products of
    the per-axis weights, normalized to sum to one.
    """

    rf_scales: list[tuple[float, float]]
    static_offsets_hz: list[tuple[float, float]]

    def __post_init__(self):
        self.rf_scales = [(float(s), float(w)) for s, w in self.rf_scales]
        self.static_offsets_hz = [(float(o), float(w)) for o, w in self.static_offsets_hz]
        if not self.rf_scales or not self.static_offsets_hz:
            raise ValidationError("grid axes must be non-empty")
        if any(w <= 0 for _, w in self.rf_scales + self.static_offsets_hz):
            raise ValidationError("grid weights must be positive")

    @classmethod
    def uniform(cls, scales: Sequence[float], offsets_hz: Sequence[float]) -> "RobustnessGrid":
        return cls([(s, 1.0) for s in scales], [(o, 1.0) for o in offsets_hz])

    @classmethod
    def single(cls, scale: float = 1.0, offset_hz: float = 0.0) -> "RobustnessGrid":
        return cls.uniform([scale], [offset_hz])

    @classmethod
    def default(cls) -> "RobustnessGrid":
        """7 RF scales on [0.90, 1.05] x 5 offsets on [-5, 5] Hz, uniform."""
        return cls.uniform(np.linspace(0.90, 1.05, 7), np.linspace(-5.0, 5.0, 5))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rf_scales), len(self.static_offsets_hz)

    def points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (scales, offsets, weights), RF scale varying slowest."""
        s = np.array([v for v, _ in self.rf_scales])
        o = np.array([v for v, _ in self.static_offsets_hz])
        w = np.outer([w for _, w in self.rf_scales], [w for _, w in self.static_offsets_hz])
        ss, oo = np.meshgrid(s, o, indexing="ij")
        return ss.ravel(), oo.ravel(), (w / w.sum()).ravel()

    def to_json(self) -> dict:
        return {"rf_scales": [list(p) for p in self.rf_scales],
                "static_offsets_hz": [list(p) for p in self.static_offsets_hz]}

    @classmethod
    def from_json(cls, data: dict) -> "RobustnessGrid":
        try:
            return cls(data["rf_scales"], data["static_offsets_hz"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed grid file: {exc}") from exc


# ---------------------------------------------------------------------------
# Reference (unbatched) propagators


def _rf_hamiltonian(n: int, amp_hz: float, phase: float) -> np.ndarray:
    return TWO_PI * amp_hz * (math.cos(phase) * total_op(n, "x") + math.sin(phase) * total_op(n, "y"))


def _fz_rotation(n: int, angle: float) -> np.ndarray:
    """Diagonal ``exp(-i angle F_z)``."""
    return np.diag(np.exp(-1j * angle * np.real(np.diag(total_op(n, "z")))))


def internal_hamiltonian(sys: SpinSystem, static_off_hz: float = 0.0) -> np.ndarray:
    return build_hamiltonian(sys) + TWO_PI * static_off_hz * total_op(sys.n, "z")


def segment_propagator(
    sys: SpinSystem,
    seg: PulseSegment,
    rf_scale: float = 1.0,
    static_off_hz: float = 0.0,
    t_start: float = 0.0,
) -> np.ndarray:
    """Propagator of one segment (pulse then delay) in the carrier frame.

    The RF phase at time ``t`` is ``phase + 2 pi freq t``. In the frame
    rotating at ``freq`` the pulse Hamiltonian is constant, and

        U_pulse = Z(t_start + tau) exp(-i H' tau) Z(t_start)^H

    with ``Z(t) = exp(-i 2 pi freq F_z t)`` and
    ``H' = H_int - 2 pi freq F_z + H_rf``.
    """
    n = sys.n
    h_int = internal_hamiltonian(sys, static_off_hz)
    h_rot = (h_int - TWO_PI * seg.freq_hz * total_op(n, "z")
             + rf_scale * _rf_hamiltonian(n, seg.amp_hz, seg.phase_rad))
    w = TWO_PI * seg.freq_hz
    u_pulse = (_fz_rotation(n, w * (t_start + seg.tau_s))
               @ expm_propagator(h_rot, seg.tau_s)
               @ _fz_rotation(n, w * t_start).conj().T)
    return expm_propagator(h_int, seg.delay_s) @ u_pulse


def smp_propagator(smp: Smp, sys: SpinSystem, rf_scale: float = 1.0,
                   static_off_hz: float = 0.0) -> np.ndarray:
    """Time-ordered product of segment propagators (last segment leftmost)."""
    u = np.eye(sys.dim, dtype=complex)
    t = 0.0
    for seg in smp.segments:
        u = segment_propagator(sys, seg, rf_scale, static_off_hz, t) @ u
        t += seg.duration
    return u


# ---------------------------------------------------------------------------
# Fidelities


def fidelity_gate(u_t, u) -> float:
    """``|tr(U_T^H U)| / M``; insensitive to global phase."""
    u_t, u = np.asarray(u_t), np.asarray(u)
    if u_t.shape != u.shape:
        raise DimensionMismatch(f"{u_t.shape} vs {u.shape}")
    return float(abs(np.vdot(u_t, u)) / u.shape[0])


def fidelity_state(rho_in, u_t, u) -> float:
    """Normalized overlap of the target and achieved output states."""
    rho_in, u_t, u = (np.asarray(a, dtype=complex) for a in (rho_in, u_t, u))
    if not (rho_in.shape == u_t.shape == u.shape):
        raise DimensionMismatch("rho_in, u_t and u must have the same shape")
    norm = np.real(np.vdot(rho_in, rho_in))
    if norm <= 0:
        raise ZeroState("rho_in has zero norm")
    rho_t = u_t @ rho_in @ u_t.conj().T
    rho_s = u @ rho_in @ u.conj().T
    num = np.real(np.vdot(rho_t, rho_s))
    den = math.sqrt(np.real(np.vdot(rho_t, rho_t)) * np.real(np.vdot(rho_s, rho_s)))
    return float(num / den)


# ---------------------------------------------------------------------------
# Batched, cached engine


class PulseEngine:
    """Propagates pulses at every point of a robustness grid at once.

    A segment starting at ``t0`` with phase ``phi`` acts like one starting
    at zero with phase ``phi + 2 pi f t0``, so start-time-zero propagators
    are cached by ``(tau, amp, local phase, freq)`` and stay valid when
    earlier segments change. Call :meth:`propagate` with a stack of column
    vectors (the identity gives full propagators).
    """

    def __init__(self, sys: SpinSystem, grid: RobustnessGrid, cache_size: int = 512):
        self.sys = sys
        self.grid = grid
        n = sys.n
        self.dim = sys.dim
        self.scales, self.offsets, self.weights = grid.points()
        self.fz = np.real(np.diag(total_op(n, "z"))).copy()
        self._fx = total_op(n, "x")
        self._fy = total_op(n, "y")
        h = build_hamiltonian(sys)
        self.h_int = h[None] + TWO_PI * self.offsets[:, None, None] * total_op(n, "z")[None]
        eig = [herm_eig(m) for m in self.h_int]
        self.free_vals = np.array([e.values for e in eig])
        self.free_vecs = np.array([e.vectors for e in eig])
        self._cache: OrderedDict[bytes, np.ndarray] = OrderedDict()
        self._cache_size = cache_size

    @property
    def n_points(self) -> int:
        return self.scales.size

    def _pulse_bases(self, rows: np.ndarray) -> list[np.ndarray]:
        """Start-time-zero pulse propagators ``(G, d, d)`` for each row of
        ``(tau, amp, phase, freq)``."""
        out: list = [None] * len(rows)
        missing = []
        for i, r in enumerate(rows):
            key = r.tobytes()
            hit = self._cache.get(key)
            if hit is None:
                missing.append(i)
            else:
                self._cache.move_to_end(key)
                out[i] = hit
        if missing:
            r = rows[missing]
            tau, amp, ph, fr = (r[:, j][:, None, None, None] for j in range(4))
            rf = TWO_PI * amp * (np.cos(ph) * self._fx + np.sin(ph) * self._fy)
            h = (self.h_int[None] - TWO_PI * fr * np.diag(self.fz)
                 + self.scales[None, :, None, None] * rf)
            h = 0.5 * (h + np.swapaxes(h.conj(), -1, -2))
            vals, vecs = np.linalg.eigh(h)
            ph_t = np.exp(-1j * vals * tau[..., 0])
            u = (vecs * ph_t[..., None, :]) @ np.swapaxes(vecs.conj(), -1, -2)
            u = np.exp(-1j * TWO_PI * fr[..., 0] * tau[..., 0] * self.fz)[..., :, None] * u
            for j, i in enumerate(missing):
                out[i] = u[j]
                self._cache[rows[i].tobytes()] = u[j]
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return out

    def propagate(self, params: np.ndarray, vecs: np.ndarray, local_phase: bool = False) -> np.ndarray:
        """Apply the pulse ``params`` (K x 5) to ``vecs`` ((d, r) or (G, d, r)).

        With ``local_phase`` the phase column already holds the RF phase at
        each segment's start (see :func:`to_local_phase`).
        """
        params = np.asarray(params, dtype=float).reshape(-1, 5)
        if not local_phase:
            params = to_local_phase(params)
        psi = np.broadcast_to(vecs, (self.n_points,) + vecs.shape[-2:]).astype(complex)
        bases = self._pulse_bases(np.ascontiguousarray(params[:, :4]))
        vh = np.swapaxes(self.free_vecs.conj(), -1, -2)
        for delay, base in zip(params[:, 4], bases):
            psi = base @ psi
            if delay > 0:
                psi = self.free_vecs @ (np.exp(-1j * self.free_vals * delay)[..., None] * (vh @ psi))
        return psi

    def propagators(self, smp_or_params) -> np.ndarray:
        params = smp_or_params.as_array() if isinstance(smp_or_params, Smp) else smp_or_params
        return self.propagate(params, np.eye(self.dim, dtype=complex))


class FidelityObjective:
    """Weighted-mean fidelity over a grid, for gate or state targets."""

    def __init__(self, engine: PulseEngine, target: np.ndarray,
                 rho_in: np.ndarray | None = None, local_phase: bool = False):
        self.engine = engine
        self.local_phase = local_phase
        self.target = np.asarray(target, dtype=complex)
        if self.target.shape != (engine.dim, engine.dim):
            raise DimensionMismatch("target does not match the spin system")
        self.mode = "gate" if rho_in is None else "state"
        if rho_in is not None:
            rho_in = np.asarray(rho_in, dtype=complex)
            norm = np.real(np.vdot(rho_in, rho_in))
            if norm <= 0:
                raise ZeroState("rho_in has zero norm")
            vals, vecs = np.linalg.eigh(0.5 * (rho_in + rho_in.conj().T))
            keep = np.abs(vals) > 1e-12 * np.max(np.abs(vals))
            self._lam = vals[keep]
            self._vecs = vecs[:, keep]
            self._rho_t = self.target @ rho_in @ self.target.conj().T
            self._norm = norm

    def per_point(self, params) -> np.ndarray:
        if self.mode == "gate":
            u = self.engine.propagate(params, np.eye(self.engine.dim, dtype=complex),
                                      self.local_phase)
            return np.abs(np.einsum("ij,gij->g", self.target.conj(), u)) / self.engine.dim
        phi = self.engine.propagate(params, self._vecs, self.local_phase)
        ov = np.einsum("gia,ij,gja->ga", phi.conj(), self._rho_t, phi).real
        return ov @ self._lam / self._norm

    def __call__(self, params) -> float:
        return float(self.per_point(params) @ self.engine.weights)


# ---------------------------------------------------------------------------
# Search


@dataclass
class ParamBounds:
    """Box limits per segment parameter; ``phase`` is unbounded."""

    tau_s: tuple[float, float] = (1e-6, 2e-3)
    amp_hz: tuple[float, float] = (0.0, 2e4)
    freq_hz: tuple[float, float] = (-5e3, 5e3)
    delay_s: tuple[float, float] = (0.0, 2e-3)

    def __post_init__(self):
        for name in ("tau_s", "amp_hz", "freq_hz", "delay_s"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValidationError(f"bounds for {name} need min < max")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.tau_s[0], self.amp_hz[0], 0.0, self.freq_hz[0], self.delay_s[0]])
        hi = np.array([self.tau_s[1], self.amp_hz[1], 0.0, self.freq_hz[1], self.delay_s[1]])
        return lo, hi


_BOUNDED = np.array([True, True, False, True, True])


def to_physical(u: np.ndarray, bounds: ParamBounds) -> np.ndarray:
    """Logistic map from optimizer coordinates to segment parameters."""
    u = np.asarray(u, dtype=float).reshape(-1, 5)
    lo, hi = bounds.arrays()
    sig = 0.5 * (1.0 + np.tanh(0.5 * u))
    return np.where(_BOUNDED, lo + (hi - lo) * sig, u)


def to_unbounded(p: np.ndarray, bounds: ParamBounds) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1, 5)
    lo, hi = bounds.arrays()
    span = np.where(_BOUNDED, hi - lo, 1.0)
    frac = np.clip((p - lo) / span, 1e-12, 1 - 1e-12)
    return np.where(_BOUNDED, np.log(frac / (1 - frac)), p)


def start_times(params: np.ndarray) -> np.ndarray:
    """Start time of each segment on the global clock (s)."""
    params = np.asarray(params, dtype=float).reshape(-1, 5)
    dur = params[:, 0] + params[:, 4]
    return np.concatenate(([0.0], np.cumsum(dur)[:-1]))


def _wrap(phase: np.ndarray) -> np.ndarray:
    return np.mod(phase + math.pi, TWO_PI) - math.pi


def to_local_phase(params: np.ndarray) -> np.ndarray:
    """Replace each phase by the RF phase at its segment's start.

    The stored convention ties phases to a global clock, so lengthening
    one segment shifts the effective phase of every later one. Local
    phases remove that coupling, which is what the optimizer searches.
    """
    p = np.array(params, dtype=float).reshape(-1, 5)
    p[:, 2] = _wrap(p[:, 2] + TWO_PI * p[:, 3] * start_times(p))
    return p


def to_global_phase(params: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_local_phase`."""
    p = np.array(params, dtype=float).reshape(-1, 5)
    p[:, 2] = _wrap(p[:, 2] - TWO_PI * p[:, 3] * start_times(p))
    return p


@dataclass
class SearchSpec:
    """What to design and how hard to search.

    ``rho_in`` selects state mode (fidelity for that input state);
    ``None`` selects gate mode. ``block_size`` switches from one
    Nelder-Mead run over every parameter to cyclic sweeps that optimize
    ``block_size`` consecutive segments at a time; ``block_evals`` is the
    per-block budget and ``sweeps`` the number of passes. ``initial``
    seeds restart 0 with an existing pulse.
    """

    target: np.ndarray
    system: SpinSystem
    n_segments: int
    rho_in: np.ndarray | None = None
    grid: RobustnessGrid = field(default_factory=RobustnessGrid.default)
    bounds: ParamBounds = field(default_factory=ParamBounds)
    simplex: SimplexConfig = field(default_factory=SimplexConfig)
    block_size: int | None = None
    block_evals: int = 400
    sweeps: int = 10
    initial: Smp | None = None
    init_scale: float = 1.0
    target_fidelity: float = 1.0

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValidationError("n_segments must be >= 1")
        t = np.asarray(self.target, dtype=complex)
        if t.shape != (self.system.dim, self.system.dim):
            raise DimensionMismatch("target does not match the spin system")
        if np.max(np.abs(t.conj().T @ t - np.eye(t.shape[0]))) > 1e-8:
            raise ValidationError("target must be unitary")
        if self.initial is not None and len(self.initial) != self.n_segments:
            raise ValidationError("initial pulse has the wrong number of segments")

    @property
    def mode(self) -> Literal["gate", "state"]:
        return "gate" if self.rho_in is None else "state"


def fidelity_avg(spec: SearchSpec, smp: Smp, engine: PulseEngine | None = None) -> float:
    """Weighted mean of the mode's fidelity over the robustness grid."""
    engine = engine or PulseEngine(spec.system, spec.grid)
    return FidelityObjective(engine, spec.target, spec.rho_in)(smp.as_array())


def fidelity_surface(spec: SearchSpec, smp: Smp) -> np.ndarray:
    """Pointwise fidelity laid out as (rf_scale rows, offset columns)."""
    engine = PulseEngine(spec.system, spec.grid)
    per = FidelityObjective(engine, spec.target, spec.rho_in).per_point(smp.as_array())
    return per.reshape(spec.grid.shape)


@dataclass
class DesignResult:
    smp: Smp
    achieved: float
    log: list  # (eval_index, incumbent fidelity, restart index)
    budget_exhausted: bool
    evals: int
    wall_s: float


def random_pulse_coords(n_segments: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    u = rng.normal(scale=scale, size=(n_segments, 5))
    u[:, 2] = rng.uniform(-math.pi, math.pi, size=n_segments)
    return u


def design_smp(spec: SearchSpec, progress=None) -> DesignResult:
    """Search pulse parameters that maximize the grid-averaged fidelity.

    Minimizes ``1 - F_avg`` with Nelder-Mead in logistic-transformed
    coordinates, with phases taken relative to each segment's start. Restart ``r`` starts from a random pulse drawn from RNG
    stream ``(seed, r)`` (restart 0 from ``spec.initial`` when given); the
    best pulse over all restarts is returned. ``spec.simplex.max_evals``
    caps the total number of fidelity evaluations.

    ``progress``, when given, is called as ``progress(evals, best, restart)``
    every time the global incumbent improves.
    """
    t0 = time.perf_counter()
    engine = PulseEngine(spec.system, spec.grid)
    objective = FidelityObjective(engine, spec.target, spec.rho_in, local_phase=True)
    cfg = spec.simplex
    k = spec.n_segments

    state = {"evals": 0, "best": -math.inf, "best_u": None, "restart": 0}
    log: list = []

    class _Stop(Exception):
        pass

    def fid_of(u_full: np.ndarray) -> float:
        if state["evals"] >= cfg.max_evals:
            raise _Stop
        state["evals"] += 1
        f = objective(to_physical(u_full, spec.bounds))
        if f > state["best"]:
            state["best"] = f
            state["best_u"] = u_full.copy()
            log.append((state["evals"], f, state["restart"]))
            if progress is not None:
                progress(state["evals"], f, state["restart"])
        return f

    def done() -> bool:
        return state["evals"] >= cfg.max_evals or state["best"] >= spec.target_fidelity

    exhausted = False
    for restart in range(cfg.restarts + 1):
        state["restart"] = restart
        if restart == 0 and spec.initial is not None:
            u = to_unbounded(to_local_phase(spec.initial.as_array()), spec.bounds)
        else:
            u = random_pulse_coords(k, rng_stream(cfg.seed, restart), spec.init_scale)
        try:
            if spec.block_size is None or spec.block_size >= k:
                sub = SimplexConfig(
                    max_evals=cfg.max_evals - state["evals"], f_tol=cfg.f_tol,
                    x_tol=cfg.x_tol, restarts=0, seed=cfg.seed + restart,
                    initial_step=cfg.initial_step)
                res = nelder_mead(lambda x: 1.0 - fid_of(x.reshape(k, 5)), u.ravel(), sub)
                u = res.x.reshape(k, 5)
            else:
                u = _block_sweeps(spec, u, fid_of, done, restart)
        except _Stop:
            exhausted = True
        if done():
            exhausted = exhausted or state["evals"] >= cfg.max_evals
            break

    best = Smp.from_array(to_global_phase(to_physical(state["best_u"], spec.bounds)))
    return DesignResult(best, state["best"], log, exhausted, state["evals"],
                        time.perf_counter() - t0)


def _block_sweeps(spec: SearchSpec, u: np.ndarray, fid_of, done, restart: int) -> np.ndarray:
    """Cyclic block-coordinate Nelder-Mead over groups of segments."""
    k, b = spec.n_segments, spec.block_size
    u = u.copy()
    starts = list(range(0, k, b))
    for sweep in range(spec.sweeps):
        order = rng_stream(spec.simplex.seed, restart, sweep).permutation(len(starts))
        for i in order:
            lo, hi = starts[i], min(starts[i] + b, k)

            def obj(x, lo=lo, hi=hi):
                trial = u.copy()
                trial[lo:hi] = x.reshape(hi - lo, 5)
                return 1.0 - fid_of(trial)

            sub = SimplexConfig(
                max_evals=spec.block_evals, f_tol=spec.simplex.f_tol,
                x_tol=spec.simplex.x_tol, restarts=0, seed=spec.simplex.seed,
                initial_step=spec.simplex.initial_step)
            res = nelder_mead(obj, u[lo:hi].ravel(), sub)
            u[lo:hi] = res.x.reshape(hi - lo, 5)
            if done():
                return u
    return u


def design_staged(spec: SearchSpec, warmup: Sequence[tuple[RobustnessGrid, int]] = (),
                  progress=None) -> DesignResult:
    """Run :func:`design_smp` on cheaper grids first, then on ``spec.grid``.

    Each warm-up stage ``(grid, max_evals)`` starts from the previous
    stage's pulse (the first from ``spec.initial`` or a random pulse) and
    uses the same seed and block settings. Only the final stage's log is
    returned, with evaluation indices offset by the warm-up evaluations,
    so the logged incumbent always refers to ``spec.grid``.
    """
    t0 = time.perf_counter()
    initial = spec.initial
    offset = 0
    for grid, evals in warmup:
        stage = replace(spec, grid=grid, initial=initial,
                        simplex=replace(spec.simplex, max_evals=evals))
        res = design_smp(stage)
        initial = res.smp
        offset += res.evals
    final = replace(spec, initial=initial)
    res = design_smp(final, progress=progress)
    log = [(e + offset, f, r) for e, f, r in res.log]
    return DesignResult(res.smp, res.achieved, log, res.budget_exhausted,
                        res.evals + offset, time.perf_counter() - t0)
