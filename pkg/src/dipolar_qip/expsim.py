"""Simulated readout chain: POPS preparation, dephasing, diagonal tomography.

Density operators carry the basis they are written in. Preparation and
pulses work in the Zeeman product basis; dephasing and tomography work in
the eigenbasis of the system Hamiltonian, where populations are the
diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    ForbiddenTransition,
    SingularDesign,
    ValidationError,
    ZeroDiagonal,
)
from .io import read_json
from .numerics import rng_stream
from .qnge import (
    QngeSpec,
    RegisterLayout,
    compose_qnge,
    embed_target,
    example_instance,
    readout_gradient,
)
from .smp import PulseEngine, PulseSegment, RobustnessGrid, Smp
from .spin import (
    EigenBasis,
    SpinSystem,
    Transition,
    detection_matrix,
    equilibrium_state,
    total_op,
    transitions,
)

Basis = Literal["zeeman", "eigen"]


@dataclass
class DensityOp:
    """Hermitian operator on the spin space.

    ``kind="full"`` is a normalized density matrix; ``kind="deviation"`` is a
    traceless deviation from the identity background.
    """

    m: np.ndarray
    kind: Literal["full", "deviation"] = "deviation"
    basis: Basis = "zeeman"

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=complex)
        if self.m.ndim != 2 or self.m.shape[0] != self.m.shape[1]:
            raise ValidationError("density operator must be square")
        if np.max(np.abs(self.m - self.m.conj().T)) > 1e-10:
            raise ValidationError("density operator must be Hermitian")
        tr = np.trace(self.m).real
        if self.kind == "full":
            if abs(tr - 1) > 1e-9:
                raise ValidationError(f"full density matrix has trace {tr}")
            if np.min(np.linalg.eigvalsh(self.m)) < -1e-9:
                raise ValidationError("full density matrix is not positive semidefinite")
        elif self.kind == "deviation":
            if abs(tr) > 1e-9:
                raise ValidationError(f"deviation operator has trace {tr}")
        else:
            raise ValidationError(f"unknown kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    def in_eigenbasis(self, eb: EigenBasis) -> "DensityOp":
        if self.basis == "eigen":
            return self
        return DensityOp(eb.to_eigen(self.m), self.kind, "eigen")

    def in_zeeman(self, eb: EigenBasis) -> "DensityOp":
        if self.basis == "zeeman":
            return self
        return DensityOp(eb.from_eigen(self.m), self.kind, "zeeman")

    def populations(self, eb: EigenBasis) -> np.ndarray:
        """Eigenbasis diagonal in energy order."""
        return np.real(np.diag(self.in_eigenbasis(eb).m)).copy()


def from_eigen_populations(pops, kind: str = "deviation") -> DensityOp:
    return DensityOp(np.diag(np.asarray(pops, dtype=complex)), kind, "eigen")


# ---------------------------------------------------------------------------
# Preparation


def gaussian_pulse_propagator(
    sys: SpinSystem,
    eb: EigenBasis,
    transition: int,
    duration_s: float = 0.01,
    slices: int = 200,
    trs: Sequence[Transition] | None = None,
) -> np.ndarray:
    """Transition-selective Gaussian pi pulse as a piecewise-constant product.

    The envelope is truncated at +-3 sigma (sigma = duration/6), sampled at
    slice midpoints, and applied at the transition frequency with phase 0.
    The peak amplitude is set so the rotation angle within that
    transition's two-level subspace, ``2 * 2pi * |<u|F_x|l>| * int a dt``,
    is exactly pi.
    """
    if slices < 50:
        raise ValidationError("use at least 50 slices")
    if duration_s == 0:
        return np.eye(sys.dim, dtype=complex)
    trs = transitions(eb) if trs is None else trs
    tr = trs[transition]
    if tr.moment2 <= 1e-6:
        raise ForbiddenTransition(f"transition {transition} has moment2 {tr.moment2:.2e}")
    dt = duration_s / slices
    t = (np.arange(slices) + 0.5) * dt - duration_s / 2
    sigma = duration_s / 6
    env = np.exp(-(t**2) / (2 * sigma**2))
    peak = 1.0 / (4.0 * math.sqrt(tr.moment2) * env.sum() * dt)
    pulse = Smp([PulseSegment(dt, peak * e, 0.0, tr.freq_hz, 0.0) for e in env])
    return PulseEngine(sys, RobustnessGrid.single(), cache_size=0).propagators(pulse)[0]


def prepare_pops(
    sys: SpinSystem,
    eb: EigenBasis,
    transition: int,
    mode: Literal["ideal", "shaped"] = "ideal",
    trs: Sequence[Transition] | None = None,
    duration_s: float = 0.01,
    slices: int = 200,
) -> DensityOp:
    """Pair of pseudopure states by inverting one transition and subtracting
    equilibrium.

    ``ideal`` swaps the two level populations directly; ``shaped`` applies
    the Gaussian pi pulse and then removes coherences. The result is a
    deviation operator in the eigenbasis.
    """
    trs = transitions(eb) if trs is None else trs
    tr = trs[transition]
    eq = DensityOp(equilibrium_state(sys)).in_eigenbasis(eb)
    if mode == "ideal":
        pops = np.real(np.diag(eq.m)).copy()
        pops[[tr.upper, tr.lower]] = pops[[tr.lower, tr.upper]]
        after = from_eigen_populations(pops)
    elif mode == "shaped":
        u = gaussian_pulse_propagator(sys, eb, transition, duration_s, slices, trs)
        rho = eb.to_eigen(u @ equilibrium_state(sys) @ u.conj().T)
        after = dephase(DensityOp(rho, "deviation", "eigen"), eb)
    else:
        raise ValidationError(f"unknown POPS mode {mode!r}")
    return DensityOp(np.diag(np.diag(after.m) - np.diag(eq.m)), "deviation", "eigen")


# ---------------------------------------------------------------------------
# Dephasing


@dataclass(frozen=True)
class Randomized:
    """Gradient filter followed by an average over random free-evolution delays."""

    n_delays: int = 32
    max_delay_s: float = 0.01
    seed: int = 0


def random_delays(n_delays: int, max_delay_s: float, seed: int) -> np.ndarray:
    """Delay ``k`` drawn uniformly on ``[0, max_delay_s]`` from stream ``(seed, k)``."""
    return np.array([rng_stream(seed, k).uniform(0.0, max_delay_s) for k in range(n_delays)])


def dephasing_factors(freq_diff_hz, mode: Randomized) -> np.ndarray:
    """Complex attenuation ``mean_k exp(-i 2 pi dnu tau_k)`` for each gap."""
    taus = random_delays(mode.n_delays, mode.max_delay_s, mode.seed)
    dnu = np.asarray(freq_diff_hz, dtype=float)
    return np.exp(-2j * np.pi * dnu[..., None] * taus).mean(axis=-1)


def coherence_orders(eb: EigenBasis) -> np.ndarray:
    """Total ``I_z`` quantum number of every eigenstate (H conserves it)."""
    fz = np.real(np.diag(eb.to_eigen(total_op(eb.n, "z"))))
    return np.round(2 * fz) / 2


def dephase(rho: DensityOp, eb: EigenBasis, mode: Literal["ideal"] | Randomized = "ideal") -> DensityOp:
    """Destroy coherences in the eigenbasis; the diagonal is left untouched.

    ``"ideal"`` zeroes every off-diagonal element. :class:`Randomized` first
    removes elements between states of different total ``I_z`` (what a
    field-gradient pulse does) and then multiplies the surviving
    zero-quantum elements by their random-delay average. Degenerate
    zero-quantum pairs are not attenuated at all.
    """
    r = rho.in_eigenbasis(eb).m
    out = np.zeros_like(r)
    if mode == "ideal":
        np.fill_diagonal(out, np.diag(r))
    elif isinstance(mode, Randomized):
        mz = coherence_orders(eb)
        same = mz[:, None] == mz[None, :]
        gaps = eb.energies_hz[:, None] - eb.energies_hz[None, :]
        fac = np.where(same, dephasing_factors(gaps, mode), 0.0)
        out = r * fac
        np.fill_diagonal(out, np.diag(r))
    else:
        raise ValidationError(f"unknown dephasing mode {mode!r}")
    return DensityOp(out, rho.kind, "eigen")


# ---------------------------------------------------------------------------
# Tomography


@dataclass
class TomographyPlan:
    """Sets of transitions whose intensities (plus normalization) fix the
    populations; each set must contain ``dim - 1`` transitions."""

    sets: list[list[int]]
    theta_rad: float = math.radians(3.0)

    def to_json(self) -> dict:
        return {"theta_deg": math.degrees(self.theta_rad), "sets": [list(s) for s in self.sets]}

    @classmethod
    def from_json(cls, data: dict) -> "TomographyPlan":
        try:
            sets = [[int(i) for i in s] for s in data["sets"]]
            return cls(sets, math.radians(float(data.get("theta_deg", 3.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed tomography plan: {exc}") from exc

    def design_matrix(self, k: int, trs: Sequence[Transition], dim: int) -> np.ndarray:
        """Rows: one per transition of set ``k``, then the trace row."""
        idx = self.sets[k]
        if any(not 0 <= i < len(trs) for i in idx):
            raise ValidationError(f"set {k} references a transition that does not exist")
        a = detection_matrix([trs[i] for i in idx], dim, self.theta_rad)
        return np.vstack([a, np.ones((1, dim))])

    def validate(self, trs: Sequence[Transition], dim: int) -> None:
        if not self.sets:
            raise ValidationError("tomography plan has no sets")
        for k, s in enumerate(self.sets):
            if len(s) != dim - 1:
                raise ValidationError(f"set {k} has {len(s)} transitions, need {dim - 1}")
            rank = np.linalg.matrix_rank(self.design_matrix(k, trs, dim))
            if rank < dim:
                raise SingularDesign(f"set {k} has rank {rank} < {dim}")


def load_plan(path) -> TomographyPlan:
    return TomographyPlan.from_json(read_json(path))


def default_plan(trs: Sequence[Transition], dim: int, n_sets: int = 3,
                 theta_rad: float = math.radians(3.0)) -> TomographyPlan:
    """Build ``n_sets`` spanning trees of the level graph from strong lines.

    A set of ``dim - 1`` transitions is independent exactly when it links
    all levels without a cycle. Each tree is grown greedily from the
    strongest lines, preferring lines not used by earlier trees.
    """
    used: dict[int, int] = {}
    sets = []
    for _ in range(n_sets):
        order = sorted(range(len(trs)), key=lambda i: (used.get(i, 0), -trs[i].moment2, i))
        parent = list(range(dim))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        chosen = []
        for i in order:
            ra, rb = find(trs[i].upper), find(trs[i].lower)
            if ra != rb:
                parent[ra] = rb
                chosen.append(i)
                if len(chosen) == dim - 1:
                    break
        if len(chosen) != dim - 1:
            raise SingularDesign("allowed transitions do not connect every level")
        for i in chosen:
            used[i] = used.get(i, 0) + 1
        sets.append(sorted(chosen))
    return TomographyPlan(sets, theta_rad)


@dataclass
class TomographyResult:
    populations: np.ndarray  # eigenbasis order, mean over sets
    per_set: np.ndarray
    residuals: list[float]


def measure_diagonal(
    rho: DensityOp,
    plan: TomographyPlan,
    sys: SpinSystem,
    eb: EigenBasis,
    trs: Sequence[Transition] | None = None,
    noise: float = 0.0,
    seed: int = 0,
) -> TomographyResult:
    """Recover eigenbasis populations from small-angle line intensities.

    For each set, the intensities of its lines are synthesized from the
    populations of ``rho`` and solved by least squares together with the
    trace row (``0`` for deviations, ``1`` for full states). ``noise`` adds
    Gaussian noise of that standard deviation to the intensities.
    """
    trs = transitions(eb) if trs is None else trs
    dim = eb.dim
    plan.validate(trs, dim)
    pops = rho.populations(eb)
    trace = 1.0 if rho.kind == "full" else 0.0
    rng = rng_stream(seed, 0)
    sols, resid = [], []
    for k in range(len(plan.sets)):
        a = plan.design_matrix(k, trs, dim)
        b = a[:-1] @ pops
        if noise:
            b = b + rng.normal(scale=noise, size=b.size)
        rhs = np.append(b, trace)
        x, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        sols.append(x)
        resid.append(float(np.linalg.norm(a @ x - rhs)))
    sols = np.array(sols)
    return TomographyResult(sols.mean(axis=0), sols, resid)


def diagonal_correlation(rho_t, rho_e) -> float:
    """Normalized overlap of the absolute diagonals of two operators.

    Accepts :class:`DensityOp`, square matrices, or 1-D diagonals; both
    arguments must be in the same basis.
    """
    dt, de = _abs_diag(rho_t), _abs_diag(rho_e)
    if dt.shape != de.shape:
        raise DimensionMismatch(f"{dt.shape} vs {de.shape}")
    nt, ne = dt @ dt, de @ de
    if nt == 0 or ne == 0:
        raise ZeroDiagonal("diagonal is identically zero")
    return float(dt @ de / math.sqrt(nt * ne))


def _abs_diag(x) -> np.ndarray:
    m = x.m if isinstance(x, DensityOp) else np.asarray(x)
    d = np.diag(m) if m.ndim == 2 else m
    return np.abs(d).astype(float)


# ---------------------------------------------------------------------------
# End-to-end


@dataclass
class ExperimentResult:
    labels: list[str]  # computational order
    diag: np.ndarray  # measured output diagonal, computational order
    diag_theory: np.ndarray
    pops_diag: np.ndarray  # measured POPS diagonal, computational order
    pops_theory: np.ndarray
    c_pops: float
    c_qnge: float | None
    gradient: int
    confidence: float
    residuals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "diagonal": self.diag.tolist(),
            "diagonal_theory": self.diag_theory.tolist(),
            "pops_diagonal": self.pops_diag.tolist(),
            "pops_theory": self.pops_theory.tolist(),
            "C_pops": self.c_pops,
            "C_qnge": self.c_qnge,
            "gradient": self.gradient,
            "confidence": self.confidence,
            "residuals": self.residuals,
        }


def ensemble_apply(rho: DensityOp, eb: EigenBasis, smp: Smp, sys: SpinSystem,
                   grid: RobustnessGrid) -> DensityOp:
    """Weighted incoherent average of ``U_g rho U_g^H`` over the grid."""
    eng = PulseEngine(sys, grid)
    u = eng.propagators(smp)
    m = rho.in_zeeman(eb).m
    out = np.einsum("g,gij,jk,glk->il", eng.weights, u, m, u.conj())
    out = 0.5 * (out + out.conj().T)
    return DensityOp(out, rho.kind, "zeeman")


def run_experiment(
    sys: SpinSystem,
    eb: EigenBasis,
    smp: Smp | None,
    plan: TomographyPlan,
    grid: RobustnessGrid,
    pops_transition: int,
    spec: QngeSpec | None = None,
    mode: Literal["ideal", "full"] = "full",
    seed: int = 0,
    dephasing: Randomized | None = None,
    trs: Sequence[Transition] | None = None,
) -> ExperimentResult:
    """POPS -> QNGE -> dephase -> tomography -> correlation -> readout.

    ``ideal`` applies the exact embedded circuit, swaps populations for the
    POPS and dephases ideally. ``full`` uses the Gaussian-shaped POPS, the
    pulse ``smp`` averaged over ``grid``, and gradient plus random-delay
    dephasing (32 delays up to 10 ms unless ``dephasing`` says otherwise).
    Diagonals are reported in computational (label) order; the theory is
    the exact circuit applied to the ideal POPS.

    The POPS negative branch sits on ``|0...0>`` and its image under the
    circuit does not depend on the oracle. Before the readout that known
    image, scaled by the measured depth of the branch, is added back so
    that only the oracle-dependent positive branch is read; otherwise a
    constant oracle cancels the two branches exactly. ``c_qnge`` is None
    when the theoretical output diagonal vanishes identically.
    """
    spec = spec or example_instance()
    trs = transitions(eb) if trs is None else trs
    lay = RegisterLayout(spec.n0, spec.n)
    if lay.dim != eb.dim:
        raise DimensionMismatch(f"QNGE needs dim {lay.dim}, spin system has {eb.dim}")
    perm = eb.label_permutation()
    u_comp = compose_qnge(spec)

    pops_ideal = prepare_pops(sys, eb, pops_transition, "ideal", trs)
    theory_in = np.real(np.diag(pops_ideal.m))[perm]
    theory_out = np.real(np.diag(u_comp @ np.diag(theory_in) @ u_comp.conj().T))

    if mode == "ideal":
        pops = pops_ideal
        u_lab = embed_target(u_comp, eb)
        m = pops.in_zeeman(eb).m
        after = DensityOp(u_lab @ m @ u_lab.conj().T, "deviation", "zeeman")
        dmode: Literal["ideal"] | Randomized = "ideal"
    elif mode == "full":
        if smp is None:
            raise ValidationError("full mode needs a pulse")
        pops = prepare_pops(sys, eb, pops_transition, "shaped", trs)
        after = ensemble_apply(pops, eb, smp, sys, grid)
        dmode = dephasing or Randomized(32, 0.01, seed)
    else:
        raise ValidationError(f"unknown mode {mode!r}")

    pops_meas = measure_diagonal(dephase(pops, eb, dmode), plan, sys, eb, trs)
    out_meas = measure_diagonal(dephase(after, eb, dmode), plan, sys, eb, trs)
    pops_diag = pops_meas.populations[perm]
    diag = out_meas.populations[perm]
    branch = max(0.0, -pops_diag[0]) * np.abs(u_comp[:, 0]) ** 2
    g, conf = readout_gradient(diag + branch, lay)
    try:
        c_qnge = diagonal_correlation(theory_out, diag)
    except ZeroDiagonal:
        c_qnge = None
    return ExperimentResult(
        labels=[eb.labels[i] for i in perm],
        diag=diag,
        diag_theory=theory_out,
        pops_diag=pops_diag,
        pops_theory=theory_in,
        c_pops=diagonal_correlation(theory_in, pops_diag),
        c_qnge=c_qnge,
        gradient=g,
        confidence=conf,
        residuals={"pops": pops_meas.residuals, "qnge": out_meas.residuals},
    )
