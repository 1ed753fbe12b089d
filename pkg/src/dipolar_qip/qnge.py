"""Jordan's numerical gradient estimation as explicit unitaries.

Registers are laid out ancilla-first: the ``n0`` ancilla qubits are the most
significant bits of a basis index and the ``n`` input qubits the least
significant, so basis index ``a * 2**n + delta`` is ``|a>_anc |delta>_in``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    Degenerate,
    DimensionMismatch,
    NonIntegerImage,
    OutOfRange,
    ValidationError,
    ZeroRange,
)
from .io import read_json
from .spin import EigenBasis

INTEGER_TOL = 1e-6


@dataclass(frozen=True)
class RegisterLayout:
    n0: int
    n: int

    @property
    def n_anc(self) -> int:
        return 2**self.n0

    @property
    def n_in(self) -> int:
        return 2**self.n

    @property
    def dim(self) -> int:
        return 2 ** (self.n0 + self.n)

    def index(self, anc: int, inp: int) -> int:
        return anc * self.n_in + inp

    def split(self, index: int) -> tuple[int, int]:
        return divmod(index, self.n_in)

    def label(self, index: int) -> str:
        return format(index, f"0{self.n0 + self.n}b")


def encode_x(delta: int, l: float, n: int) -> float:
    """Real argument encoded by input register value ``delta``.

    ``x = l/(N-1) * (delta - (N-1)/2)`` with ``N = 2**n``, so the N points
    are evenly spaced on ``[-l/2, l/2]``.
    """
    big_n = 2**n
    if not 0 <= delta < big_n:
        raise OutOfRange(f"delta={delta} outside [0, {big_n})")
    if big_n == 1:
        return 0.0
    return l / (big_n - 1) * (delta - (big_n - 1) / 2)


def scale_factor(n0: int, n: int, l: float) -> float:
    """Scaling ``s = N0 (N-1) / (N l)`` that maps a unit gradient onto one
    input-register step after the final QFT."""
    if l == 0:
        raise ZeroRange("range l must be nonzero")
    big_n0, big_n = 2**n0, 2**n
    return big_n0 * (big_n - 1) / (big_n * l)


@dataclass
class QngeSpec:
    """One gradient-estimation instance.

    Attributes:
        n0: ancilla qubits.
        n: input qubits.
        l_range: width ``l`` of the sampled interval.
        f_samples: ``f(x(delta))`` for ``delta = 0..2**n - 1``.
        s: scaling factor; defaults to :func:`scale_factor`.
    """

    n0: int
    n: int
    l_range: float
    f_samples: np.ndarray
    s: float | None = None

    def __post_init__(self):
        if self.n0 < 1 or self.n < 1:
            raise ValidationError("n0 and n must both be >= 1")
        self.f_samples = np.asarray(self.f_samples, dtype=float).reshape(-1)
        if self.f_samples.size != 2**self.n:
            raise ValidationError(
                f"f_samples needs {2**self.n} values for n={self.n}, got {self.f_samples.size}"
            )
        if self.s is None:
            self.s = scale_factor(self.n0, self.n, self.l_range)

    @property
    def layout(self) -> RegisterLayout:
        return RegisterLayout(self.n0, self.n)

    @classmethod
    def from_function(cls, n0: int, n: int, l_range: float, func) -> "QngeSpec":
        xs = [encode_x(d, l_range, n) for d in range(2**n)]
        return cls(n0, n, l_range, np.array([func(x) for x in xs], dtype=float))

    @classmethod
    def linear(cls, n0: int, n: int, gradient: float, l_range: float = 1.0, offset: float = 0.0):
        """Instance for ``f(x) = offset + gradient * (x + l/2)``."""
        return cls.from_function(n0, n, l_range, lambda x: offset + gradient * (x + l_range / 2))

    def addends(self) -> np.ndarray:
        """Integer ancilla shifts ``round(s f)`` for every input value."""
        scaled = self.s * self.f_samples
        rounded = np.round(scaled)
        bad = np.abs(scaled - rounded) > INTEGER_TOL
        if np.any(bad):
            worst = int(np.argmax(np.abs(scaled - rounded)))
            raise NonIntegerImage(
                f"s*f(x) = {scaled[worst]:.9g} at delta={worst} is not an integer"
            )
        return rounded.astype(int)

    def to_json(self) -> dict:
        return {"n0": self.n0, "n": self.n, "l": self.l_range,
                "f_samples": self.f_samples.tolist(), "s": self.s}

    @classmethod
    def from_json(cls, data: dict) -> "QngeSpec":
        try:
            return cls(int(data["n0"]), int(data["n"]), float(data["l"]),
                       np.asarray(data["f_samples"], dtype=float), data.get("s"))
        except KeyError as exc:
            raise ValidationError(f"QNGE spec is missing field {exc.args[0]!r}") from exc


def load_qnge_spec(path) -> QngeSpec:
    return QngeSpec.from_json(read_json(path))


def example_instance() -> QngeSpec:
    """The two-ancilla, two-input example with f = {0, 2/3, 4/3, 2} on l = 1."""
    return QngeSpec(2, 2, 1.0, np.array([0.0, 2 / 3, 4 / 3, 2.0]))


# ---------------------------------------------------------------------------
# Gates


def qft_unitary(dim: int) -> np.ndarray:
    """``QFT[j, k] = exp(+2 pi i j k / dim) / sqrt(dim)``."""
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    j = np.arange(dim)
    return np.exp(2j * np.pi * np.outer(j, j) / dim) / math.sqrt(dim)


def iqft_unitary(dim: int) -> np.ndarray:
    return qft_unitary(dim).conj().T


def hadamard_register(n: int) -> np.ndarray:
    if n < 1:
        raise ValidationError("n must be >= 1")
    h = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    out = np.eye(1, dtype=complex)
    for _ in range(n):
        out = np.kron(out, h)
    return out


def oracle_unitary(spec: QngeSpec) -> np.ndarray:
    """Permutation ``|a, delta> -> |(a + round(s f(x(delta)))) mod N0, delta>``."""
    lay = spec.layout
    add = spec.addends()
    u = np.zeros((lay.dim, lay.dim), dtype=complex)
    for a in range(lay.n_anc):
        for d in range(lay.n_in):
            u[lay.index((a + add[d]) % lay.n_anc, d), lay.index(a, d)] = 1.0
    return u


def compose_qnge(spec: QngeSpec) -> np.ndarray:
    """Full circuit ``(I x IQFT) . U_f . (I x H) . (IQFT x I)``.

    The ancilla IQFT turns ``|1>`` into the ``exp(-2 pi i k / N0)`` plane
    wave, the oracle then kicks back ``exp(+2 pi i g delta / N)`` onto the
    input register, and the inverse transform there maps that phase ramp
    to ``|g>``. A forward transform would read out ``-g mod N`` instead.
    """
    lay = spec.layout
    eye_a, eye_i = np.eye(lay.n_anc), np.eye(lay.n_in)
    return (
        np.kron(eye_a, iqft_unitary(lay.n_in))
        @ oracle_unitary(spec)
        @ np.kron(eye_a, hadamard_register(spec.n))
        @ np.kron(iqft_unitary(lay.n_anc), eye_i)
    )


def initial_state(layout: RegisterLayout) -> np.ndarray:
    """``|0..01>_anc |0..0>_in`` as a state vector."""
    psi = np.zeros(layout.dim, dtype=complex)
    psi[layout.index(1, 0)] = 1.0
    return psi


def input_marginal(probs, layout: RegisterLayout) -> np.ndarray:
    return np.asarray(probs, dtype=float).reshape(layout.n_anc, layout.n_in).sum(axis=0)


def theoretical_output(layout: RegisterLayout, gradient: int) -> np.ndarray:
    """Output diagonal for the POPS input: ``I_anc x (|g><g| - |0><0|)``."""
    inp = np.zeros(layout.n_in)
    inp[gradient % layout.n_in] += 1.0
    inp[0] -= 1.0
    return np.kron(np.ones(layout.n_anc), inp)


# ---------------------------------------------------------------------------
# Embedding and readout


def embed_target(u_comp, eb: EigenBasis) -> np.ndarray:
    """Propagator in the Zeeman product basis that acts as ``u_comp`` on the
    labeled eigenstates: ``W u_comp W^H`` with ``W[:, L]`` the eigenstate
    labeled ``L``."""
    u_comp = np.asarray(u_comp, dtype=complex)
    if u_comp.shape != (eb.dim, eb.dim):
        raise DimensionMismatch(f"target is {u_comp.shape}, eigenbasis has dim {eb.dim}")
    w = eb.computational_frame()
    return w @ u_comp @ w.conj().T


def unembed(u_lab, eb: EigenBasis) -> np.ndarray:
    w = eb.computational_frame()
    return w.conj().T @ np.asarray(u_lab, dtype=complex) @ w


def readout_gradient(diag_pops, layout: RegisterLayout) -> tuple[int, float]:
    """Estimate the gradient from computational-basis populations.

    Only the positive part of a deviation diagonal is used; the negative
    POPS branch carries no gradient information. Ancilla populations are
    summed out and the most populated input value is returned together
    with its share of the positive mass.

    Raises:
        Degenerate: if the two largest input marginals agree within 1e-9.
    """
    pops = np.asarray(diag_pops, dtype=float)
    if pops.size != layout.dim:
        raise DimensionMismatch(f"expected {layout.dim} populations, got {pops.size}")
    marg = input_marginal(np.clip(pops, 0.0, None), layout)
    total = marg.sum()
    order = np.argsort(marg)[::-1]
    if total <= 0 or (marg.size > 1 and marg[order[0]] - marg[order[1]] <= 1e-9):
        raise Degenerate("no single input value dominates the readout")
    return int(order[0]), float(marg[order[0]] / total)
