"""Small-register statevector and density-matrix simulation.

Gate conventions: ``RX(t) = exp(-i t X / 2)``, ``RZ(t) = exp(-i t Z / 2)``;
``CNOT`` takes ``(control, target)``. Qubit ``k`` is bit ``k`` of the basis
index (see :mod:`qcbm_em.distributions`).

Noisy circuits apply a depolarizing channel after every gate (a SWAP counts
as three CNOTs and receives the two-qubit channel three times) and a
classical per-qubit readout confusion on the final distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .distributions import CountVector
from .errors import DomainError, SizeError, UnknownNameError

MAX_EXACT_QUBITS = 6
MAX_NOISY_QUBITS = 5

ROTATIONS = frozenset({"RX", "RZ"})
ONE_QUBIT = frozenset({"RX", "RZ", "X"})
TWO_QUBIT = frozenset({"CNOT", "SWAP"})


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.kind not in ONE_QUBIT | TWO_QUBIT:
            raise DomainError(f"unknown gate kind {self.kind!r}")
        arity = 1 if self.kind in ONE_QUBIT else 2
        if len(self.qubits) != arity:
            raise DomainError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != arity or min(self.qubits) < 0:
            raise DomainError(f"invalid qubit indices {self.qubits}")
        if (self.angle is not None) != (self.kind in ROTATIONS):
            raise DomainError(f"{self.kind} angle must be given iff the gate is a rotation")
        if self.angle is not None:
            object.__setattr__(self, "angle", float(self.angle))


def rx(q: int, angle: float) -> Gate:
    return Gate("RX", (q,), angle)


def rz(q: int, angle: float) -> Gate:
    return Gate("RZ", (q,), angle)


def x(q: int) -> Gate:
    return Gate("X", (q,))


def cnot(control: int, target: int) -> Gate:
    return Gate("CNOT", (control, target))


def swap(a: int, b: int) -> Gate:
    return Gate("SWAP", (a, b))


@dataclass(frozen=True)
class Circuit:
    """Ordered gate list on ``n_qubits`` wires.

    ``measure_map[l]`` is the wire holding logical qubit ``l`` at measurement
    time (set by routing); ``None`` means wire ``l`` holds qubit ``l``.
    """

    n_qubits: int
    gates: tuple[Gate, ...] = ()
    measure_map: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.n_qubits < 1:
            raise DomainError("a circuit needs at least one qubit")
        for g in self.gates:
            if max(g.qubits) >= self.n_qubits:
                raise DomainError(f"gate {g} exceeds {self.n_qubits} qubits")
        if self.measure_map is not None:
            m = tuple(int(w) for w in self.measure_map)
            if sorted(m) != list(range(self.n_qubits)):
                raise DomainError(f"measure_map {m} is not a permutation")
            object.__setattr__(self, "measure_map", m)

    def __len__(self):
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)


@dataclass(frozen=True)
class NoiseModel:
    """Per-qubit readout flips ``(p(0->1), p(1->0))`` and depolarizing gate errors."""

    readout: tuple[tuple[float, float], ...] = ()
    depol_1q: float = 0.0
    depol_2q: float = 0.0

    def __post_init__(self):
        ro = tuple((float(a), float(b)) for a, b in self.readout)
        object.__setattr__(self, "readout", ro)
        for p in [self.depol_1q, self.depol_2q, *(v for pair in ro for v in pair)]:
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"noise probability {p} outside [0, 1]")

    @classmethod
    def uniform(cls, n_qubits: int, p01: float = 0.0, p10: float | None = None,
                depol_1q: float = 0.0, depol_2q: float = 0.0) -> "NoiseModel":
        p10 = p01 if p10 is None else p10
        return cls(((p01, p10),) * n_qubits, depol_1q, depol_2q)

    def confusion(self, qubit: int) -> np.ndarray:
        """2x2 matrix with ``[a, b] = P(read b | true a)``."""
        if qubit >= len(self.readout):
            return np.eye(2)
        p01, p10 = self.readout[qubit]
        return np.array([[1.0 - p01, p01], [p10, 1.0 - p10]])

    def readout_matrix(self, n_qubits: int) -> np.ndarray:
        """Full ``2^N x 2^N`` readout confusion in the package index convention."""
        r = np.ones((1, 1))
        for k in range(n_qubits):
            # qubit k is bit k, so it is the more significant factor as k grows
            r = np.kron(self.confusion(k), r)
        return r

    @property
    def is_noiseless(self) -> bool:
        return self.depol_1q == 0 and self.depol_2q == 0 and all(
            a == 0 and b == 0 for a, b in self.readout)


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    n_qubits: int
    coupling: frozenset[tuple[int, int]]
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        edges = frozenset(tuple(sorted((int(a), int(b)))) for a, b in self.coupling)
        object.__setattr__(self, "coupling", edges)
        graph = coupling_graph(edges, self.n_qubits)
        if graph.number_of_nodes() != self.n_qubits or not nx.is_connected(graph):
            raise DomainError(f"coupling graph of {self.name!r} is not connected over "
                              f"{self.n_qubits} qubits")

    def with_noise(self, noise: NoiseModel, name: str | None = None) -> "DeviceProfile":
        return replace(self, noise=noise, name=name or self.name)


def coupling_graph(edges: Iterable[tuple[int, int]], n_qubits: int) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(n_qubits))
    for a, b in edges:
        if a == b or not (0 <= a < n_qubits and 0 <= b < n_qubits):
            raise DomainError(f"invalid coupling edge {(a, b)}")
        graph.add_edge(a, b)
    return graph


def complete_coupling(n_qubits: int) -> frozenset[tuple[int, int]]:
    return frozenset((a, b) for a in range(n_qubits) for b in range(a + 1, n_qubits))


# Stand-ins for the hardware qubit subsets. Readout flip 0.0164 gives a
# |0000> assignment fidelity of (1 - 0.0164)^4 = 0.936.
_STAR = frozenset({(0, 1), (0, 2), (0, 3)})
_LINE = frozenset({(0, 1), (1, 2), (2, 3)})
_PLAQUETTE = frozenset({(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)})

_PRESETS = {
    "noiseless": (complete_coupling(4), NoiseModel.uniform(4)),
    "P_A": (_PLAQUETTE, NoiseModel(((0.014, 0.022), (0.018, 0.03), (0.016, 0.026), (0.02, 0.034)),
                                   0.001, 0.012)),
    "P_B": (_PLAQUETTE, NoiseModel.uniform(4, 0.0164, depol_1q=0.001, depol_2q=0.01)),
    "T_0": (_STAR, NoiseModel(((0.012, 0.02), (0.015, 0.025), (0.011, 0.018), (0.014, 0.022)),
                              0.0008, 0.009)),
    "T_1": (_LINE, NoiseModel(((0.02, 0.035), (0.025, 0.04), (0.018, 0.03), (0.022, 0.038)),
                              0.001, 0.015)),
    "valencia": (_STAR, NoiseModel(((0.015, 0.025), (0.012, 0.02), (0.018, 0.028), (0.014, 0.024)),
                                   0.0005, 0.008)),
}
_ALIASES = {"tokyo-PB-like": "P_B", "tokyo-PA-like": "P_A"}

PRESET_NAMES = tuple(sorted(_PRESETS)) + tuple(sorted(_ALIASES))


def device_preset(name: str) -> DeviceProfile:
    key = _ALIASES.get(name, name)
    if key not in _PRESETS:
        raise UnknownNameError(f"unknown device preset {name!r}; known: {', '.join(PRESET_NAMES)}")
    coupling, noise = _PRESETS[key]
    return DeviceProfile(name, 4, coupling, noise)


# -- gate matrices ---------------------------------------------------------

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
                 dtype=complex).reshape(2, 2, 2, 2)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]],
                 dtype=complex).reshape(2, 2, 2, 2)


def gate_matrix(gate: Gate) -> np.ndarray:
    """Unitary of ``gate``; two-qubit gates are ``(2,2,2,2)`` ordered as ``gate.qubits``."""
    if gate.kind == "RX":
        c, s = math.cos(gate.angle / 2), math.sin(gate.angle / 2)
        return np.array([[c, -1j * s], [-1j * s, c]])
    if gate.kind == "RZ":
        h = gate.angle / 2
        return np.array([[complex(math.cos(h), -math.sin(h)), 0], [0, complex(math.cos(h), math.sin(h))]])
    if gate.kind == "X":
        return _X
    if gate.kind == "CNOT":
        return _CNOT
    return _SWAP


def _axes(qubits: Sequence[int], n_qubits: int) -> list[int]:
    # C-order reshape puts the most significant bit (qubit n-1) on axis 0
    return [n_qubits - 1 - q for q in qubits]


def _apply(tensor: np.ndarray, u: np.ndarray, axes: list[int]) -> np.ndarray:
    k = len(axes)
    out = np.tensordot(u, tensor, axes=(list(range(k, 2 * k)), axes))
    return np.moveaxis(out, list(range(k)), axes)


@lru_cache(maxsize=None)
def _permutation(kind: str, a: int, b: int, n_qubits: int) -> np.ndarray:
    """Basis-index permutation of a CNOT ``(a -> b)`` or SWAP ``(a, b)``."""
    idx = np.arange(2**n_qubits)
    bit_a, bit_b = (idx >> a) & 1, (idx >> b) & 1
    if kind == "CNOT":
        return idx ^ (bit_a << b)
    return idx ^ ((bit_a ^ bit_b) << a) ^ ((bit_a ^ bit_b) << b)


def _fused(circuit: Circuit):
    """Yield ``(qubit, unitary, n_gates)`` for runs of one-qubit gates and the
    two-qubit gates themselves, in an order equivalent to the circuit.

    Runs on one qubit commute with everything not touching that qubit, so they
    are flushed only when a two-qubit gate needs the qubit, or at the end.
    """
    pending: dict[int, tuple[np.ndarray, int]] = {}
    for g in circuit.gates:
        if len(g.qubits) == 1:
            q = g.qubits[0]
            u, count = pending.get(q, (None, 0))
            m = gate_matrix(g)
            pending[q] = (m if u is None else m @ u, count + 1)
            continue
        for q in g.qubits:
            if q in pending:
                yield (q, *pending.pop(q))
        yield g
    for q in sorted(pending):
        yield (q, *pending[q])


@lru_cache(maxsize=None)
def _measure_permutation(measure_map: tuple[int, ...]) -> np.ndarray:
    n = len(measure_map)
    wires = np.arange(2**n)
    logical = np.zeros_like(wires)
    for q, w in enumerate(measure_map):
        logical |= ((wires >> w) & 1) << q
    return logical


def _to_logical(probs: np.ndarray, circuit: Circuit) -> np.ndarray:
    if circuit.measure_map is None or circuit.measure_map == tuple(range(circuit.n_qubits)):
        return probs
    out = np.zeros_like(probs)
    out[_measure_permutation(circuit.measure_map)] = probs
    return out


def statevector(circuit: Circuit) -> np.ndarray:
    """Final state from ``|0...0>`` on the circuit's wires (no measure relabeling)."""
    n = circuit.n_qubits
    if n > MAX_EXACT_QUBITS:
        raise SizeError(f"{n} qubits exceeds the statevector limit of {MAX_EXACT_QUBITS}")
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    for op in _fused(circuit):
        if isinstance(op, Gate):
            psi = psi[_permutation(op.kind, *op.qubits, n)]
        else:
            q, u, _ = op
            psi = (u @ psi.reshape(2 ** (n - 1 - q), 2, 2**q)).reshape(-1)
    return psi


def exact_distribution(circuit: Circuit) -> np.ndarray:
    """Noiseless outcome probabilities indexed by logical basis state."""
    probs = np.abs(statevector(circuit)) ** 2
    return _to_logical(probs, circuit)


def _replace_with_mixed(rho: np.ndarray, q: int, n: int) -> np.ndarray:
    """``I/2 (x) Tr_q(rho)``: qubit ``q`` replaced by the maximally mixed state."""
    hi, lo = 2 ** (n - 1 - q), 2**q
    r = rho.reshape(hi, 2, lo, hi, 2, lo)
    half_trace = 0.5 * (r[:, 0, :, :, 0, :] + r[:, 1, :, :, 1, :])
    out = np.zeros_like(r)
    out[:, 0, :, :, 0, :] = half_trace
    out[:, 1, :, :, 1, :] = half_trace
    return out.reshape(rho.shape)


def _depolarize(rho: np.ndarray, p: float, qubits: Sequence[int], n: int) -> np.ndarray:
    # rho -> (1-p) rho + p * (I/d on qubits) (x) Tr_qubits(rho)
    mixed = rho
    for q in qubits:
        mixed = _replace_with_mixed(mixed, q, n)
    return (1.0 - p) * rho + p * mixed


def density_matrix(circuit: Circuit, noise: NoiseModel = NOISELESS) -> np.ndarray:
    """Final density matrix with a depolarizing channel after every gate.

    A fused run of ``k`` one-qubit gates gets a single channel of strength
    ``1 - (1 - p)^k``, which is exact because the channel commutes with
    one-qubit unitaries and composes multiplicatively.
    """
    n = circuit.n_qubits
    if n > MAX_NOISY_QUBITS:
        raise SizeError(f"{n} qubits exceeds the density-matrix limit of {MAX_NOISY_QUBITS}")
    dim = 2**n
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    for op in _fused(circuit):
        if isinstance(op, Gate):
            perm = _permutation(op.kind, *op.qubits, n)
            rho = rho[perm][:, perm]
            if noise.depol_2q:
                for _ in range(3 if op.kind == "SWAP" else 1):
                    rho = _depolarize(rho, noise.depol_2q, op.qubits, n)
            continue
        q, u, count = op
        hi, lo = 2 ** (n - 1 - q), 2**q
        rho = (u @ rho.reshape(hi, 2, lo * dim)).reshape(dim, dim)
        rho = (u.conj() @ rho.reshape(dim * hi, 2, lo)).reshape(dim, dim)
        if noise.depol_1q:
            rho = _depolarize(rho, 1.0 - (1.0 - noise.depol_1q) ** count, (q,), n)
    return rho


def apply_readout(probs: np.ndarray, noise: NoiseModel, n_qubits: int) -> np.ndarray:
    """Classical readout confusion ``R^T q`` applied qubit by qubit."""
    q = np.asarray(probs, dtype=float).reshape((2,) * n_qubits)
    for k in range(min(n_qubits, len(noise.readout))):
        if noise.readout[k] == (0.0, 0.0):
            continue
        q = _apply(q, noise.confusion(k).T, [n_qubits - 1 - k])
    return q.reshape(-1)


def noisy_distribution(circuit: Circuit, noise: NoiseModel = NOISELESS) -> np.ndarray:
    """Outcome probabilities under depolarizing gate noise and readout confusion."""
    rho = density_matrix(circuit, noise)
    probs = np.clip(np.real(np.diagonal(rho)), 0.0, None)
    probs = apply_readout(probs, noise, circuit.n_qubits)
    return _to_logical(probs / probs.sum(), circuit)


def sample(circuit: Circuit, noise: NoiseModel, shots: int, rng: np.random.Generator) -> CountVector:
    if shots < 1:
        raise DomainError(f"shots must be >= 1, got {shots}")
    probs = noisy_distribution(circuit, noise)
    return CountVector(rng.multinomial(shots, probs).astype(float))
