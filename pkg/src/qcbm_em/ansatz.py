"""Bi-layer QCBM ansatz, calibration circuits and coupling-graph routing."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import networkx as nx
import numpy as np

from .distributions import MAX_QUBITS, BasisState
from .errors import ConstructionError, DomainError, RoutingError, ShapeError, SizeError, UnknownNameError
from .simulator import Circuit, Gate, coupling_graph, exact_distribution, rx, rz, statevector, x

ENTANGLER_LAYOUTS = {
    "dc2": ((0, 1), (2, 3)),
    "dc3_line": ((0, 1), (1, 2), (2, 3)),
    # degree-3 tree rooted at qubit 0; the root is the target of every CNOT
    "dc3_star": ((1, 0), (2, 0), (3, 0)),
    # same tree with the root as control: the three CNOTs commute and the
    # ansatz cannot reach BAS(2,2) (best KL ~0.17), kept for comparison
    "dc3_fanout": ((0, 1), (0, 2), (0, 3)),
}

# middle-layer RX, RZ, RX angles that send |0> to |1> up to phase
FLIP_TRIPLE = (np.pi, 0.0, 0.0)
IDENTITY_TRIPLE = (0.0, 0.0, 0.0)


def entangler_layout(name: str) -> tuple[tuple[int, int], ...]:
    """CNOT ``(control, target)`` pairs of one entangling layer."""
    try:
        return ENTANGLER_LAYOUTS[name]
    except KeyError:
        raise UnknownNameError(
            f"unknown entangler layout {name!r}; known: {', '.join(ENTANGLER_LAYOUTS)}") from None


@dataclass(frozen=True)
class AnsatzSpec:
    """Rotation layers A (RX,RZ), B (RX,RZ,RX), C (RX,RZ) around two entanglers.

    Parameters are qubit-major within each layer: slots ``0..2N-1`` for A,
    ``2N..5N-1`` for B and ``5N..7N-1`` for C.
    """

    n_qubits: int = 4
    entangler: str = "dc3_star"

    def __post_init__(self):
        for a, b in self.pairs:
            if a == b or max(a, b) >= self.n_qubits:
                raise DomainError(f"CNOT pair {(a, b)} invalid for {self.n_qubits} qubits")

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return entangler_layout(self.entangler)

    @property
    def d_c(self) -> int:
        return len(self.pairs)

    @property
    def n_params(self) -> int:
        return 7 * self.n_qubits

    @property
    def layer_slices(self) -> tuple[slice, slice, slice]:
        n = self.n_qubits
        return slice(0, 2 * n), slice(2 * n, 5 * n), slice(5 * n, 7 * n)


def _check_theta(spec: AnsatzSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ShapeError(f"expected {spec.n_params} parameters, got shape {theta.shape}")
    return theta


def build_circuit(spec: AnsatzSpec, theta) -> Circuit:
    theta = _check_theta(spec, theta)
    n = spec.n_qubits
    a, b, c = (theta[s] for s in spec.layer_slices)
    gates: list[Gate] = []
    for q in range(n):
        gates += [rx(q, a[2 * q]), rz(q, a[2 * q + 1])]
    gates += [Gate("CNOT", pair) for pair in spec.pairs]
    for q in range(n):
        gates += [rx(q, b[3 * q]), rz(q, b[3 * q + 1]), rx(q, b[3 * q + 2])]
    gates += [Gate("CNOT", pair) for pair in spec.pairs]
    for q in range(n):
        gates += [rx(q, c[2 * q]), rz(q, c[2 * q + 1])]
    return Circuit(n, gates)


def parameter_gate_indices(spec: AnsatzSpec) -> np.ndarray:
    """Position in :func:`build_circuit`'s gate list of the gate driven by each slot."""
    n, d = spec.n_qubits, spec.d_c
    layer_a = np.arange(2 * n)
    layer_b = 2 * n + d + np.arange(3 * n)
    layer_c = 5 * n + 2 * d + np.arange(2 * n)
    return np.concatenate([layer_a, layer_b, layer_c])


def random_theta(spec: AnsatzSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, spec.n_params)


def cnot_count(circuit: Circuit) -> int:
    """CNOTs plus three per SWAP."""
    return sum(1 if g.kind == "CNOT" else 3 if g.kind == "SWAP" else 0 for g in circuit.gates)


# -- calibration -------------------------------------------------------------


def hw_calibration_circuits(n_qubits: int) -> list[Circuit]:
    """Circuit ``i`` applies X to every qubit whose bit is set in ``i``."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeError(f"calibration supports 1..{MAX_QUBITS} qubits, got {n_qubits}")
    return [Circuit(n_qubits, [x(k) for k in range(n_qubits) if (i >> k) & 1])
            for i in range(2**n_qubits)]


def propagate_cnots(pairs, index: int) -> int:
    """Classical (GF(2)) action of a CNOT sequence on a basis index."""
    for control, target in pairs:
        if (index >> control) & 1:
            index ^= 1 << target
    return index


def _verify_flip_triple(triple) -> None:
    psi = statevector(Circuit(1, [rx(0, triple[0]), rz(0, triple[1]), rx(0, triple[2])]))
    if abs(abs(psi[1]) - 1.0) > 1e-12:
        raise ConstructionError(f"triple {triple} does not flip |0> to |1> (|<1|U|0>| = {abs(psi[1]):.3g})")


def circ_calibration_params(spec: AnsatzSpec, target: BasisState | int) -> np.ndarray:
    """Angles that make the ansatz prepare ``target`` exactly in the absence of noise.

    Outer layers are zero; each middle-layer triple is either the identity or
    the flip triple, chosen on the pre-image of ``target`` under the second
    entangling layer (CNOTs are self-inverse, so the pre-image is the layer
    applied in reverse order).
    """
    index = target.index if isinstance(target, BasisState) else int(target)
    if not 0 <= index < 2**spec.n_qubits:
        raise DomainError(f"target {index} out of range for {spec.n_qubits} qubits")
    _verify_flip_triple(FLIP_TRIPLE)
    pre = propagate_cnots(reversed(spec.pairs), index)
    theta = np.zeros(spec.n_params)
    middle = spec.layer_slices[1].start
    for q in range(spec.n_qubits):
        triple = FLIP_TRIPLE if (pre >> q) & 1 else IDENTITY_TRIPLE
        theta[middle + 3 * q: middle + 3 * q + 3] = triple
    return theta


def circ_calibration_circuits(spec: AnsatzSpec) -> list[Circuit]:
    return [build_circuit(spec, circ_calibration_params(spec, i)) for i in range(2**spec.n_qubits)]


def calibration_check(spec: AnsatzSpec) -> float:
    """Smallest noiseless target probability over all calibration circuits."""
    return min(exact_distribution(c)[i] for i, c in enumerate(circ_calibration_circuits(spec)))


# -- routing -----------------------------------------------------------------


@lru_cache(maxsize=64)
def _connected(edges: frozenset, n_qubits: int) -> bool:
    try:
        return nx.is_connected(coupling_graph((tuple(e) for e in edges), n_qubits))
    except DomainError:
        return False


def route(circuit: Circuit, coupling) -> Circuit:
    """Greedy SWAP insertion so every two-qubit gate acts on a coupled pair.

    Logical qubit ``l`` starts on wire ``l``. A non-adjacent gate first walks
    its control along a shortest path until it neighbours the target. The final
    placement is stored in ``measure_map`` so simulation reports logical states.
    """
    n = circuit.n_qubits
    if circuit.measure_map is not None:
        raise RoutingError("circuit is already routed")
    edges = {frozenset(e) for e in coupling}
    conformant = all(len(g.qubits) == 1 or frozenset(g.qubits) in edges for g in circuit.gates)
    if conformant and _connected(frozenset(edges), n):
        return circuit
    graph = coupling_graph(coupling, n)
    if not nx.is_connected(graph):
        raise RoutingError("coupling graph is disconnected")

    wire_of = list(range(n))  # logical -> wire
    logical_on = list(range(n))  # wire -> logical
    out: list[Gate] = []
    for g in circuit.gates:
        if len(g.qubits) == 1:
            out.append(Gate(g.kind, (wire_of[g.qubits[0]],), g.angle))
            continue
        a, b = g.qubits
        path = nx.shortest_path(graph, wire_of[a], wire_of[b])
        for w0, w1 in zip(path[:-2], path[1:-1]):
            out.append(Gate("SWAP", (w0, w1)))
            la, lb = logical_on[w0], logical_on[w1]
            logical_on[w0], logical_on[w1] = lb, la
            wire_of[la], wire_of[lb] = w1, w0
        out.append(Gate(g.kind, (wire_of[a], wire_of[b])))
    return Circuit(n, out, measure_map=tuple(wire_of))
