"""Assignment error matrices and matrix-inversion measurement error mitigation.

An assignment error matrix (AEM) ``K`` has ``K[i, j] = P(measure j | prepare i)``,
so rows are stochastic and a true distribution ``t`` is observed as ``K.T @ t``.
Mitigation therefore solves ``K.T c' = c``, clips negative counts and
renormalizes by the surviving total.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .ansatz import AnsatzSpec, circ_calibration_circuits, hw_calibration_circuits, route
from .distributions import CountVector
from .errors import CalibrationError, DegenerateMitigationError, DomainError, ShapeError
from .simulator import Circuit, DeviceProfile, noisy_distribution

KERNEL_CLASSES = ("identity", "hw", "circ")
MAX_CONDITION = 1e6
ROW_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class AssignmentErrorMatrix:
    kernel_class: str
    entries: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kernel_class not in KERNEL_CLASSES:
            raise CalibrationError(f"unknown kernel class {self.kernel_class!r}")
        k = np.array(self.entries, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ShapeError(f"AEM must be square, got shape {k.shape}")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise CalibrationError(f"{self.label} has negative or non-finite entries")
        rows = k.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > ROW_ATOL:
            raise CalibrationError(f"{self.label} is not row-stochastic (row sums {rows.min():.6g}..{rows.max():.6g})")
        if self.kernel_class == "identity" and not np.array_equal(k, np.eye(k.shape[0])):
            raise CalibrationError("identity-class AEM must equal the identity matrix")
        cond = np.linalg.cond(k)
        if not cond <= MAX_CONDITION:
            raise CalibrationError(f"{self.label} is singular or ill-conditioned (condition number {cond:.3g})")
        k.setflags(write=False)
        object.__setattr__(self, "entries", k)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_states(self) -> int:
        return self.entries.shape[0]

    @property
    def label(self) -> str:
        name = self.meta.get("device") if isinstance(self.meta, dict) else None
        return f"K_{self.kernel_class}" + (f"[{name}]" if name else "")

    def to_json(self) -> dict:
        return {
            "kernel_class": self.kernel_class,
            "n_states": self.n_states,
            "meta": self.meta,
            "entries": self.entries.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AssignmentErrorMatrix":
        try:
            aem = cls(doc["kernel_class"], np.array(doc["entries"], dtype=float), doc.get("meta", {}))
        except KeyError as exc:
            raise CalibrationError(f"AEM document missing field {exc}") from None
        if "n_states" in doc and doc["n_states"] != aem.n_states:
            raise CalibrationError(f"AEM declares {doc['n_states']} states but holds {aem.n_states}")
        return aem

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "AssignmentErrorMatrix":
        return cls.from_json(json.loads(Path(path).read_text()))


def identity_aem(n_states: int = 16) -> AssignmentErrorMatrix:
    return AssignmentErrorMatrix("identity", np.eye(n_states), {"calibration_shots": 0})


def calibration_circuits(kind: str, spec: AnsatzSpec | None, n_qubits: int) -> list[Circuit]:
    if kind == "hw":
        return hw_calibration_circuits(n_qubits)
    if kind == "circ":
        if spec is None:
            raise DomainError("circ-class AEM needs an ansatz spec")
        return circ_calibration_circuits(spec)
    raise DomainError(f"no calibration circuits for kernel class {kind!r}")


def run_distribution(circuit: Circuit, device: DeviceProfile) -> np.ndarray:
    """Exact noisy output of ``circuit`` after routing it onto ``device``."""
    return noisy_distribution(route(circuit, device.coupling), device.noise)


def build_aem(kind: str, spec: AnsatzSpec | None = None, device: DeviceProfile | None = None,
              shots: int | None = 4096, rng: np.random.Generator | None = None,
              timestamp: str | None = None) -> AssignmentErrorMatrix:
    """Calibrate an AEM of class ``kind`` on ``device``.

    ``shots=None`` uses exact output distributions (the infinite-shot limit).
    Row ``i`` is the normalized outcome of the circuit preparing state ``i``.
    """
    n_qubits = spec.n_qubits if spec is not None else (device.n_qubits if device else 4)
    if kind == "identity":
        return identity_aem(2**n_qubits)
    if device is None:
        raise DomainError(f"{kind}-class AEM needs a device to calibrate on")
    if shots is not None and shots < 1:
        raise DomainError(f"shots must be >= 1, got {shots}")
    rng = np.random.default_rng() if rng is None else rng
    rows = []
    for circuit in calibration_circuits(kind, spec, n_qubits):
        probs = run_distribution(circuit, device)
        if shots is not None:
            probs = rng.multinomial(shots, probs) / shots
        rows.append(probs)
    meta = {
        "device": device.name,
        "layout": spec.entangler if kind == "circ" else None,
        "calibration_shots": shots,
        "created": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return AssignmentErrorMatrix(kind, np.array(rows), meta)


def mitigate(raw: CountVector, aem: AssignmentErrorMatrix) -> CountVector:
    """Solve ``K.T c' = c``, clip negatives to zero; the sum of the rest is n_s'."""
    if raw.n_states != aem.n_states:
        raise ShapeError(f"counts have {raw.n_states} states, AEM has {aem.n_states}")
    if aem.kernel_class == "identity":
        return raw
    try:
        solved = np.linalg.solve(aem.entries.T, raw.counts)
    except np.linalg.LinAlgError as exc:
        raise CalibrationError(f"{aem.label} is singular") from exc
    clipped = np.clip(solved, 0.0, None)
    if not clipped.sum() > 0:
        raise DegenerateMitigationError(f"mitigation with {aem.label} clipped every count to zero")
    return CountVector(clipped)


def mitigate_distribution(probs, aem: AssignmentErrorMatrix) -> np.ndarray:
    return mitigate(CountVector(probs), aem).distribution()


def frobenius_distance(aem: AssignmentErrorMatrix | np.ndarray) -> float:
    k = aem.entries if isinstance(aem, AssignmentErrorMatrix) else np.asarray(aem, dtype=float)
    return float(np.linalg.norm(np.eye(k.shape[0]) - k, "fro"))


class AEMDiagnostics(NamedTuple):
    condition_number: float
    min_row_fidelity: float


def aem_condition_diagnostics(aem: AssignmentErrorMatrix | np.ndarray) -> AEMDiagnostics:
    """2-norm condition number and the smallest diagonal (state fidelity)."""
    k = aem.entries if isinstance(aem, AssignmentErrorMatrix) else np.asarray(aem, dtype=float)
    cond = float(np.linalg.cond(k))
    return AEMDiagnostics(cond if math.isfinite(cond) else math.inf, float(np.min(np.diag(k))))
