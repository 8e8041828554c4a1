"""MMD training of the QCBM with error-mitigated parameter-shift gradients."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .ansatz import AnsatzSpec, build_circuit, random_theta, route
from .distributions import CountVector, kl_divergence, make_target
from .errors import DegenerateMitigationError, DomainError, ShapeError
from .mitigation import AssignmentErrorMatrix, mitigate
from .simulator import DeviceProfile, exact_distribution, noisy_distribution

log = logging.getLogger(__name__)

SHIFT = np.pi / 2


class KernelMatrix:
    """Gaussian kernel ``exp(-(x - y)^2 / (2 sigma^2))`` over integer state labels."""

    def __init__(self, n_states: int = 16, sigma: float = 0.1):
        if not sigma > 0:
            raise DomainError(f"kernel bandwidth must be positive, got {sigma}")
        self.n_states = n_states
        self.sigma = float(sigma)
        labels = np.arange(n_states, dtype=float)
        self.entries = np.exp(-((labels[:, None] - labels[None, :]) ** 2) / (2 * self.sigma**2))
        self.entries.setflags(write=False)
        if np.linalg.eigvalsh(self.entries).min() < -1e-10:
            raise DomainError(f"kernel with sigma={sigma} is not positive semi-definite")

    def __repr__(self):
        return f"KernelMatrix(n_states={self.n_states}, sigma={self.sigma})"


def mmd_loss(q, p, kernel: KernelMatrix) -> float:
    """Squared MMD ``q'Kq - 2 q'Kp + p'Kp``, evaluated as ``(q-p)' K (q-p)``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape or q.shape != (kernel.n_states,):
        raise ShapeError(f"shapes {q.shape}, {p.shape} do not match kernel size {kernel.n_states}")
    d = q - p
    return float(max(d @ kernel.entries @ d, 0.0))


# -- circuit evaluation ------------------------------------------------------


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, step, slot, sign)-style key."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def output_distribution(theta, spec: AnsatzSpec, device: DeviceProfile) -> np.ndarray:
    circuit = route(build_circuit(spec, theta), device.coupling)
    if device.noise.is_noiseless:
        return exact_distribution(circuit)
    return noisy_distribution(circuit, device.noise)


def evaluate(theta, spec: AnsatzSpec, device: DeviceProfile, aem: AssignmentErrorMatrix,
             shots: int | None, rng: np.random.Generator | None) -> tuple[CountVector, np.ndarray]:
    """Raw counts and mitigated distribution at ``theta``.

    With ``shots=None`` the exact output distribution stands in for the counts.
    """
    probs = output_distribution(theta, spec, device)
    if shots is None:
        raw = CountVector(probs)
    else:
        raw = CountVector(rng.multinomial(shots, probs).astype(float))
    return raw, mitigate(raw, aem).distribution()


def mmd_gradient(theta, spec: AnsatzSpec, device: DeviceProfile, p, kernel: KernelMatrix,
                 aem: AssignmentErrorMatrix, shots: int | None = 2048, seed: int = 0,
                 step: int = 0, q: np.ndarray | None = None) -> np.ndarray:
    """Parameter-shift gradient of the mitigated MMD loss.

    Each slot needs the mitigated distributions at ``theta +/- pi/2`` in that
    slot; ``q`` is the mitigated distribution at ``theta`` itself (evaluated
    if not supplied). Sampling streams are keyed on ``(seed, step, slot, sign)``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ShapeError(f"expected {spec.n_params} parameters, got shape {theta.shape}")
    p = np.asarray(p, dtype=float)
    if q is None:
        q = evaluate(theta, spec, device, aem, shots, stream(seed, step, 0, 0))[1]
    k = kernel.entries
    kq, kp = k @ q, k @ p
    grad = np.zeros(spec.n_params)
    for s in range(spec.n_params):
        shifted = []
        for sign_code, sign in ((1, 1.0), (2, -1.0)):
            th = theta.copy()
            th[s] += sign * SHIFT
            rng = None if shots is None else stream(seed, step, s + 1, sign_code)
            try:
                shifted.append(evaluate(th, spec, device, aem, shots, rng)[1])
            except DegenerateMitigationError as exc:
                exc.slot = s
                raise DegenerateMitigationError(f"slot {s} shift {'+' if sign > 0 else '-'}: {exc}") from exc
        dq = shifted[0] - shifted[1]
        grad[s] = dq @ kq - dq @ kp
    return grad


# -- Adam --------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    alpha: float = 0.25
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, alpha: float = 0.25, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, alpha, **kw)


def adam_step(state: AdamState, grad, theta) -> tuple[np.ndarray, AdamState]:
    grad = np.asarray(grad, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if grad.shape != theta.shape or grad.shape != state.first_moment.shape:
        raise ShapeError("gradient, parameters and Adam moments must share a shape")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grad**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_theta = theta - state.alpha * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_theta, replace(state, first_moment=m, second_moment=v, step_count=t)


# -- training loop -----------------------------------------------------------


@dataclass(frozen=True)
class TargetSpec:
    kind: str = "bas22"
    lam: float = 5.0
    custom_probs: tuple[float, ...] | None = None

    def distribution(self, n_states: int = 16) -> np.ndarray:
        return make_target(self.kind, self.lam, self.custom_probs, n_states)


@dataclass(frozen=True)
class TrainConfig:
    target: TargetSpec = field(default_factory=TargetSpec)
    spec: AnsatzSpec = field(default_factory=AnsatzSpec)
    device: DeviceProfile | None = None
    aem_kind: str = "identity"
    steps: int = 25
    shots_per_eval: int = 2048
    seed: int = 0
    init: str = "random"
    init_theta: tuple[float, ...] | None = None
    alpha: float = 0.25
    sigma: float = 0.1
    exact: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise DomainError(f"steps must be >= 0, got {self.steps}")
        if self.shots_per_eval < 1:
            raise DomainError(f"shots_per_eval must be >= 1, got {self.shots_per_eval}")
        if self.init not in ("random", "from_file"):
            raise DomainError(f"unknown init mode {self.init!r}")
        if self.init == "from_file" and self.init_theta is None:
            raise DomainError("init 'from_file' needs initial parameters")

    def fingerprint(self) -> str:
        doc = asdict(self)
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class TraceStep:
    step: int
    theta: np.ndarray
    raw: CountVector | None
    mitigated: np.ndarray | None
    loss: float
    event: str | None = None

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "theta": self.theta.tolist(),
            "raw_counts": None if self.raw is None else self.raw.counts.tolist(),
            "mitigated": None if self.mitigated is None else self.mitigated.tolist(),
            "loss": self.loss if math.isfinite(self.loss) else None,
            "event": self.event,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TraceStep":
        return cls(
            doc["step"],
            np.array(doc["theta"], dtype=float),
            None if doc.get("raw_counts") is None else CountVector(doc["raw_counts"]),
            None if doc.get("mitigated") is None else np.array(doc["mitigated"], dtype=float),
            math.nan if doc.get("loss") is None else float(doc["loss"]),
            doc.get("event"),
        )


@dataclass
class TrainTrace:
    steps: list[TraceStep]
    config_hash: str = ""
    aem_ref: str = ""

    def __len__(self):
        return len(self.steps)

    @property
    def losses(self) -> np.ndarray:
        return np.array([s.loss for s in self.steps])

    @property
    def thetas(self) -> list[np.ndarray]:
        return [s.theta for s in self.steps]

    def min_loss(self) -> float:
        finite = self.losses[np.isfinite(self.losses)]
        return float(finite.min()) if finite.size else math.inf

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            fh.write(json.dumps({"header": {"config_hash": self.config_hash, "aem": self.aem_ref}}) + "\n")
            for s in self.steps:
                fh.write(json.dumps(s.to_json()) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "TrainTrace":
        header, steps = {}, []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            if "header" in doc:
                header = doc["header"]
            else:
                steps.append(TraceStep.from_json(doc))
        return cls(steps, header.get("config_hash", ""), header.get("aem", ""))


def initial_theta(config: TrainConfig) -> np.ndarray:
    if config.init == "from_file":
        theta = np.array(config.init_theta, dtype=float)
        if theta.shape != (config.spec.n_params,):
            raise ShapeError(f"initial parameters need {config.spec.n_params} entries, got {theta.shape}")
        return theta
    return random_theta(config.spec, stream(config.seed))


def train(config: TrainConfig, aem: AssignmentErrorMatrix, aem_ref: str = "") -> TrainTrace:
    """Sample, mitigate, score and update for ``config.steps`` Adam steps.

    The AEM is fixed for the whole run. A step whose mitigation degenerates is
    recorded with its event and leaves the parameters unchanged.
    """
    if aem.kernel_class != config.aem_kind:
        raise DomainError(f"config asks for a {config.aem_kind} AEM but got {aem.kernel_class}")
    device = config.device
    if device is None:
        raise DomainError("training needs a device profile")
    spec = config.spec
    p = config.target.distribution(2**spec.n_qubits)
    kernel = KernelMatrix(p.size, config.sigma)
    shots = None if config.exact else config.shots_per_eval

    theta = initial_theta(config)
    adam = AdamState.zeros(spec.n_params, config.alpha)
    steps: list[TraceStep] = []
    for t in range(config.steps + 1):
        rng = None if shots is None else stream(config.seed, t, 0, 0)
        try:
            raw, q = evaluate(theta, spec, device, aem, shots, rng)
        except DegenerateMitigationError as exc:
            log.warning("step %d: %s", t, exc)
            steps.append(TraceStep(t, theta.copy(), None, None, math.nan, f"degenerate: {exc}"))
            continue
        record = TraceStep(t, theta.copy(), raw, q, mmd_loss(q, p, kernel))
        steps.append(record)
        if t == config.steps:
            break
        try:
            grad = mmd_gradient(theta, spec, device, p, kernel, aem, shots, config.seed, t, q)
        except DegenerateMitigationError as exc:
            log.warning("step %d: update skipped, %s", t, exc)
            record.event = f"update skipped: {exc}"
            continue
        theta, adam = adam_step(adam, grad, theta)
    return TrainTrace(steps, config.fingerprint(), aem_ref)


def final_kl(trace: TrainTrace, target) -> float:
    last = trace.steps[-1]
    return math.inf if last.mitigated is None else kl_divergence(target, last.mitigated)
