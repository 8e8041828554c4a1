"""Experiment configuration, run directories and the post-processing workflows.

A run directory holds::

    config.json      normalized copy of the experiment configuration
    aem/<kind>.json  assignment error matrices used by the run
    trace.jsonl      one training record per line
    metrics.csv      mean KL per (step, post-processing AEM, sub-sample size)
    report.csv       minima over training steps

All floats in CSV output use 12 significant digits; divergent values are ``inf``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .ansatz import ENTANGLER_LAYOUTS, AnsatzSpec
from .distributions import CountVector, composite, mean_kl
from .errors import DegenerateMitigationError, DomainError
from .mitigation import KERNEL_CLASSES, AssignmentErrorMatrix, build_aem, frobenius_distance, mitigate
from .simulator import PRESET_NAMES, DeviceProfile, NoiseModel, device_preset
from .training import TargetSpec, TrainConfig, TrainTrace, output_distribution, stream

BATCH_PRESETS = {"5x2048": (5, 2048), "2x8192": (2, 8192)}
EVAL_TAG = 2**31 + 1
SUBSAMPLE_TAG = 2**31 + 2
CALIBRATION_TAG = 2**31 + 3
DRIFT_TAG = 2**31 + 4

METRICS_HEADER = ("step", "post_aem", "shots", "mean_kl", "stddev", "divergences")


def fmt(value: float) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.12g}"


# -- configuration -------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TargetModel(_Strict):
    kind: Literal["bas22", "poisson1", "poisson2", "custom"] = "bas22"
    lam: float = Field(5.0, gt=0, alias="lambda")
    custom_probs: list[float] | None = None

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class AnsatzModel(_Strict):
    n_qubits: int = Field(4, ge=1, le=5)
    layout: str = "dc3_star"

    @field_validator("layout")
    @classmethod
    def _known_layout(cls, v):
        if v not in ENTANGLER_LAYOUTS:
            raise ValueError(f"unknown layout {v!r}; known: {', '.join(ENTANGLER_LAYOUTS)}")
        return v


class NoiseModelSchema(_Strict):
    readout: list[tuple[float, float]]
    depol_1q: float = Field(0.001, ge=0, le=1)
    depol_2q: float = Field(0.01, ge=0, le=1)


class DeviceModel(_Strict):
    preset: str = "P_B"
    noise: NoiseModelSchema | None = None
    coupling: list[tuple[int, int]] | None = None

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, v):
        if v not in PRESET_NAMES:
            raise ValueError(f"unknown device preset {v!r}; known: {', '.join(PRESET_NAMES)}")
        return v


class BatchPlan(_Strict):
    batches: int = Field(5, ge=1)
    shots: int = Field(2048, ge=1)

    @property
    def effective_shots(self) -> int:
        return self.batches * self.shots


class EvaluationModel(_Strict):
    batch_plan: BatchPlan = BatchPlan()
    post_aems: list[Literal["identity", "hw", "circ"]] = ["identity", "hw", "circ"]
    shot_sizes: list[int] = [4096, 2048, 512]
    repeats: int = Field(10, ge=1)

    @field_validator("batch_plan", mode="before")
    @classmethod
    def _named_plan(cls, v):
        if isinstance(v, str):
            if v not in BATCH_PRESETS:
                raise ValueError(f"unknown batch plan {v!r}; known: {', '.join(BATCH_PRESETS)}")
            batches, shots = BATCH_PRESETS[v]
            return {"batches": batches, "shots": shots}
        return v

    @field_validator("shot_sizes")
    @classmethod
    def _positive(cls, v):
        if not v or any(s < 1 for s in v):
            raise ValueError("shot sizes must be a non-empty list of positive integers")
        return v


class ExperimentConfig(_Strict):
    target: TargetModel = TargetModel()
    ansatz: AnsatzModel = AnsatzModel()
    device: DeviceModel = DeviceModel()
    aem_kind: Literal["identity", "hw", "circ"] = "identity"
    steps: int = Field(25, ge=0)
    shots_per_eval: int = Field(2048, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    init: Literal["random", "from_file"] = "random"
    init_file: str | None = None
    alpha: float = Field(0.25, gt=0)
    sigma: float = Field(0.1, gt=0)
    exact: bool = False
    calibration_shots: int | None = Field(4096, ge=1)
    evaluation: EvaluationModel = EvaluationModel()
    out: str | None = None

    @model_validator(mode="after")
    def _init_file_given(self):
        if self.init == "from_file" and not self.init_file:
            raise ValueError("init 'from_file' requires init_file")
        return self

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.model_validate_json(Path(path).read_text())

    def dump(self) -> str:
        return self.model_dump_json(indent=1, by_alias=True) + "\n"

    def with_overrides(self, **changes) -> "ExperimentConfig":
        doc = self.model_dump(by_alias=True)
        for key, value in changes.items():
            if value is None:
                continue
            if key == "preset":
                doc["device"]["preset"] = value
            else:
                doc[key] = value
        return type(self).model_validate(doc)

    # -- conversions to runtime objects

    def ansatz_spec(self) -> AnsatzSpec:
        return AnsatzSpec(self.ansatz.n_qubits, self.ansatz.layout)

    def device_profile(self) -> DeviceProfile:
        base = device_preset(self.device.preset)
        n = self.ansatz.n_qubits
        coupling = base.coupling if self.device.coupling is None else self.device.coupling
        noise = base.noise
        if self.device.noise is not None:
            nm = self.device.noise
            noise = NoiseModel(tuple(nm.readout), nm.depol_1q, nm.depol_2q)
        return DeviceProfile(base.name, n, coupling, noise)

    def target_spec(self) -> TargetSpec:
        custom = None if self.target.custom_probs is None else tuple(self.target.custom_probs)
        return TargetSpec(self.target.kind, self.target.lam, custom)

    def train_config(self, init_theta=None) -> TrainConfig:
        return TrainConfig(
            target=self.target_spec(), spec=self.ansatz_spec(), device=self.device_profile(),
            aem_kind=self.aem_kind, steps=self.steps, shots_per_eval=self.shots_per_eval,
            seed=self.seed, init=self.init,
            init_theta=None if init_theta is None else tuple(np.asarray(init_theta, dtype=float)),
            alpha=self.alpha, sigma=self.sigma, exact=self.exact,
        )


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema(by_alias=True)


def load_initial_theta(path) -> np.ndarray:
    """Parameters from a JSON array or the last record of a trace file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".jsonl":
        return TrainTrace.load(path).steps[-1].theta
    return np.array(json.loads(text), dtype=float)


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    step: int
    post_aem: str
    shots: int
    mean_kl: float
    stddev: float
    divergences: int

    def cells(self) -> list[str]:
        return [str(self.step), self.post_aem, str(self.shots), fmt(self.mean_kl),
                fmt(self.stddev), str(self.divergences)]


def composite_counts(theta, spec: AnsatzSpec, device: DeviceProfile, batches: int, shots: int,
                     seed: int, step: int) -> CountVector:
    """Pool ``batches`` independent runs of ``shots`` each at ``theta``."""
    probs = output_distribution(theta, spec, device)
    runs = [CountVector(stream(seed, EVAL_TAG, step, b).multinomial(shots, probs).astype(float))
            for b in range(batches)]
    return composite(runs)


def sweep_composite(target, pooled: CountVector, post_aems: dict[str, AssignmentErrorMatrix],
                    shot_sizes: Sequence[int], repeats: int, seed: int, step: int) -> list[MetricRow]:
    rows = []
    for a_idx, (kind, aem) in enumerate(post_aems.items()):
        try:
            mitigated = mitigate(pooled, aem)
        except DegenerateMitigationError:
            rows += [MetricRow(step, kind, s, math.inf, 0.0, repeats) for s in shot_sizes]
            continue
        for shots in shot_sizes:
            rng = stream(seed, SUBSAMPLE_TAG, step, a_idx, shots)
            stats = mean_kl(target, mitigated, shots, repeats, rng)
            rows.append(MetricRow(step, kind, shots, stats.mean, stats.std, stats.divergences))
    return rows


def evaluate_trace(trace: TrainTrace, spec: AnsatzSpec, device: DeviceProfile, target,
                   batch_plan: BatchPlan | tuple[int, int], post_aems: dict[str, AssignmentErrorMatrix],
                   shot_sizes: Sequence[int] = (4096, 2048, 512), repeats: int = 10,
                   seed: int = 0) -> list[MetricRow]:
    """Replay every recorded parameter set through the batch plan and score it.

    For each step: pool the batch plan into a composite, mitigate it with each
    post-processing AEM, then average KL over ``repeats`` sub-samples per shot
    size. Neither the trace nor the AEMs are modified.
    """
    batches, shots = (batch_plan.batches, batch_plan.shots) if isinstance(batch_plan, BatchPlan) else batch_plan
    n_states = 2**spec.n_qubits
    for kind, aem in post_aems.items():
        if aem.n_states != n_states:
            raise DomainError(f"post-processing AEM {kind} has {aem.n_states} states, expected {n_states}")
    rows = []
    for record in trace.steps:
        pooled = composite_counts(record.theta, spec, device, batches, shots, seed, record.step)
        rows += sweep_composite(target, pooled, post_aems, shot_sizes, repeats, seed, record.step)
    return rows


def min_mean_kl(rows: Sequence[MetricRow], post_aem: str, shots: int) -> float:
    values = [r.mean_kl for r in rows if r.post_aem == post_aem and r.shots == shots]
    return min(values) if values else math.nan


def metrics_csv(rows: Sequence[MetricRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    writer.writerows(r.cells() for r in rows)
    return buf.getvalue()


def read_metrics(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [MetricRow(int(r["step"]), r["post_aem"], int(r["shots"]), float(r["mean_kl"]),
                          float(r["stddev"]), int(r["divergences"])) for r in reader]


# -- drift study ---------------------------------------------------------------


def jitter_device(device: DeviceProfile, rng: np.random.Generator, rel: float = 0.2,
                  name: str | None = None) -> DeviceProfile:
    """Scale every readout flip and depolarizing rate by an independent factor in ``1 +/- rel``."""
    def scale(p):
        return float(min(1.0, p * rng.uniform(1 - rel, 1 + rel)))

    noise = device.noise
    readout = tuple((scale(a), scale(b)) for a, b in noise.readout)
    jittered = NoiseModel(readout, scale(noise.depol_1q), scale(noise.depol_2q))
    return device.with_noise(jittered, name)


def drift_series(kind: str, spec: AnsatzSpec, device: DeviceProfile, n_dates: int, seed: int = 0,
                 shots: int | None = 4096, rel: float = 0.2) -> list[AssignmentErrorMatrix]:
    """AEMs calibrated on jittered copies of ``device``, one per simulated date."""
    series = []
    for d in range(n_dates):
        dated = jitter_device(device, stream(seed, DRIFT_TAG, d), rel, f"{device.name}@date{d}")
        series.append(build_aem(kind, spec, dated, shots, stream(seed, CALIBRATION_TAG, d),
                                timestamp=f"date{d}"))
    return series


@dataclass
class DriftStudy:
    norms: list[float]
    sweeps: list[list[MetricRow]]


def aem_drift_study(aem_series: Sequence[AssignmentErrorMatrix], trace: TrainTrace, spec: AnsatzSpec,
                    device: DeviceProfile, target, batch_plan=(5, 2048), shot_sizes=(2048,),
                    repeats: int = 10, seed: int = 0) -> DriftStudy:
    """Frobenius distance of each AEM and the KL sweep obtained when post-processing with it.

    Composite data are generated once and shared by every AEM in the series,
    so sweeps differ only through the AEM.
    """
    if not aem_series:
        raise DomainError("drift study needs at least one AEM")
    sizes = {a.n_states for a in aem_series}
    if len(sizes) != 1:
        raise DomainError(f"AEMs in the series disagree on size: {sorted(sizes)}")
    batches, shots = (batch_plan.batches, batch_plan.shots) if isinstance(batch_plan, BatchPlan) else batch_plan
    pooled = [(r.step, composite_counts(r.theta, spec, device, batches, shots, seed, r.step))
              for r in trace.steps]
    sweeps = []
    for aem in aem_series:
        rows = []
        for step, counts in pooled:
            rows += sweep_composite(target, counts, {aem.kernel_class: aem}, shot_sizes, repeats, seed, step)
        sweeps.append(rows)
    return DriftStudy([frobenius_distance(a) for a in aem_series], sweeps)


# -- run directories -------------------------------------------------------------


class RunDir:
    def __init__(self, path):
        self.path = Path(path)

    @property
    def config_path(self) -> Path:
        return self.path / "config.json"

    @property
    def trace_path(self) -> Path:
        return self.path / "trace.jsonl"

    @property
    def metrics_path(self) -> Path:
        return self.path / "metrics.csv"

    @property
    def report_path(self) -> Path:
        return self.path / "report.csv"

    def aem_path(self, kind: str) -> Path:
        return self.path / "aem" / f"{kind}.json"

    def write_config(self, config: ExperimentConfig) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        self.config_path.write_text(config.dump())

    def config(self) -> ExperimentConfig:
        return ExperimentConfig.load(self.config_path)

    def load_aem(self, kind: str) -> AssignmentErrorMatrix:
        path = self.aem_path(kind)
        if not path.exists():
            raise FileNotFoundError(f"missing AEM file {path}; run 'calibrate' first")
        return AssignmentErrorMatrix.load(path)


def calibrate(config: ExperimentConfig, kinds: Sequence[str] = KERNEL_CLASSES,
              timestamp: str | None = None) -> dict[str, AssignmentErrorMatrix]:
    spec, device = config.ansatz_spec(), config.device_profile()
    return {kind: build_aem(kind, spec, device, config.calibration_shots,
                            stream(config.seed, CALIBRATION_TAG, i), timestamp)
            for i, kind in enumerate(kinds)}


def report_rows(metrics: Sequence[MetricRow], trace: TrainTrace | None) -> list[list[str]]:
    """Minimum mean KL per (post AEM, shot size) and the minimum training loss."""
    rows = [["quantity", "post_aem", "shots", "value", "step"]]
    keys = sorted({(r.post_aem, r.shots) for r in metrics},
                  key=lambda k: (KERNEL_CLASSES.index(k[0]) if k[0] in KERNEL_CLASSES else 99, -k[1]))
    for post, shots in keys:
        group = [r for r in metrics if r.post_aem == post and r.shots == shots]
        best = min(group, key=lambda r: (r.mean_kl, r.step))
        rows.append(["min_mean_kl", post, str(shots), fmt(best.mean_kl), str(best.step)])
    if trace is not None and len(trace):
        losses = trace.losses
        finite = np.where(np.isfinite(losses), losses, np.inf)
        i = int(np.argmin(finite))
        rows.append(["min_mmd", "", "", fmt(float(finite[i])), str(trace.steps[i].step)])
    return rows


def grid_rows(runs: Sequence[tuple[str, Sequence[MetricRow]]], shots: int = 2048) -> list[list[str]]:
    """Rows = training AEM, columns = post-processing AEM, cells = min mean KL."""
    posts = [k for k in KERNEL_CLASSES if any(r.post_aem == k for _, m in runs for r in m)]
    rows = [["train_aem", *posts]]
    for train_kind, metrics in runs:
        rows.append([train_kind, *(fmt(min_mean_kl(metrics, p, shots)) for p in posts)])
    return rows


def write_csv(path, rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
