"""Seeded synthetic cohorts with patient-level non-IID structure.

Targets follow ``y = A* x + b* + shift_p + noise`` where ``A*`` and ``b*`` are
shared by all patients and ``shift_p`` is a per-patient offset. Every patient
draws from its own seed stream, so a cohort for N clients is a prefix of the
cohort for any larger N under the same master seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .model import Dataset
from .seeding import make_rng

_TRUTH_STREAM = 0
_PATIENT_STREAM = 1
_SPLIT_STREAM = 2


@dataclass(frozen=True)
class SynthSpec:
    n_features: int = 32
    n_targets: int = 8
    patients_per_client: int = 3
    spots_per_patient: int = 120
    noise_stddev: float = 0.5
    heterogeneity: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        for name in ("n_features", "n_targets", "patients_per_client", "spots_per_patient"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.noise_stddev < 0 or self.heterogeneity < 0:
            raise ContractError("noise_stddev and heterogeneity must be >= 0")


@dataclass(frozen=True)
class Patient:
    id: int
    dataset: Dataset
    shift: np.ndarray


@dataclass(frozen=True)
class Cohort:
    spec: SynthSpec
    true_matrix: np.ndarray
    true_bias: np.ndarray
    clients: tuple[tuple[Patient, ...], ...]

    def client_dataset(self, k: int) -> Dataset:
        return Dataset.concat(p.dataset for p in self.clients[k])


def _ground_truth(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = make_rng((spec.master_seed, _TRUTH_STREAM))
    matrix = rng.normal(0.0, 1.0 / np.sqrt(spec.n_features), (spec.n_targets, spec.n_features))
    bias = rng.normal(0.0, 1.0, spec.n_targets)
    return matrix, bias


def _patient(spec: SynthSpec, pid: int, matrix, bias) -> Patient:
    rng = make_rng((spec.master_seed, _PATIENT_STREAM, pid))
    shift = rng.normal(0.0, 1.0, spec.n_targets) * spec.heterogeneity
    x = rng.standard_normal((spec.spots_per_patient, spec.n_features))
    noise = rng.standard_normal((spec.spots_per_patient, spec.n_targets)) * spec.noise_stddev
    y = x @ matrix.T + bias + shift + noise
    return Patient(pid, Dataset(x, y), shift)


def generate_cohort(spec: SynthSpec, n_clients: int) -> Cohort:
    if n_clients < 1:
        raise ContractError("n_clients must be positive")
    matrix, bias = _ground_truth(spec)
    per = spec.patients_per_client
    clients = tuple(
        tuple(_patient(spec, k * per + j, matrix, bias) for j in range(per))
        for k in range(n_clients)
    )
    return Cohort(spec, matrix, bias, clients)


def split_indices(spec: SynthSpec, pid: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    n = spec.spots_per_patient
    n_test = int(round(fraction * n))
    if not 0 < fraction < 1 or n_test == 0 or n_test == n:
        raise ContractError(
            f"holdout fraction {fraction} leaves an empty split for {n} spots"
        )
    perm = make_rng((spec.master_seed, _SPLIT_STREAM, pid)).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def holdout_split(cohort: Cohort, fraction: float) -> tuple[list[Dataset], Dataset]:
    """Per-patient train/test split; returns client train shards and a global test set."""
    train, test = [], []
    for patients in cohort.clients:
        parts = []
        for p in patients:
            tr, te = split_indices(cohort.spec, p.id, fraction)
            parts.append(p.dataset.subset(tr))
            test.append(p.dataset.subset(te))
        train.append(Dataset.concat(parts))
    return train, Dataset.concat(test)


def dump_dataset(data: Dataset, path, seed: int = 0) -> None:
    """Write a dataset as comma-separated rows (features then targets)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_features={data.n_features} n_targets={data.n_targets} seed={seed}\n")
        rows = np.hstack([data.inputs, data.targets])
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_dataset(path) -> tuple[Dataset, int]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ContractError("dataset file lacks a header line")
        fields = dict(item.split("=", 1) for item in header[1:].split())
        n_features = int(fields["n_features"])
        n_targets = int(fields["n_targets"])
        rows = [
            [float(v) for v in line.split(",")] for line in fh if line.strip()
        ]
    arr = np.array(rows, dtype=np.float64).reshape(-1, n_features + n_targets)
    return Dataset(arr[:, :n_features], arr[:, n_features:]), int(fields["seed"])
