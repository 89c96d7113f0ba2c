"""Dataset generation, training jobs and paired policy evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SystemConfig, sample_seed, stream_rng
from .estimation import estimate_covariance
from .geometry import generate_realization
from .neural import (DenseNetwork, History, Normalizer, TrainConfig, build_centralized,
                     build_decentralized, forward, project_powers, train)
from .precoding import SCHEMES
from .solver import bisection_maxmin, full_power_equal_split, heuristic_allocation
from .stats import compute_se, compute_sinr, estimate_coefficients

log = logging.getLogger(__name__)

DATASET_MAGIC = "# cfpower-dataset v1"
POLICIES = ("maxmin-optimal", "centralized-dnn", "decentralized-dnn", "heuristic", "equal-split")
POWER_SLACK = 1e-9


class DatasetError(ValueError):
    pass


@dataclass
class DatasetRecord:
    sample_id: int
    seed: int
    s_star: float
    status: str
    beta_db: np.ndarray     # (K, L)
    gamma_star: np.ndarray  # (K, L), sqrt(W)
    iterations: int = 0
    max_residual: float = 0.0


@dataclass
class Dataset:
    scheme: str
    K: int
    L: int
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.scheme, self.K, self.L, [self.records[i] for i in indices])

    def beta_db(self) -> np.ndarray:
        return np.array([r.beta_db for r in self.records]).reshape(len(self), self.K, self.L)

    def gamma(self) -> np.ndarray:
        return np.array([r.gamma_star for r in self.records]).reshape(len(self), self.K, self.L)


# -- one sample -------------------------------------------------------------

def sample_coefficients(config: SystemConfig, seed: int, scheme: str):
    realization = generate_realization(config, seed)
    coeffs = estimate_coefficients(realization, scheme, config, stream_rng(seed, "coefficients"))
    return realization, coeffs


def audit(record: DatasetRecord, p_dl_max: float) -> bool:
    g = record.gamma_star
    if record.status != "converged" or not record.s_star > 0:
        return False
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        return False
    return bool(np.all((g**2).sum(axis=0) <= p_dl_max * (1 + POWER_SLACK)))


def label_sample(config: SystemConfig, sample_index: int, scheme: str,
                 tol_s: float = 1e-3) -> DatasetRecord:
    seed = sample_seed(config.master_seed, sample_index)
    realization, coeffs = sample_coefficients(config, seed, scheme)
    sol = bisection_maxmin(coeffs, config, tol_s=tol_s, served=realization.served)
    return DatasetRecord(sample_index, seed, sol.s_star, sol.status, realization.beta_db,
                         sol.gamma_star, sol.iterations, sol.max_residual)


def _label_job(args):
    return label_sample(*args)


# -- dataset files ------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_header(scheme: str, K: int, L: int) -> list[str]:
    return [
        f"{DATASET_MAGIC} scheme={scheme} K={K} L={L}",
        ",".join(["sample_id", "seed", "s_star", "status"]
                 + [f"beta_db_{i}" for i in range(K * L)]
                 + [f"gamma_star_{i}" for i in range(K * L)]
                 + ["iterations", "max_residual"]),
    ]


def format_record(r: DatasetRecord) -> str:
    fields_ = [str(r.sample_id), str(r.seed), _fmt(r.s_star), r.status]
    fields_ += [_fmt(v) for v in np.ravel(r.beta_db)]
    fields_ += [_fmt(v) for v in np.ravel(r.gamma_star)]
    fields_ += [str(r.iterations), _fmt(r.max_residual)]
    return ",".join(fields_)


def write_dataset(dataset: Dataset, path) -> None:
    lines = dataset_header(dataset.scheme, dataset.K, dataset.L)
    lines += [format_record(r) for r in dataset.records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if len(lines) < 2 or not lines[0].startswith(DATASET_MAGIC):
        raise DatasetError(f"{path}: not a dataset file")
    meta = dict(item.split("=", 1) for item in lines[0][len(DATASET_MAGIC):].split())
    scheme, K, L = meta["scheme"], int(meta["K"]), int(meta["L"])
    n = K * L
    records = []
    for lineno, line in enumerate(lines[2:], 3):
        parts = line.split(",")
        if len(parts) != 6 + 2 * n:
            raise DatasetError(f"{path}:{lineno}: expected {6 + 2 * n} fields, got {len(parts)}")
        vals = np.array([float(v) for v in parts[4:4 + 2 * n]])
        records.append(DatasetRecord(int(parts[0]), int(parts[1]), float(parts[2]), parts[3],
                                     vals[:n].reshape(K, L), vals[n:].reshape(K, L),
                                     int(parts[-2]), float(parts[-1])))
    return Dataset(scheme, K, L, records)


@dataclass
class GenerationSummary:
    requested: int
    written: int
    non_converged: int
    failed_audit: int


def generate_dataset(config: SystemConfig, n_samples: int, scheme: str, path=None,
                     workers: int = 1, start: int = 0, tol_s: float = 1e-3):
    """Label ``n_samples`` user drops with the max-min optimum.

    Sample ``i`` uses the seed derived from ``(master_seed, start + i)``, so
    the output does not depend on ``workers``.  Returns the dataset of
    converged, audited records and a summary of exclusions.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    jobs = [(config, start + i, scheme, tol_s) for i in range(n_samples)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            labelled = list(pool.map(_label_job, jobs, chunksize=16))
    else:
        labelled = [_label_job(j) for j in jobs]
    dataset = Dataset(scheme, config.K, config.L)
    non_converged = failed = 0
    for rec in labelled:
        if rec.status != "converged":
            non_converged += 1
            log.warning("sample %d: solver status %s, excluded", rec.sample_id, rec.status)
        elif not audit(rec, config.p_dl_max):
            failed += 1
            log.warning("sample %d failed the feasibility audit, excluded", rec.sample_id)
        else:
            dataset.records.append(rec)
    summary = GenerationSummary(n_samples, len(dataset), non_converged, failed)
    if (non_converged + failed) > 0.01 * n_samples:
        log.warning("%d of %d samples excluded", non_converged + failed, n_samples)
    if path is not None:
        write_dataset(dataset, path)
    return dataset, summary


def split_dataset(dataset: Dataset, test_count: int = 100, val_fraction: float = 0.1, seed: int = 0):
    """Hold out ``test_count`` samples, then split the rest into train/validation."""
    n = len(dataset)
    if not 0 <= val_fraction < 1:
        raise ValueError("val_fraction must lie in [0, 1)")
    if test_count < 0 or test_count + 1 > n:
        raise ValueError(f"cannot hold out {test_count} of {n} samples")
    order = np.random.default_rng(seed).permutation(n)
    test = order[:test_count]
    rest = order[test_count:]
    n_val = int(round(val_fraction * len(rest)))
    val = rest[:n_val]
    tr = rest[n_val:]
    return dataset.subset(sorted(tr)), dataset.subset(sorted(val)), dataset.subset(sorted(test))


# -- training -------------------------------------------------------------------

@dataclass
class TrainedModel:
    net: DenseNetwork
    normalizer: Normalizer
    history: History


def _xy(dataset: Dataset, normalizer: Normalizer, ap: int | None):
    beta = dataset.beta_db()
    gamma = dataset.gamma()
    if ap is None:
        flat_b, flat_g = beta.reshape(len(dataset), -1), gamma.reshape(len(dataset), -1)
    else:
        flat_b, flat_g = beta[:, :, ap], gamma[:, :, ap]
    return normalizer.inputs(flat_b), normalizer.targets(flat_g)


def _fit_normalizer(dataset: Dataset, p_dl_max: float, ap: int | None) -> Normalizer:
    beta = dataset.beta_db()
    flat = beta.reshape(len(dataset), -1) if ap is None else beta[:, :, ap]
    return Normalizer.fit(flat, p_dl_max)


def train_centralized(train_set: Dataset, val_set: Dataset | None, config: SystemConfig,
                      tcfg: TrainConfig | None = None) -> TrainedModel:
    """Fit the network-wide model: all beta in dB -> all gamma / sqrt(P_max)."""
    tcfg = tcfg or TrainConfig()
    if not len(train_set):
        raise ValueError("empty training set")
    norm = _fit_normalizer(train_set, config.p_dl_max, None)
    x, y = _xy(train_set, norm, None)
    xv, yv = _xy(val_set, norm, None) if val_set is not None and len(val_set) else (None, None)
    net = build_centralized(train_set.K, train_set.L, seed=tcfg.seed)
    net, hist = train(net, x, y, xv, yv, tcfg)
    return TrainedModel(net, norm, hist)


def train_decentralized(train_set: Dataset, val_set: Dataset | None, config: SystemConfig,
                        tcfg: TrainConfig | None = None) -> list[TrainedModel]:
    """One model per AP, each seeing only its own column of beta."""
    tcfg = tcfg or TrainConfig()
    if not len(train_set):
        raise ValueError("empty training set")
    models = []
    for l in range(train_set.L):
        norm = _fit_normalizer(train_set, config.p_dl_max, l)
        x, y = _xy(train_set, norm, l)
        xv, yv = _xy(val_set, norm, l) if val_set is not None and len(val_set) else (None, None)
        ap_cfg = TrainConfig(**{**tcfg.__dict__, "seed": tcfg.seed * 1000 + l})
        net = build_decentralized(train_set.K, seed=ap_cfg.seed)
        net, hist = train(net, x, y, xv, yv, ap_cfg)
        models.append(TrainedModel(net, norm, hist))
    return models


def predict_centralized(model: TrainedModel, beta_db: np.ndarray) -> np.ndarray:
    K, L = beta_db.shape
    if model.net.input_dim != K * L:
        raise ValueError(f"centralized model expects {model.net.input_dim} inputs, network has {K * L}")
    y = forward(model.net, model.normalizer.inputs(beta_db.reshape(-1)))
    return model.normalizer.outputs(y).reshape(K, L)


def predict_decentralized(models: list, beta_db: np.ndarray) -> np.ndarray:
    K, L = beta_db.shape
    if len(models) != L:
        raise ValueError(f"{len(models)} local models for {L} APs")
    out = np.empty((K, L))
    for l, m in enumerate(models):
        if m.net.input_dim != K:
            raise ValueError(f"local model {l} expects {m.net.input_dim} inputs, K={K}")
        out[:, l] = m.normalizer.outputs(forward(m.net, m.normalizer.inputs(beta_db[:, l])))
    return out


# -- evaluation -----------------------------------------------------------------

@dataclass
class EvaluationReport:
    se: dict                                   # policy -> (samples, K) SE in bit/s/Hz
    sinr: dict = field(default_factory=dict)   # policy -> (samples, K)

    def policies(self) -> list[str]:
        return [p for p in POLICIES if p in self.se] + sorted(p for p in self.se if p not in POLICIES)

    def summary(self) -> dict:
        out = {}
        for p in self.policies():
            v = np.ravel(self.se[p])
            out[p] = {"mean": float(np.mean(v)), "median": float(np.median(v)),
                      "p5": float(np.percentile(v, 5)), "count": int(v.size)}
        return out

    def cdf(self, policy: str):
        v = np.sort(np.ravel(self.se[policy]))
        return v, np.arange(1, v.size + 1) / v.size


def evaluate_policies(test_set: Dataset, config: SystemConfig, central: TrainedModel | None = None,
                      local: list | None = None) -> EvaluationReport:
    """SE per UE of every policy on the same per-sample coefficients."""
    if test_set.K != config.K or test_set.L != config.L:
        raise ValueError("test set dimensions do not match the configuration")
    se = {p: [] for p in POLICIES}
    sinr = {p: [] for p in POLICIES}
    for rec in test_set.records:
        realization, coeffs = sample_coefficients(config, rec.seed, test_set.scheme)
        if not np.allclose(realization.beta_db, rec.beta_db, rtol=0, atol=1e-9):
            raise DatasetError(f"sample {rec.sample_id}: stored beta does not match its seed")
        allocs = {
            "maxmin-optimal": rec.gamma_star,
            "heuristic": heuristic_allocation(realization, estimate_covariance(realization, config), config),
            "equal-split": full_power_equal_split(realization.served, config),
        }
        if central is not None:
            allocs["centralized-dnn"] = predict_centralized(central, rec.beta_db)
        if local is not None:
            allocs["decentralized-dnn"] = predict_decentralized(local, rec.beta_db)
        for policy, gamma in allocs.items():
            gamma = project_powers(gamma * realization.served, config.p_dl_max)
            if np.any((gamma**2).sum(axis=0) > config.p_dl_max * (1 + POWER_SLACK)):
                raise AssertionError(f"{policy} violates the per-AP budget")
            s = compute_sinr(gamma, coeffs)
            sinr[policy].append(s)
            se[policy].append(compute_se(s, config))
    report = EvaluationReport({}, {})
    for p in POLICIES:
        if se[p]:
            report.se[p] = np.array(se[p])
            report.sinr[p] = np.array(sinr[p])
    return report


def cdf_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["policy", "se_bits_per_hz", "cdf"])
    for p in report.policies():
        values, probs = report.cdf(p)
        for v, c in zip(values, probs):
            writer.writerow([p, _fmt(v), _fmt(c)])
    return buf.getvalue()


def emit_cdf(report: EvaluationReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(cdf_csv(report))


def read_cdf(path) -> EvaluationReport:
    se: dict = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            se.setdefault(row["policy"], []).append(float(row["se_bits_per_hz"]))
    return EvaluationReport({p: np.array(v) for p, v in se.items()})


def format_summary(report: EvaluationReport) -> str:
    lines = [f"{'policy':<20}{'mean':>10}{'median':>10}{'p5':>10}{'n':>7}"]
    for p, s in report.summary().items():
        lines.append(f"{p:<20}{s['mean']:>10.4f}{s['median']:>10.4f}{s['p5']:>10.4f}{s['count']:>7d}")
    return "\n".join(lines)


def min_se_of_optimum(record: DatasetRecord, config: SystemConfig) -> float:
    return config.prelog * math.log2(1.0 + record.s_star)
