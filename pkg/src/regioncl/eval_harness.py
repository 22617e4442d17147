"""Linear probes, ablation arms, and robustness slicing over embeddings.

Downstream quality is measured with Lasso probes: out-of-fold predictions
from k-fold cross-validation over regions, scored with MAE / MAPE / RMSE.
Slotted targets (crime, traffic) are totaled over time slots so every task
is a per-region regression. Ablation arms retrain the model under a variant
and probe identically; density robustness reuses the FULL model's crime
predictions and slices them by how many slots saw any incident.

MAPE uses the denominator max(|truth|, 1): crime targets contain zeros and
a bare percentage error is undefined there.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .poi_embedding import train_skipgram
from .region_data import SLOT_TASKS, Dataset, crime_density
from .trainer import TrainConfig, VARIANTS, region_embeddings, train

DENSITY_BINS = (("(0.00,0.25]", 0.0, 0.25),
                ("(0.25,0.50]", 0.25, 0.50),
                ("(0.50,1.00]", 0.50, 1.00))


@dataclass(frozen=True)
class EvalConfig:
    lam: float = 0.01
    folds: int = 5
    cv_seed: int = 1234

    def __post_init__(self):
        if self.lam < 0.0:
            raise ConfigError(f"lasso weight must be >= 0, got {self.lam}")
        if self.folds < 2:
            raise ConfigError(f"need at least 2 folds, got {self.folds}")


@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float
    rmse: float


@dataclass
class LassoModel:
    weights: np.ndarray
    intercept: float
    objective_history: list

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept


def _soft_threshold(rho: float, lam: float) -> float:
    return np.sign(rho) * max(abs(rho) - lam, 0.0)


def lasso_fit(X: np.ndarray, y: np.ndarray, lam: float,
              max_sweeps: int = 10_000, tol: float = 1e-8) -> LassoModel:
    """Coordinate descent on (1/2n)||y - Xw - b||^2 + lam * ||w||_1.

    The intercept is unpenalized and handled by centering. Sweeps run until
    the largest coordinate update falls below ``tol``.
    """
    if lam < 0.0:
        raise ConfigError(f"lasso weight must be >= 0, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ContractError(f"design {X.shape} incompatible with "
                            f"targets {y.shape}")
    n, d = X.shape
    if n < 2:
        raise ContractError(f"need at least 2 rows to fit, got {n}")

    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    col_sq = (Xc * Xc).mean(axis=0)

    w = np.zeros(d)
    resid = yc.copy()
    history = []
    for _ in range(max_sweeps):
        largest = 0.0
        for j in range(d):
            if col_sq[j] <= 0.0:
                continue  # constant column, absorbed by the intercept
            rho = (Xc[:, j] @ resid) / n + col_sq[j] * w[j]
            new = _soft_threshold(rho, lam) / col_sq[j]
            if new != w[j]:
                resid += Xc[:, j] * (w[j] - new)
                largest = max(largest, abs(new - w[j]))
                w[j] = new
        history.append(float((resid @ resid) / (2 * n)
                             + lam * np.abs(w).sum()))
        if largest < tol:
            break
    return LassoModel(weights=w, intercept=float(y_mean - x_mean @ w),
                      objective_history=history)


def metrics(pred: np.ndarray, truth: np.ndarray) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ContractError(f"prediction shape {pred.shape} vs "
                            f"truth {truth.shape}")
    if pred.size < 1:
        raise ContractError("cannot score an empty prediction vector")
    diff = np.abs(pred - truth)
    return Metrics(mae=float(diff.mean()),
                   mape=float((diff / np.maximum(np.abs(truth), 1.0)).mean()),
                   rmse=float(np.sqrt((diff * diff).mean())))


def cv_folds(n: int, k: int, seed: int) -> list:
    """Deterministic shuffled split into k near-equal folds."""
    k = min(k, n)
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(order[i::k]) for i in range(k)]


def probe_task(E: np.ndarray, y: np.ndarray, cfg: EvalConfig):
    """Out-of-fold Lasso predictions for every region; returns (pred, Metrics)."""
    E = np.asarray(E, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if E.shape[0] != y.shape[0]:
        raise ContractError(f"{E.shape[0]} embeddings vs {y.shape[0]} targets")
    pred = np.empty_like(y)
    for fold in cv_folds(y.size, cfg.folds, cfg.cv_seed):
        rest = np.setdiff1d(np.arange(y.size), fold)
        model = lasso_fit(E[rest], y[rest], cfg.lam)
        pred[fold] = model.predict(E[fold])
    return pred, metrics(pred, y)


def task_targets(dataset: Dataset) -> dict:
    """Per-region target vector per task; slotted tasks total their slots."""
    out = {}
    for task, values in dataset.targets.items():
        out[task] = values.sum(axis=1) if task in SLOT_TASKS \
            else values.copy()
    return out


def probe_all(E: np.ndarray, dataset: Dataset, cfg: EvalConfig) -> dict:
    return {task: probe_task(E, y, cfg)
            for task, y in sorted(task_targets(dataset).items())}


def run_ablation(dataset: Dataset, variant: str, train_cfg: TrainConfig,
                 eval_cfg: EvalConfig = EvalConfig(),
                 table: np.ndarray | None = None) -> dict:
    """Train under one variant and probe every task; returns task -> Metrics."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    model = train(dataset, replace(train_cfg, variant=variant), table=table)
    probes = probe_all(region_embeddings(model), dataset, eval_cfg)
    return {task: m for task, (_, m) in probes.items()}


def bin_regions(density: np.ndarray) -> dict:
    """Region indices per density bin; empty bins are absent, zeros excluded."""
    density = np.asarray(density, dtype=np.float64)
    out = {}
    for label, lo, hi in DENSITY_BINS:
        members = np.where((density > lo) & (density <= hi))[0]
        if members.size:
            out[label] = members
    return out


def robustness_by_density(dataset: Dataset,
                          train_cfg: TrainConfig,
                          eval_cfg: EvalConfig = EvalConfig(),
                          table: np.ndarray | None = None,
                          predictions: np.ndarray | None = None) -> dict:
    """Crime metrics per density bin; reuses ``predictions`` when given."""
    if "crime" not in dataset.targets:
        raise DataError("crime targets not present")
    y = task_targets(dataset)["crime"]
    if predictions is None:
        model = train(dataset, train_cfg, table=table)
        predictions, _ = probe_task(region_embeddings(model), y, eval_cfg)
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape != y.shape:
        raise ContractError(f"predictions shape {predictions.shape} vs "
                            f"targets {y.shape}")
    density = np.array([crime_density(dataset, i)
                        for i in range(dataset.n_regions)])
    return {label: metrics(predictions[members], y[members])
            for label, members in bin_regions(density).items()}


def average_bins(per_seed: list) -> dict:
    """Mean Metrics per bin across seeds, skipping seeds where a bin is absent."""
    out = {}
    for label, _, _ in DENSITY_BINS:
        found = [bins[label] for bins in per_seed if label in bins]
        if found:
            out[label] = Metrics(
                mae=float(np.mean([m.mae for m in found])),
                mape=float(np.mean([m.mape for m in found])),
                rmse=float(np.mean([m.rmse for m in found])))
    return out


def pair_similarity(E: np.ndarray, pairs) -> np.ndarray:
    """Cosine per (i, j) region pair; zero rows compare as orthogonal."""
    E = np.asarray(E, dtype=np.float64)
    out = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        if not (0 <= i < E.shape[0] and 0 <= j < E.shape[0]):
            raise ContractError(f"region pair ({i}, {j}) out of range "
                                f"for {E.shape[0]} regions")
        na, nb = np.linalg.norm(E[i]), np.linalg.norm(E[j])
        out[k] = float(E[i] @ E[j] / (na * nb)) if na > 0 and nb > 0 else 0.0
    return out


# ---------------------------------------------------------------------------
# multi-arm drivers and CSV emission
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    variant: str
    task: str
    seed: int
    mae: float
    mape: float
    rmse: float


def run_arms(dataset: Dataset, variants, seeds, train_cfg: TrainConfig,
             eval_cfg: EvalConfig = EvalConfig(), jobs: int = 1) -> list:
    """All (variant, seed) arms as sorted AblationRows.

    Arms are independent; ``jobs`` > 1 runs them on a thread pool. The
    skip-gram table depends only on the POI corpus, so it is shared.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    table = train_skipgram(dataset.poi, train_cfg.skipgram)
    arms = [(v, s) for v in variants for s in seeds]

    def one(arm):
        variant, seed = arm
        per_task = run_ablation(dataset, variant,
                                replace(train_cfg, seed=seed),
                                eval_cfg, table=table)
        return [AblationRow(variant=variant, task=task, seed=seed,
                            mae=m.mae, mape=m.mape, rmse=m.rmse)
                for task, m in sorted(per_task.items())]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(one, arms))
    else:
        chunks = [one(arm) for arm in arms]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r.variant, r.task, r.seed))
    return rows


def write_ablation_csv(rows, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("variant,task,seed,mae,mape,rmse\n")
        for r in rows:
            fh.write(f"{r.variant},{r.task},{r.seed},"
                     f"{r.mae!r},{r.mape!r},{r.rmse!r}\n")


def write_robustness_csv(per_bin: dict, path: str, task: str = "crime") -> None:
    with open(path, "w") as fh:
        fh.write("bin,task,mae,mape,rmse\n")
        for label, _, _ in DENSITY_BINS:
            if label in per_bin:
                m = per_bin[label]
                fh.write(f"{label},{task},{m.mae!r},{m.mape!r},{m.rmse!r}\n")
