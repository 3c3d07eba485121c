"""MAE evaluation and the experiment harness.

run_experiment drives the accuracy experiments: split the full matrix at
a density, obfuscate where the approach calls for it, train/predict,
recover, and score with MAE, repeated over seeded rounds. Within a round
every approach sees the identical train/test split (paired comparison),
and the privacy approaches share one obfuscated matrix per
(alpha, distribution), so arms differ only where they should.

All randomness is derived from base_seed through stated hash functions
(split_seed, obfuscation_seed, approach_seed), which makes any sweep
reproducible record-for-record.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselines, factorization, neighborhood, obfuscation
from .dataset import QosMatrix, SplitConfig, split_by_density
from .factorization import TrainConfig
from .neighborhood import NeighborConfig
from .obfuscation import ObfuscationConfig

APPROACHES = ("UMEAN", "IMEAN", "UIPCC", "PMF", "P-UIPCC", "P-PMF")
PRIVACY_APPROACHES = ("P-UIPCC", "P-PMF")
QOS_KINDS = ("response_time", "throughput")

CSV_HEADER = "approach,qos,density,alpha,distribution,round,mae,elapsed_ms"

# Out-of-the-box hyperparameters per (approach, qos kind).
DEFAULT_PARAMS = {
    ("UIPCC", "response_time"): {"k": 10, "lam": 0.1},
    ("UIPCC", "throughput"): {"k": 10, "lam": 0.9},
    ("P-UIPCC", "response_time"): {"k": 10, "lam": 0.9},
    ("P-UIPCC", "throughput"): {"k": 10, "lam": 0.9},
    ("PMF", "response_time"): {"d": 10, "gamma": 40.0},
    ("PMF", "throughput"): {"d": 10, "gamma": 800.0},
    ("P-PMF", "response_time"): {"d": 10, "gamma": 12.0},
    ("P-PMF", "throughput"): {"d": 10, "gamma": 12.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One evaluation sweep: which approaches, under which knobs."""

    qos_kind: str = "response_time"
    approaches: tuple = APPROACHES
    densities: tuple = (0.1,)
    alphas: tuple = (0.5,)
    distributions: tuple = ("uniform",)
    rounds: int = 20
    base_seed: int = 1
    params: dict = field(default_factory=dict)  # per-approach overrides

    def __post_init__(self):
        if self.qos_kind not in QOS_KINDS:
            raise ValueError(f"qos_kind must be one of {QOS_KINDS}")
        for a in self.approaches:
            if a not in APPROACHES:
                raise ValueError(f"unknown approach {a!r}")
        if not self.approaches:
            raise ValueError("at least one approach required")
        for d in self.densities:
            if not 0.0 < d < 1.0:
                raise ValueError(f"density must be in (0, 1), got {d}")
        for a in self.alphas:
            if a < 0:
                raise ValueError(f"alpha must be >= 0, got {a}")
        for dist in self.distributions:
            if dist not in obfuscation.DISTRIBUTIONS:
                raise ValueError(f"unknown distribution {dist!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")
        for a in self.params:
            if a not in APPROACHES:
                raise ValueError(f"params for unknown approach {a!r}")

    def approach_params(self, approach: str) -> dict:
        merged = dict(DEFAULT_PARAMS.get((approach, self.qos_kind), {}))
        merged.update(self.params.get(approach, {}))
        return merged


@dataclass(frozen=True)
class EvalRecord:
    """Outcome of one (approach, density, alpha, distribution, round) cell."""

    approach: str
    density: float
    alpha: float | None
    distribution: str | None
    round: int
    mae: float | None
    elapsed_ms: float
    error: str | None = None


@dataclass
class EvalReport:
    """Per-round records plus aggregates over rounds."""

    config: ExperimentConfig
    records: list

    def aggregates(self) -> dict:
        """Mean MAE (and mean elapsed) per (approach, density, alpha, distribution)."""
        groups: dict[tuple, list[EvalRecord]] = {}
        for rec in self.records:
            key = (rec.approach, rec.density, rec.alpha, rec.distribution)
            groups.setdefault(key, []).append(rec)
        out = {}
        for key, recs in groups.items():
            maes = [r.mae for r in recs if r.mae is not None]
            out[key] = {
                "mae": float(np.mean(maes)) if maes else None,
                "elapsed_ms": float(np.mean([r.elapsed_ms for r in recs])),
                "rounds": len(maes),
            }
        return out

    def aggregate_mae(self, approach, density, alpha=None, distribution=None):
        agg = self.aggregates().get((approach, density, alpha, distribution))
        return None if agg is None else agg["mae"]


def _hash_seed(*parts) -> int:
    """Stable 63-bit seed from a tagged tuple of values."""
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def split_seed(base_seed: int, density: float, rnd: int) -> int:
    """Split seed for one round; shared by every approach (paired splits)."""
    return _hash_seed("split", base_seed, density, rnd)


def obfuscation_seed(base_seed: int, alpha: float, distribution: str, rnd: int) -> int:
    """Noise seed for one round; shared by P-UIPCC and P-PMF."""
    return _hash_seed("obfuscate", base_seed, alpha, distribution, rnd)


def approach_seed(base_seed: int, approach: str, density: float, rnd: int) -> int:
    """Model-init seed (matrix factorization) for one approach cell."""
    return _hash_seed("model", base_seed, approach, density, rnd)


def mae(predictions: np.ndarray, test: QosMatrix) -> float:
    """Mean absolute error of predictions over the test cells.

    predictions is a full (n_users, n_services) array; a NaN at any test
    cell means a prediction is missing, which is an error.
    """
    tmask = test.mask
    n = int(tmask.sum())
    if n == 0:
        raise ValueError("empty test set")
    pred = np.asarray(predictions, dtype=np.float64)[tmask]
    if np.any(np.isnan(pred)):
        raise ValueError("missing prediction for a test cell")
    truth = test.values[tmask]
    return float(np.abs(pred - truth).sum() / n)


def rank_services(prediction_row, count=None, higher_is_better=True) -> np.ndarray:
    """Service indices ordered by predicted QoS (convenience sort only)."""
    row = np.asarray(prediction_row, dtype=np.float64)
    order = np.argsort(-row if higher_is_better else row, kind="stable")
    return order if count is None else order[:count]


def _predict_privacy(approach, cfg, train, obf, secrets, density, rnd):
    """Normalized-space predict + recovery for one privacy approach."""
    params = cfg.approach_params(approach)
    if approach == "P-UIPCC":
        ncfg = NeighborConfig(k=params.get("k", 10), lam=params.get("lam", 0.5))
        normalized = neighborhood.predict_all_puipcc(obf, ncfg)
        normalized = np.where(np.isnan(normalized), 0.0, normalized)
    else:  # P-PMF
        tcfg = _train_config(params, approach_seed(cfg.base_seed, approach, density, rnd))
        model = factorization.train_ppmf(obf, tcfg)
        normalized = factorization.predict_matrix_ppmf(model)
    return obfuscation.recover_matrix(normalized, secrets)


def _train_config(params, seed) -> TrainConfig:
    return TrainConfig(
        d=params.get("d", 10),
        gamma=params.get("gamma", 12.0),
        learning_rate=params.get("learning_rate", 0.01),
        max_iters=params.get("max_iters", 500),
        rel_tol=params.get("rel_tol", 1e-6),
        seed=seed,
    )


def _predict_plain(approach, cfg, train, density, rnd):
    """Raw-space predictions for a non-privacy approach."""
    params = cfg.approach_params(approach)
    if approach == "UMEAN":
        return baselines.predict_matrix_umean(train)
    if approach == "IMEAN":
        return baselines.predict_matrix_imean(train)
    if approach == "UIPCC":
        ncfg = NeighborConfig(k=params.get("k", 10), lam=params.get("lam", 0.5))
        pred = neighborhood.predict_all_uipcc(train, ncfg)
        # Observed cells are NaN by contract; MAE never reads them.
        return pred
    if approach == "PMF":
        tcfg = _train_config(params, approach_seed(cfg.base_seed, approach, density, rnd))
        model = factorization.train_pmf(train, tcfg)
        return factorization.predict_matrix_pmf(model)
    raise ValueError(f"unknown approach {approach!r}")


def _run_cell(cfg: ExperimentConfig, data: QosMatrix, density: float, rnd: int) -> list:
    """All approach records for one (density, round) cell."""
    records = []
    train, test = split_by_density(
        data, SplitConfig(density=density, seed=split_seed(cfg.base_seed, density, rnd))
    )
    plain = [a for a in cfg.approaches if a not in PRIVACY_APPROACHES]
    privacy = [a for a in cfg.approaches if a in PRIVACY_APPROACHES]

    for approach in plain:
        start = time.perf_counter()
        try:
            pred = _predict_plain(approach, cfg, train, density, rnd)
            score = mae(pred, test)
            err = None
        except Exception as exc:  # a failed cell must not kill the sweep
            score, err = None, f"{type(exc).__name__}: {exc}"
        elapsed = (time.perf_counter() - start) * 1000.0
        records.append(
            EvalRecord(approach, density, None, None, rnd, score, elapsed, err)
        )

    for distribution in cfg.distributions if privacy else ():
        for alpha in cfg.alphas:
            oseed = obfuscation_seed(cfg.base_seed, alpha, distribution, rnd)
            ocfg = ObfuscationConfig(alpha=alpha, distribution=distribution, seed=oseed)
            obf, secrets = obfuscation.obfuscate_matrix(train, ocfg)
            for approach in privacy:
                start = time.perf_counter()
                try:
                    pred = _predict_privacy(
                        approach, cfg, train, obf, secrets, density, rnd
                    )
                    score = mae(pred, test)
                    err = None
                except Exception as exc:
                    score, err = None, f"{type(exc).__name__}: {exc}"
                elapsed = (time.perf_counter() - start) * 1000.0
                records.append(
                    EvalRecord(approach, density, alpha, distribution, rnd, score, elapsed, err)
                )
    return records


def _cell_worker(args):
    cfg, data, density, rnd = args
    return _run_cell(cfg, data, density, rnd)


def run_experiment(cfg: ExperimentConfig, data: QosMatrix, jobs: int = 1) -> EvalReport:
    """Run the full sweep; deterministic given cfg.base_seed.

    jobs > 1 distributes (density, round) cells over worker processes;
    records are reassembled in canonical order either way.
    """
    cells = [(density, rnd) for density in cfg.densities for rnd in range(cfg.rounds)]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_worker, [(cfg, data, d, r) for d, r in cells]))
        records = [rec for cell in results for rec in cell]
    else:
        records = [rec for d, r in cells for rec in _run_cell(cfg, data, d, r)]

    def sort_key(rec: EvalRecord):
        return (
            cfg.densities.index(rec.density),
            rec.round,
            cfg.approaches.index(rec.approach),
            -1 if rec.distribution is None else cfg.distributions.index(rec.distribution),
            -1 if rec.alpha is None else cfg.alphas.index(rec.alpha),
        )

    return EvalReport(config=cfg, records=sorted(records, key=sort_key))


def compare_noise_distributions(cfg: ExperimentConfig, data: QosMatrix, jobs: int = 1) -> EvalReport:
    """Paired uniform-vs-gaussian comparison for the privacy approaches.

    Splits are shared across the two arms (split seeds ignore the
    distribution), so each round is a like-for-like comparison.
    """
    if len(set(cfg.distributions)) < 2:
        raise ValueError("need at least two noise distributions to compare")
    bad = [a for a in cfg.approaches if a not in PRIVACY_APPROACHES]
    if bad:
        raise ValueError(f"distribution comparison applies to privacy approaches only, got {bad}")
    return run_experiment(cfg, data, jobs=jobs)


def _fmt(x) -> str:
    return "" if x is None else str(x)


def export_csv(report: EvalReport, fh, include_timing: bool = False) -> None:
    """Write records then per-cell aggregates (round column = "mean").

    Timing columns are left empty unless include_timing is set, so that a
    re-run with the same seed produces a byte-identical file.
    """
    qos = report.config.qos_kind
    fh.write(CSV_HEADER + "\n")
    for rec in report.records:
        elapsed = repr(round(rec.elapsed_ms, 3)) if include_timing else ""
        fh.write(
            f"{rec.approach},{qos},{_fmt(rec.density)},{_fmt(rec.alpha)},"
            f"{_fmt(rec.distribution)},{rec.round},{_fmt(rec.mae)},{elapsed}\n"
        )
    agg = report.aggregates()
    for key in sorted(agg, key=lambda k: [str(part) for part in k]):
        approach, density, alpha, distribution = key
        entry = agg[key]
        elapsed = repr(round(entry["elapsed_ms"], 3)) if include_timing else ""
        fh.write(
            f"{approach},{qos},{_fmt(density)},{_fmt(alpha)},"
            f"{_fmt(distribution)},mean,{_fmt(entry['mae'])},{elapsed}\n"
        )
