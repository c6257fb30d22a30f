"""Training, evaluation, hyperparameter sweeps and whole-network gradient checks."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import DatasetManifest, load_split, read_manifest
from .layers import softmax
from .network import Network, NetworkSpec, architecture_a, architecture_b
from .optim import SgdConfig, cross_entropy

log = logging.getLogger(__name__)

SUMMARY_HEADER = ["filter", "stride", "lr", "arch", "error_pct", "diverged", "seed"]


@dataclass(frozen=True)
class ExperimentConfig:
    filter_size: int = 3
    stride: int = 1
    learning_rate: float = 0.005
    architecture: str = "B"
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    k1: int = 16
    k2: int = 32
    fc_hidden: int = 128
    padding: int = 0
    pool_window: int = 2
    pool_stride: int = 2

    def __post_init__(self):
        if self.filter_size not in (3, 5):
            raise ValueError(f"filter_size must be 3 or 5, got {self.filter_size}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.architecture not in ("A", "B"):
            raise ValueError(f"architecture must be 'A' or 'B', got {self.architecture!r}")
        # validates learning rate, batch size and epochs
        self.sgd

    @property
    def sgd(self) -> SgdConfig:
        return SgdConfig(self.learning_rate, self.batch_size, self.epochs, self.seed)

    def network_spec(self, num_classes: int = 27, input_hw=(50, 50)) -> NetworkSpec:
        if self.architecture == "A":
            return architecture_a(self.filter_size, self.stride, self.k1, self.k2, num_classes,
                                  input_hw, self.padding)
        return architecture_b(self.filter_size, self.stride, self.k1, self.k2, self.fc_hidden,
                              num_classes, input_hw, self.padding, (self.pool_window, self.pool_stride))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def default_grid(architecture: str = "B", seeds: Sequence[int] = (0,), **overrides) -> list[ExperimentConfig]:
    """The eight filter x stride x learning-rate cells, in reporting order."""
    grid = []
    for f in (3, 5):
        for s in (1, 2):
            for lr in (0.005, 0.5):
                for seed in seeds:
                    grid.append(ExperimentConfig(f, s, lr, architecture, seed=seed, **overrides))
    return grid


@dataclass
class MetricsReport:
    config: dict
    num_classes: int
    epoch_loss: list[float] = field(default_factory=list)
    epoch_train_error: list[float] = field(default_factory=list)
    epoch_test_error: list[float] = field(default_factory=list)  # entry 0 is the untrained network
    best_epoch: int = 0
    error_rate: float = float("nan")  # percent misclassified on the evaluated split
    confusion: list[list[int]] = field(default_factory=list)  # rows: truth, cols: prediction
    diverged: bool = False
    status: str = "ok"
    message: str = ""
    wall_clock_s: float = 0.0
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def comparable(self) -> dict:
        """All fields except wall-clock time."""
        d = asdict(self)
        d.pop("wall_clock_s")
        return d


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def error_rate(confusion) -> float:
    cm = np.asarray(confusion)
    total = cm.sum()
    if total == 0:
        return float("nan")
    return float(100.0 * (1.0 - np.trace(cm) / total))


def _predict(net: Network, x: np.ndarray, batch: int = 256) -> np.ndarray:
    return np.concatenate([net.predict(x[i : i + batch]) for i in range(0, len(x), batch)]) \
        if len(x) else np.zeros(0, dtype=np.int64)


def _normalise(net: Network, x: np.ndarray) -> np.ndarray:
    return x - net.meta.get("input_mean", 0.0)


def fit(config: ExperimentConfig, x_train, y_train, x_test, y_test,
        num_classes: int = 27) -> tuple[Network, MetricsReport]:
    """Train a fresh network and keep the parameters with the lowest test error.

    Inputs are raw [0, 1] images; the training-set mean pixel is subtracted from
    both splits and stored in the network's metadata.  A non-finite batch loss
    stops the run with ``diverged=True``; the best checkpoint seen so far is kept.
    """
    if len(y_train) == 0 or len(y_test) == 0:
        raise ValueError("train and test splits must be non-empty")
    start = time.perf_counter()
    sgd = config.sgd
    spec = config.network_spec(num_classes, x_train.shape[-2:])
    spec.shapes()
    init_seq, shuffle_seq = np.random.SeedSequence(sgd.seed).spawn(2)
    net = Network.init(spec, seed=init_seq)
    mean = float(np.mean(x_train))
    net.meta = {"input_mean": mean, "config": config.to_dict()}
    xtr = x_train - mean
    xte = x_test - mean
    rng = np.random.default_rng(shuffle_seq)

    report = MetricsReport(config.to_dict(), num_classes, seed=sgd.seed)
    best = net.copy()
    best_err = error_rate(confusion_matrix(y_test, _predict(net, xte), num_classes))
    report.epoch_test_error.append(best_err)

    n = len(y_train)
    params = [p for _, p in net.parameters()]
    for epoch in range(1, sgd.epochs + 1):
        order = rng.permutation(n)
        loss_sum, wrong = 0.0, 0
        for lo in range(0, n, sgd.batch_size):
            idx = order[lo : lo + sgd.batch_size]
            logits, caches = net.forward(xtr[idx], keep=True)
            probs = softmax(logits)
            with np.errstate(all="ignore"):
                loss, grad = cross_entropy(probs, y_train[idx])
            if not math.isfinite(loss):
                report.diverged = True
                break
            loss_sum += loss * len(idx)
            wrong += int(np.sum(np.argmax(logits, axis=1) != y_train[idx]))
            for p, g in zip(params, net.backward(caches, grad)):
                p -= sgd.learning_rate * g
        if report.diverged:
            log.info("run %s diverged in epoch %d", config.digest(), epoch)
            break
        report.epoch_loss.append(loss_sum / n)
        report.epoch_train_error.append(100.0 * wrong / n)
        err = error_rate(confusion_matrix(y_test, _predict(net, xte), num_classes))
        report.epoch_test_error.append(err)
        if err < best_err:
            best, best_err, report.best_epoch = net.copy(), err, epoch

    cm = confusion_matrix(y_test, _predict(best, xte), num_classes)
    report.confusion = cm.tolist()
    report.error_rate = error_rate(cm)
    report.status = "diverged" if report.diverged else "ok"
    best.meta["best_epoch"] = report.best_epoch
    report.wall_clock_s = time.perf_counter() - start
    return best, report


def train(config: ExperimentConfig, manifest: DatasetManifest) -> tuple[Network, MetricsReport]:
    x_train, y_train = load_split(manifest, "train")
    x_test, y_test = load_split(manifest, "test")
    return fit(config, x_train, y_train, x_test, y_test, manifest.num_classes)


def evaluate_arrays(net: Network, x, y, num_classes: int | None = None) -> MetricsReport:
    start = time.perf_counter()
    num_classes = num_classes or net.spec.num_classes
    if num_classes != net.spec.num_classes:
        raise ValueError(f"checkpoint predicts {net.spec.num_classes} classes, data has {num_classes}")
    cm = confusion_matrix(y, _predict(net, _normalise(net, np.asarray(x, dtype=np.float64))), num_classes)
    report = MetricsReport(dict(net.meta.get("config", {})), num_classes, confusion=cm.tolist(),
                           error_rate=error_rate(cm), best_epoch=int(net.meta.get("best_epoch", 0)),
                           seed=int(net.meta.get("config", {}).get("seed", 0)))
    report.wall_clock_s = time.perf_counter() - start
    return report


def evaluate(net: Network, manifest: DatasetManifest, split: str = "test") -> MetricsReport:
    """Confusion matrix and error rate of ``net`` on one split of ``manifest``."""
    if manifest.num_classes != net.spec.num_classes:
        raise ValueError(
            f"checkpoint predicts {net.spec.num_classes} classes, manifest has {manifest.num_classes}"
        )
    x, y = load_split(manifest, split)
    if len(y) == 0:
        raise ValueError(f"split {split!r} is empty")
    return evaluate_arrays(net, x, y, manifest.num_classes)


# ---------------------------------------------------------------------------
# sweeps and reports
# ---------------------------------------------------------------------------

_DATA_CACHE: dict = {}


def _load_cached(manifest_path: str):
    if manifest_path not in _DATA_CACHE:
        m = read_manifest(manifest_path)
        _DATA_CACHE.clear()
        _DATA_CACHE[manifest_path] = (m.num_classes, *load_split(m, "train"), *load_split(m, "test"))
    return _DATA_CACHE[manifest_path]


def run_one(config: ExperimentConfig, manifest_path, out_dir) -> MetricsReport:
    """Train one config and persist ``<digest>.json`` and ``<digest>.ckpt`` under ``out_dir``.

    Exceptions are captured in the report (``status='failed'``) rather than raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = config.digest()
    try:
        num_classes, xtr, ytr, xte, yte = _load_cached(str(manifest_path))
        net, report = fit(config, xtr, ytr, xte, yte, num_classes)
        net.save(out / f"{tag}.ckpt")
    except Exception as exc:  # a failed cell must not abort the sweep
        log.exception("run %s failed", tag)
        report = MetricsReport(config.to_dict(), 0, status="failed", message=f"{type(exc).__name__}: {exc}",
                               seed=config.seed)
    (out / f"{tag}.json").write_text(report.to_json())
    return report


def sweep(grid: Iterable[ExperimentConfig], manifest_path, out_dir, jobs: int = 1) -> list[MetricsReport]:
    """Run every config, writing per-run files plus ``summary.csv``; returns reports in grid order."""
    grid = list(grid)
    if not grid:
        raise ValueError("sweep grid is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if jobs <= 1:
        reports = [run_one(c, manifest_path, out) for c in grid]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_one, grid, [manifest_path] * len(grid), [out] * len(grid)))
    (out / "summary.csv").write_text(summary_csv(reports))
    return reports


def _row_key(r: MetricsReport):
    c = r.config
    return (c["filter_size"], c["stride"], c["learning_rate"], c["architecture"], c["seed"])


def summary_rows(reports: Iterable[MetricsReport]) -> list[dict]:
    rows = []
    for r in sorted(reports, key=_row_key):
        c = r.config
        rows.append({
            "filter": c["filter_size"],
            "stride": c["stride"],
            "lr": c["learning_rate"],
            "arch": c["architecture"],
            "error_pct": "" if r.status == "failed" else f"{r.error_rate:.2f}",
            "diverged": str(r.diverged).lower(),
            "seed": c["seed"],
        })
    return rows


def summary_csv(reports: Iterable[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(summary_rows(reports))
    return buf.getvalue()


def load_reports(runs_dir) -> list[MetricsReport]:
    runs = Path(runs_dir)
    if not runs.is_dir():
        raise FileNotFoundError(f"runs directory not found: {runs}")
    return [MetricsReport.from_json(p.read_text()) for p in sorted(runs.glob("*.json"))]


def report(runs_dir, fmt: str = "csv") -> str:
    """Rebuild the sweep summary from persisted run files only."""
    reports = load_reports(runs_dir)
    if fmt == "csv":
        return summary_csv(reports)
    if fmt == "json":
        return json.dumps(summary_rows(reports), indent=1) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def mean_error(reports: Iterable[MetricsReport], **match) -> float:
    vals = [r.error_rate for r in reports
            if r.status != "failed" and all(r.config[k] == v for k, v in match.items())]
    return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked: int
    skipped: int  # perturbations that flipped a ReLU or a pooling winner
    finite: bool

    def passed(self, tol: float = 1e-4) -> bool:
        return self.finite and all(v < tol for v in self.max_rel_error.values())


def reduced_spec(arch: str, f: int = 3, s: int = 1, k1: int = 4, k2: int = 4, fc_hidden: int = 16,
                 num_classes: int = 27, input_hw=(12, 12)) -> NetworkSpec:
    """Small variants of the two architectures for finite-difference checks."""
    if arch == "A":
        return architecture_a(f, s, k1, k2, num_classes, input_hw)
    if arch == "B":
        return architecture_b(f, s, k1, k2, fc_hidden, num_classes, input_hw)
    raise ValueError(f"unknown architecture {arch!r}")


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(spec: NetworkSpec, seed: int = 0, eps: float = 1e-5, batch: int = 2,
                   x: np.ndarray | None = None) -> GradCheckReport:
    """Compare every analytic parameter gradient with central differences of the mean loss.

    Perturbations that change the network's piecewise-linear region (a ReLU
    sign or a max-pool winner) are not differentiable there and are skipped.
    """
    rng = np.random.default_rng(seed)
    net = Network.init(spec, seed=seed)
    num_classes = spec.num_classes
    if x is None:
        x = rng.uniform(-0.5, 0.5, size=(batch, *spec.input_shape))
    y = rng.integers(0, num_classes, size=len(x))

    def loss_and_pattern():
        logits, caches = net.forward(x, keep=True)
        loss, _ = cross_entropy(softmax(logits), y)
        sig = []
        for ls, cache in zip(spec.layers, caches):
            if ls.kind == "relu":
                sig.append((cache > 0).tobytes())
            elif ls.kind == "maxpool":
                sig.append(cache.indices.tobytes())
        return loss, tuple(sig)

    logits, caches = net.forward(x, keep=True)
    _, g = cross_entropy(softmax(logits), y)
    analytic = net.backward(caches, g)
    _, base_pattern = loss_and_pattern()

    errors: dict[str, float] = {}
    checked = skipped = 0
    finite = all(np.all(np.isfinite(a)) for a in analytic)
    for (name, param), grad in zip(net.parameters(), analytic):
        layer = name.rsplit(".", 1)[0]
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        worst = errors.get(layer, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, pat_p = loss_and_pattern()
            flat[i] = orig - eps
            lm, pat_m = loss_and_pattern()
            flat[i] = orig
            if pat_p != base_pattern or pat_m != base_pattern:
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * eps)
            finite &= math.isfinite(numeric)
            worst = max(worst, float(relative_error(gflat[i], numeric)))
            checked += 1
        errors[layer] = worst
    return GradCheckReport(errors, checked, skipped, bool(finite))
