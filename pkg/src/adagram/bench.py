"""Experiment harness: single runs, grid searches, and invariant checks.

Runs train a GLM on a synthetic or LIBSVM dataset with one optimizer and
emit a per-epoch metric trace (CSV).  Wall-clock accounting covers
gradient computation and optimizer steps only; metric evaluation is
identical across optimizers and excluded.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import itertools
import math
import os
import platform
import subprocess
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import glm, precond
from .data import (
    CorrelationKind,
    CorrelationSpec,
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_libsvm,
    split_standardize,
)
from .optim import (
    ADAGRAM_KINDS,
    NonFiniteGradientError,
    OptimizerConfig,
    ParamState,
    make_optimizer,
)

CSV_COLUMNS = ("epoch", "wall_clock_s", "train_loss", "test_loss", "test_acc")

# Documented default search space (log-spaced learning rates).
DEFAULT_GRID = {
    "batch_size": [16, 32, 64, 128],
    "learning_rate": [1e-3, 1e-2, 1e-1, 1.0],
    "eps": [1e-8, 1e-4, 1e-2, 1.0],
    "rank": [1, 2, 5],
    "mu": [0.9, 0.99, 1.0],
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    dataset: str
    optimizer: OptimizerConfig
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    output_path: str | None = None
    test_fraction: float = 0.2
    add_bias: bool = True
    weight_init: str = "zeros"
    n_samples: int = 2000
    n_features: int = 20
    rho: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(
                f"test_fraction must lie in (0, 1), got {self.test_fraction}"
            )
        if self.weight_init not in ("zeros", "gaussian"):
            raise ConfigError(f"unknown weight_init {self.weight_init!r}")


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable 12-hex digest of everything that affects the metrics."""
    opt = cfg.optimizer
    key = ";".join(
        f"{k}={v}"
        for k, v in [
            ("dataset", cfg.dataset),
            ("kind", opt.kind.value),
            ("lr", repr(opt.learning_rate)),
            ("eps", repr(opt.eps)),
            ("rank", opt.rank),
            ("mu", repr(opt.mu)),
            ("opt_seed", opt.seed),
            ("batch_size", cfg.batch_size),
            ("epochs", cfg.epochs),
            ("seed", cfg.seed),
            ("test_fraction", repr(cfg.test_fraction)),
            ("add_bias", cfg.add_bias),
            ("weight_init", cfg.weight_init),
            ("n_samples", cfg.n_samples),
            ("n_features", cfg.n_features),
            ("rho", repr(cfg.rho)),
        ]
    )
    return hashlib.sha256(key.encode()).hexdigest()[:12]


@dataclass
class EpochRow:
    epoch: int
    wall_clock_s: float
    train_loss: float
    test_loss: float
    test_acc: float


@dataclass
class RunRecord:
    rows: list[EpochRow]
    metadata: dict[str, str]
    diverged: bool = False

    @property
    def final_train_loss(self) -> float:
        return self.rows[-1].train_loss if self.rows else math.inf

    @property
    def final_test_loss(self) -> float:
        return self.rows[-1].test_loss if self.rows else math.inf

    @property
    def final_test_acc(self) -> float:
        return self.rows[-1].test_acc if self.rows else 0.0

    def time_to_best_s(self) -> float | None:
        """Cumulative wall clock at the epoch with the lowest test loss."""
        if not self.rows:
            return None
        best = min(self.rows, key=lambda r: r.test_loss)
        return best.wall_clock_s

    def to_csv(self) -> str:
        out = io.StringIO()
        for k, v in self.metadata.items():
            out.write(f"# {k}: {v}\n")
        out.write(f"# diverged: {str(self.diverged).lower()}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [r.epoch, repr(r.wall_clock_s), repr(r.train_loss),
                 repr(r.test_loss), repr(r.test_acc)]
            )
        return out.getvalue()

    def save(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunRecord":
        metadata: dict[str, str] = {}
        lines = []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                metadata[k.strip()] = v.strip()
            elif line.strip():
                lines.append(line)
        diverged = metadata.pop("diverged", "false") == "true"
        reader = csv.reader(lines)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ConfigError(f"unexpected CSV header {header}")
        rows = [
            EpochRow(int(e), float(w), float(tr), float(te), float(acc))
            for e, w, tr, te, acc in reader
        ]
        return cls(rows, metadata, diverged)

    @classmethod
    def load(cls, path: str) -> "RunRecord":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_csv(fh.read())


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def resolve_dataset(cfg: ExperimentConfig) -> Dataset:
    """Build the dataset named by the config: synthetic:<kind> or a file path."""
    name = cfg.dataset
    if name.startswith("synthetic:"):
        kind = name.split(":", 1)[1]
        try:
            corr = CorrelationSpec(CorrelationKind(kind), cfg.n_features, cfg.rho)
        except ValueError as exc:
            raise ConfigError(f"unknown synthetic dataset {name!r}") from exc
        return generate_synthetic(
            SyntheticSpec(corr, n_samples=cfg.n_samples, seed=cfg.seed)
        )
    if not os.path.exists(name):
        raise ConfigError(f"dataset file not found: {name}")
    return load_libsvm(name)


def _prepare(cfg: ExperimentConfig):
    ds = resolve_dataset(cfg)
    train, test = split_standardize(ds, cfg.test_fraction, cfg.seed)
    x_train, x_test = train.x, test.x
    if cfg.add_bias:
        x_train = glm.add_bias_column(x_train)
        x_test = glm.add_bias_column(x_test)
    if ds.n_classes < 2:
        raise ConfigError(f"dataset {ds.name!r} has a single class")
    m = 1 if ds.n_classes == 2 else ds.n_classes
    link = glm.Link.SIGMOID if m == 1 else glm.Link.SOFTMAX
    return x_train, train.y, x_test, test.y, m, link


def _init_params(cfg: ExperimentConfig, m: int, n: int) -> ParamState:
    if cfg.weight_init == "zeros":
        return ParamState.zeros(m, n)
    rng = np.random.default_rng(cfg.optimizer.seed)
    return ParamState(0.01 * rng.standard_normal((m, n)))


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Train per the config and return the per-epoch trace.

    Non-finite losses or gradients truncate the record at the last finite
    epoch and set the divergence flag.
    """
    x_train, y_train, x_test, y_test, m, link = _prepare(cfg)
    n = x_train.shape[1]
    params = _init_params(cfg, m, n)
    optimizer = make_optimizer(cfg.optimizer, (m, n))
    shuffle_rng = np.random.default_rng((cfg.seed, 1))

    metadata = {
        "config_hash": config_hash(cfg),
        "git": _git_describe(),
        "platform": platform.platform(),
        "dataset": cfg.dataset,
        "kind": cfg.optimizer.kind.value,
        "lr": repr(cfg.optimizer.learning_rate),
        "eps": repr(cfg.optimizer.eps),
        "rank": str(cfg.optimizer.rank),
        "mu": repr(cfg.optimizer.mu),
        "batch_size": str(cfg.batch_size),
        "epochs": str(cfg.epochs),
        "seed": str(cfg.seed),
    }

    rows: list[EpochRow] = []
    diverged = False
    wall = 0.0
    n_train = x_train.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n_train)
        try:
            for start in range(0, n_train, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                batch = glm.Batch(x_train[idx], y_train[idx])
                model = glm.GlmModel(params.weights, link)
                t0 = time.perf_counter()
                grad = glm.gradient(model, batch)
                params = optimizer.step(params, grad)
                wall += time.perf_counter() - t0
                if not np.isfinite(params.weights).all():
                    diverged = True
                    break
        except NonFiniteGradientError:
            diverged = True
        if diverged:
            break
        model = glm.GlmModel(params.weights, link)
        train_loss = glm.loss(model, glm.Batch(x_train, y_train))
        test_loss = glm.loss(model, glm.Batch(x_test, y_test))
        test_acc = glm.accuracy(model, x_test, y_test)
        if not (math.isfinite(train_loss) and math.isfinite(test_loss)):
            diverged = True
            break
        rows.append(EpochRow(epoch, wall, train_loss, test_loss, test_acc))

    record = RunRecord(rows, metadata, diverged)
    if cfg.output_path:
        record.save(cfg.output_path)
    return record


# ---------------------------------------------------------------------------
# Grid search


@dataclass
class GridResult:
    best_config: ExperimentConfig
    best_record: RunRecord
    entries: list[tuple[ExperimentConfig, RunRecord]] = field(repr=False)


def expand_grid(space: dict, base: ExperimentConfig) -> list[ExperimentConfig]:
    """Cartesian product over batch size, learning rate, and eps, plus rank
    and mu for AdaGram kinds."""
    if not space:
        raise ConfigError("empty grid")
    batch_sizes = space.get("batch_size", [base.batch_size])
    lrs = space.get("learning_rate", [base.optimizer.learning_rate])
    epss = space.get("eps", [base.optimizer.eps])
    if base.optimizer.kind in ADAGRAM_KINDS:
        ranks = space.get("rank", [base.optimizer.rank])
        mus = space.get("mu", [base.optimizer.mu])
    else:
        ranks = [base.optimizer.rank]
        mus = [base.optimizer.mu]
    configs = []
    for bs, lr, eps, rank, mu in itertools.product(batch_sizes, lrs, epss, ranks, mus):
        opt = replace(base.optimizer, learning_rate=lr, eps=eps, rank=rank, mu=mu)
        configs.append(replace(base, optimizer=opt, batch_size=bs, output_path=None))
    if not configs:
        raise ConfigError("empty grid")
    return configs


def _selection_key(cfg: ExperimentConfig, record: RunRecord):
    loss_val = math.inf if record.diverged else record.final_train_loss
    rank = cfg.optimizer.rank if cfg.optimizer.kind in ADAGRAM_KINDS else 0
    return (loss_val, rank, cfg.optimizer.learning_rate, config_hash(cfg))


def select_best(entries) -> int:
    """Index of the winning entry: lowest final-epoch train objective, ties
    broken by smaller rank, smaller learning rate, then config hash."""
    if not entries:
        raise ConfigError("no grid entries to select from")
    keys = [_selection_key(cfg, rec) for cfg, rec in entries]
    return min(range(len(entries)), key=keys.__getitem__)


def grid_search(space: dict, base: ExperimentConfig,
                max_workers: int = 1) -> GridResult:
    configs = expand_grid(space, base)
    if max_workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as pool:
            records = list(pool.map(run_experiment, configs))
    else:
        records = [run_experiment(c) for c in configs]
    entries = list(zip(configs, records))
    best = select_best(entries)
    return GridResult(entries[best][0], entries[best][1], entries)


SUMMARY_COLUMNS = (
    "config_hash", "kind", "lr", "eps", "rank", "mu", "batch_size",
    "final_train_loss", "final_test_loss", "final_test_acc",
    "time_to_best_s", "diverged", "selected",
)


def write_summary_tsv(result: GridResult, path: str) -> None:
    best_hash = config_hash(result.best_config)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\t".join(SUMMARY_COLUMNS) + "\n")
        for cfg, rec in result.entries:
            opt = cfg.optimizer
            is_adagram = opt.kind in ADAGRAM_KINDS
            ttb = rec.time_to_best_s()
            row = [
                config_hash(cfg),
                opt.kind.value,
                repr(opt.learning_rate),
                repr(opt.eps),
                str(opt.rank) if is_adagram else "",
                repr(opt.mu) if is_adagram else "",
                str(cfg.batch_size),
                repr(rec.final_train_loss),
                repr(rec.final_test_loss),
                repr(rec.final_test_acc),
                repr(ttb) if ttb is not None else "",
                str(rec.diverged).lower(),
                "*" if config_hash(cfg) == best_hash else "",
            ]
            fh.write("\t".join(row) + "\n")


# ---------------------------------------------------------------------------
# Invariant suite


@dataclass
class InvariantResult:
    name: str
    passed: bool
    detail: str


@dataclass
class InvariantReport:
    results: list[InvariantResult]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)


def _check_isometry(seed: int) -> InvariantResult:
    """Exact backend reproduces v^T G^{-1} v for random gradient streams."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for eps in (1e-2, 1e-1, 1.0):
        n, steps = 12, 24
        state = precond.ExactPQState(n, eps)
        gram = eps * np.eye(n)
        for _ in range(steps):
            g = rng.standard_normal(n)
            gbar = precond.apply_inverse(state, g)
            precond.update_exact(state, gbar)
            gram += np.outer(g, g)
            v = rng.standard_normal(n)
            lhs = float(np.sum(precond.apply_inverse(state, v) ** 2))
            ref = float(v @ np.linalg.solve(gram, v))
            worst = max(worst, abs(lhs - ref) / abs(ref))
    passed = worst <= 1e-8
    return InvariantResult("isometry", passed, f"max relative error {worst:.3e}")


def _check_splitting_exactness(seed: int) -> InvariantResult:
    """Integrator with rank >= steps matches the exact backend's P Q^T."""
    rng = np.random.default_rng(seed)
    n, steps, eps = 12, 6, 1e-1
    exact = precond.ExactPQState(n, eps)
    integ = precond.IntegratorState(n, eps, rank=steps)
    for _ in range(steps):
        g = rng.standard_normal(n)
        precond.update_exact(exact, precond.apply_inverse(exact, g))
        precond.update_integrator(integ, precond.apply_inverse(integ, g))
    diff = np.linalg.norm(exact.p @ exact.q.T - integ.factors.materialize())
    passed = diff <= 1e-8
    return InvariantResult(
        "splitting_exactness", passed, f"Frobenius gap {diff:.3e}"
    )


def _check_gradient(seed: int) -> InvariantResult:
    """Analytic GLM gradient matches central finite differences."""
    rng = np.random.default_rng(seed)
    b, n, h = 12, 6, 1e-5
    batch = glm.Batch(rng.standard_normal((b, n)), rng.integers(0, 2, b))
    theta = rng.standard_normal((1, n))
    model = glm.GlmModel(theta, glm.Link.SIGMOID)
    grad = glm.gradient(model, batch)
    worst = 0.0
    for j in range(n):
        shift = np.zeros((1, n))
        shift[0, j] = h
        fp = glm.loss(glm.GlmModel(theta + shift, glm.Link.SIGMOID), batch)
        fm = glm.loss(glm.GlmModel(theta - shift, glm.Link.SIGMOID), batch)
        worst = max(worst, abs((fp - fm) / (2 * h) - grad[0, j]))
    passed = worst <= 1e-6
    return InvariantResult("gradient_check", passed, f"max abs error {worst:.3e}")


def _check_norm_oracle(seed: int) -> InvariantResult:
    """AdaGram step norms match the dense G^{-1/2} g oracle."""
    rng = np.random.default_rng(seed)
    n, steps, eps = 8, 15, 1e-1
    state = precond.ExactPQState(n, eps)
    gram = eps * np.eye(n)
    worst = 0.0
    for _ in range(steps):
        g = rng.standard_normal(n)
        gram += np.outer(g, g)
        gbar = precond.apply_inverse(state, g)
        direction = precond.preconditioned_direction(gbar)
        precond.update_exact(state, gbar)
        lam, vecs_ = np.linalg.eigh(gram)
        ref = np.linalg.norm((vecs_ * lam**-0.5) @ (vecs_.T @ g))
        worst = max(worst, abs(np.linalg.norm(direction) - ref) / ref)
    passed = worst <= 1e-8
    return InvariantResult("norm_oracle", passed, f"max relative error {worst:.3e}")


def run_invariant_suite(seed: int = 20250809, quiet: bool = False) -> InvariantReport:
    """Run the built-in correctness checks at fixed seeds.

    Prints one PASS/FAIL line per invariant unless quiet.
    """
    report = InvariantReport([
        _check_isometry(seed),
        _check_splitting_exactness(seed + 1),
        _check_gradient(seed + 2),
        _check_norm_oracle(seed + 3),
    ])
    if not quiet:
        for r in report.results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return report
