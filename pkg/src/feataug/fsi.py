"""Few-shot-integration simulation, sweeps, aggregation, and reporting.

The core experiment pretends one intent is new: a run keeps only k seed rows
of the target class (the rest of its training rows are discarded), keeps every
other class in full, drops the target from dev, optionally merges generated
vectors for the target, trains the softmax classifier, and scores the full
test set.  Repeating with fresh seed draws gives mean (sd) accuracy per
method and per generation count.

Determinism: every random decision is keyed by (master_seed, run, purpose,
...) through :func:`derive_seed`, so results are bit-identical for a fixed
spec regardless of how many worker processes execute the runs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import augment, cvae, deltaenc
from .classifier import ClassifierTrainConfig, evaluate, train_classifier
from .dataio import (AugmentedBatch, DatasetBundle, EmbeddingDataset, Method,
                     merge, remove_label, subsample_class)
from .errors import ConfigError, DataError

__all__ = [
    "derive_seed", "GeneratorConfigs", "SimulationSpec", "AggregateResult",
    "SweepCell", "FullDataCell", "aggregate", "run_fsi", "seed_sweep",
    "full_data_augment", "project_2d", "format_mean_sd", "fsi_csv_lines",
    "sweep_csv_lines", "fulldata_csv_lines", "read_results_csv",
    "results_markdown", "fsi_markdown", "sweep_markdown", "fulldata_markdown",
]

logger = logging.getLogger(__name__)

# purpose codes for seed derivation; never renumber, lockfiles depend on them
_P_SUBSAMPLE = 0
_P_CVAE = 1
_P_DELTA = 2
_P_CLASSIFIER = 3
_P_GENERATE = 4
_P_SWEEP = 5

_METHOD_ORDER = list(Method)

_DISPLAY = {
    None: "No augmentation",
    Method.UPSAMPLE: "Upsample",
    Method.PERTURB: "Perturb",
    Method.LINEAR: "Linear",
    Method.EXTRA: "Extra",
    Method.CVAE: "CVAE",
    Method.DELTA_R: "DeltaR",
    Method.DELTA_S: "DeltaS",
}


def derive_seed(master_seed: int, *path: int) -> int:
    """Stable uint64 seed for a (run, purpose, ...) path under one master."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class GeneratorConfigs:
    """Per-method knobs; the seed fields inside are overridden per run."""

    perturb: augment.PerturbConfig = augment.PerturbConfig()
    extra: augment.ExtraConfig = augment.ExtraConfig()
    cvae: cvae.CvaeTrainConfig = cvae.CvaeTrainConfig()
    delta: deltaenc.DeltaTrainConfig = deltaenc.DeltaTrainConfig()


@dataclass(frozen=True)
class SimulationSpec:
    """Everything one FSI experiment depends on, data aside."""

    target_label: int
    k: int = 10
    n_aug: tuple[int, ...] = (100, 512)
    methods: tuple[Method, ...] = tuple(Method)
    repeats: int = 10
    master_seed: int = 0
    classifier: ClassifierTrainConfig = ClassifierTrainConfig()
    generators: GeneratorConfigs = GeneratorConfigs()

    def __post_init__(self):
        object.__setattr__(self, "n_aug", tuple(int(n) for n in self.n_aug))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if any(n < 0 for n in self.n_aug):
            raise ConfigError(f"n_aug counts must be >= 0, got {self.n_aug}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods")


@dataclass(frozen=True)
class AggregateResult:
    """Mean (sample sd) accuracy for one table cell across runs."""

    method: Method | None  # None marks the no-augmentation baseline
    n_aug: int
    accuracies: tuple[float, ...]
    mean: float
    sd: float
    sd_degenerate: bool  # True when a single run made sd undefined


@dataclass(frozen=True)
class SweepCell:
    k: int
    results: tuple[AggregateResult, ...]


@dataclass(frozen=True)
class FullDataCell:
    fraction: float
    result: AggregateResult


def aggregate(accuracies) -> tuple[float, float]:
    """Mean and sample sd (ddof=1); a single value gets sd 0.0."""
    accs = [float(a) for a in accuracies]
    if not accs:
        raise DataError("cannot aggregate zero accuracies")
    mean = float(np.mean(accs))
    sd = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    return mean, sd


def _make_result(method: Method | None, n_aug: int,
                 accs: list[float]) -> AggregateResult:
    mean, sd = aggregate(accs)
    return AggregateResult(method, n_aug, tuple(accs), mean, sd,
                           sd_degenerate=len(accs) == 1)


def _stack(a: EmbeddingDataset, b: EmbeddingDataset) -> EmbeddingDataset:
    return EmbeddingDataset(a.dim, np.concatenate([a.labels, b.labels]),
                            np.concatenate([a.vectors, b.vectors]), a.vocab)


def _generate(method: Method, n: int, spec: SimulationSpec,
              run_train: EmbeddingDataset, seed_vectors: np.ndarray,
              target: int, models: dict, gen_seed: int) -> AugmentedBatch:
    gens = spec.generators
    try:
        if method is Method.UPSAMPLE:
            return augment.upsample(seed_vectors, n, label_id=target)
        if method is Method.PERTURB:
            return augment.perturb(seed_vectors, n, gens.perturb,
                                   seed=gen_seed, label_id=target)
        if method is Method.LINEAR:
            return augment.linear_delta(seed_vectors, n, seed=gen_seed,
                                        label_id=target)
        if method is Method.EXTRA:
            return augment.extrapolate(seed_vectors, n, gens.extra,
                                       seed=gen_seed, label_id=target)
        if method is Method.CVAE:
            return cvae.sample_cvae(models["cvae"], target, n, gen_seed)
        strategy = deltaenc.PairStrategy.DELTA_S \
            if method is Method.DELTA_S else deltaenc.PairStrategy.DELTA_R
        return deltaenc.generate_delta(models["delta"], run_train, target, n,
                                       strategy, gen_seed)
    except DataError as e:
        raise DataError(f"method {method.value}: {e}") from None


def _fsi_single_run(bundle: DatasetBundle, spec: SimulationSpec,
                    run: int) -> dict:
    """One repeat: returns {cell key: test accuracy}.

    Cell keys are ("none", 0) for the baseline and (method value, n) for the
    augmented cells.
    """
    master = spec.master_seed
    target = spec.target_label
    seeds_ds, rest = subsample_class(
        bundle.train, target, spec.k, derive_seed(master, run, _P_SUBSAMPLE))
    run_train = _stack(rest, seeds_ds)
    dev = remove_label(bundle.dev, target)
    clf_cfg = replace(spec.classifier,
                      seed=derive_seed(master, run, _P_CLASSIFIER))

    out: dict = {}
    model, _ = train_classifier(run_train, dev, clf_cfg)
    out[("none", 0)] = evaluate(model, bundle.test).accuracy

    models: dict = {}
    if Method.CVAE in spec.methods:
        cfg = replace(spec.generators.cvae,
                      seed=derive_seed(master, run, _P_CVAE))
        models["cvae"], _ = cvae.train_cvae(run_train, cfg)
    if Method.DELTA_R in spec.methods or Method.DELTA_S in spec.methods:
        cfg = replace(spec.generators.delta,
                      seed=derive_seed(master, run, _P_DELTA))
        models["delta"], _ = deltaenc.train_delta(run_train, cfg)

    for n in spec.n_aug:
        for method in spec.methods:
            gen_seed = derive_seed(master, run, _P_GENERATE,
                                   _METHOD_ORDER.index(method), n)
            batch = _generate(method, n, spec, run_train,
                              seeds_ds.vectors, target, models, gen_seed)
            merged = merge(run_train, batch)
            model, _ = train_classifier(merged, dev, clf_cfg)
            out[(method.value, n)] = evaluate(model, bundle.test).accuracy
    logger.info("fsi run %d done: baseline %.4f", run, out[("none", 0)])
    return out


def _check_fsi_inputs(bundle: DatasetBundle, spec: SimulationSpec,
                      k: int | None = None) -> None:
    k = spec.k if k is None else k
    bundle.vocab.name_of(spec.target_label)  # range check
    count = int(bundle.train.class_counts()[spec.target_label])
    if count < k:
        raise DataError(
            f"target class {bundle.vocab.name_of(spec.target_label)!r} has "
            f"{count} training rows, cannot draw k={k} seeds")
    if remove_label(bundle.dev, spec.target_label).n_rows == 0:
        raise DataError("dev set is empty after removing the target class")
    if bundle.test.n_rows == 0:
        raise DataError("test set is empty")


def _run_parallel(fn, repeats: int, jobs: int) -> list:
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or repeats == 1:
        return [fn(r) for r in range(repeats)]
    with ProcessPoolExecutor(max_workers=min(jobs, repeats)) as pool:
        return list(pool.map(fn, range(repeats)))


def run_fsi(bundle: DatasetBundle, spec: SimulationSpec, *,
            jobs: int = 1) -> list[AggregateResult]:
    """Run the protocol; returns the baseline result first, then one result
    per (n_aug, method) cell in spec order, grouped by n_aug.

    jobs > 1 distributes repeats over worker processes; results are identical
    to the sequential order because every run is seeded independently.
    """
    _check_fsi_inputs(bundle, spec)
    per_run = _run_parallel(partial(_fsi_single_run, bundle, spec),
                            spec.repeats, jobs)
    results = [_make_result(None, 0, [d[("none", 0)] for d in per_run])]
    for n in spec.n_aug:
        for method in spec.methods:
            accs = [d[(method.value, n)] for d in per_run]
            results.append(_make_result(method, n, accs))
    return results


def seed_sweep(bundle: DatasetBundle, spec: SimulationSpec, ks, *,
               jobs: int = 1) -> list[SweepCell]:
    """run_fsi once per k in ks (spec.k is ignored); each k gets its own
    derived master seed so repeats stay independent across ks."""
    ks = [int(k) for k in ks]
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"ks must be non-empty positive ints, got {ks}")
    for k in ks:
        _check_fsi_inputs(bundle, spec, k=k)  # fail before any training
    cells = []
    for k in ks:
        sub = replace(spec, k=k,
                      master_seed=derive_seed(spec.master_seed, _P_SWEEP, k))
        logger.info("seed sweep: k=%d", k)
        cells.append(SweepCell(k, tuple(run_fsi(bundle, sub, jobs=jobs))))
    return cells


def _fulldata_single_run(bundle: DatasetBundle, fractions: list[float],
                         spec: SimulationSpec, run: int) -> dict:
    """One repeat of the full-data control: every class augmented by a
    fraction of its own training count, nothing discarded."""
    master = spec.master_seed
    clf_cfg = replace(spec.classifier,
                      seed=derive_seed(master, run, _P_CLASSIFIER))
    out: dict = {}
    model, _ = train_classifier(bundle.train, bundle.dev, clf_cfg)
    out[("none", -1)] = evaluate(model, bundle.test).accuracy

    models: dict = {}
    if Method.CVAE in spec.methods:
        cfg = replace(spec.generators.cvae,
                      seed=derive_seed(master, run, _P_CVAE))
        models["cvae"], _ = cvae.train_cvae(bundle.train, cfg)
    if Method.DELTA_R in spec.methods or Method.DELTA_S in spec.methods:
        cfg = replace(spec.generators.delta,
                      seed=derive_seed(master, run, _P_DELTA))
        models["delta"], _ = deltaenc.train_delta(bundle.train, cfg)

    counts = bundle.train.class_counts()
    for fi, frac in enumerate(fractions):
        for method in spec.methods:
            merged = bundle.train
            for label_id in range(len(counts)):
                n_c = int(np.floor(frac * counts[label_id]))
                if n_c == 0:
                    continue
                gen_seed = derive_seed(master, run, _P_GENERATE,
                                       _METHOD_ORDER.index(method), fi,
                                       label_id)
                rows = bundle.train.vectors[bundle.train.labels == label_id]
                batch = _generate(method, n_c, spec, bundle.train, rows,
                                  label_id, models, gen_seed)
                merged = merge(merged, batch)
            model, _ = train_classifier(merged, bundle.dev, clf_cfg)
            out[(method.value, fi)] = evaluate(model, bundle.test).accuracy
    logger.info("full-data run %d done: baseline %.4f", run,
                out[("none", -1)])
    return out


def full_data_augment(bundle: DatasetBundle, spec: SimulationSpec,
                      fractions, *, jobs: int = 1) -> list[FullDataCell]:
    """Control experiment on the untouched training set.

    Each class is augmented by floor(fraction * class count) rows (classes
    whose share rounds to zero are skipped) and the classifier is retrained;
    spec.k and spec.n_aug are ignored.  Returns the baseline cell (fraction
    0.0) first, then fraction-major, method-minor cells.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigError(f"fractions must lie in (0, 1], got {fractions}")
    if bundle.dev.n_rows == 0 or bundle.test.n_rows == 0:
        raise DataError("full-data control needs non-empty dev and test")
    per_run = _run_parallel(
        partial(_fulldata_single_run, bundle, fractions, spec),
        spec.repeats, jobs)
    counts = bundle.train.class_counts()
    cells = [FullDataCell(0.0, _make_result(
        None, 0, [d[("none", -1)] for d in per_run]))]
    for fi, frac in enumerate(fractions):
        total = int(sum(int(np.floor(frac * c)) for c in counts))
        for method in spec.methods:
            accs = [d[(method.value, fi)] for d in per_run]
            cells.append(FullDataCell(frac, _make_result(method, total, accs)))
    return cells


def project_2d(vectors, groups) -> list[tuple[float, float, str]]:
    """Orthogonal projection onto the top-2 principal axes.

    Axes are eigenvectors of the sample covariance of the centered vectors,
    sign-fixed so each axis's largest-magnitude component is positive, which
    makes the output deterministic.  Returns (x, y, group) per input row.
    """
    x = np.asarray(vectors, np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DataError(f"need (N, dim >= 2) vectors, got {x.shape}")
    if x.shape[0] < 2:
        raise DataError("need at least 2 vectors to project")
    groups = [str(g) for g in groups]
    if len(groups) != x.shape[0]:
        raise DataError(f"{len(groups)} group tags for {x.shape[0]} vectors")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    _, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    axes = []
    for col in (-1, -2):
        v = eigvecs[:, col]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        axes.append(v)
    coords = centered @ np.stack(axes, axis=1)
    return [(float(px), float(py), g)
            for (px, py), g in zip(coords, groups)]


# ---------------------------------------------------------------------------
# result serialization: CSV holds raw per-run rows, markdown the mean (sd)
# summary; mean/sd are always recomputable from the CSV.

_FSI_HEADER = "method,n_aug,run,accuracy"
_SWEEP_HEADER = "k,method,n_aug,run,accuracy"
_FULLDATA_HEADER = "fraction,method,run,accuracy"


def _method_field(method: Method | None) -> str:
    return "none" if method is None else method.value


def _parse_method(name: str) -> Method | None:
    return None if name == "none" else Method.from_name(name)


def fsi_csv_lines(results) -> list[str]:
    lines = [_FSI_HEADER]
    for res in results:
        for run, acc in enumerate(res.accuracies):
            lines.append(f"{_method_field(res.method)},{res.n_aug},"
                         f"{run},{float(acc)!r}")
    return lines


def sweep_csv_lines(cells) -> list[str]:
    lines = [_SWEEP_HEADER]
    for cell in cells:
        for res in cell.results:
            for run, acc in enumerate(res.accuracies):
                lines.append(f"{cell.k},{_method_field(res.method)},"
                             f"{res.n_aug},{run},{float(acc)!r}")
    return lines


def fulldata_csv_lines(cells) -> list[str]:
    lines = [_FULLDATA_HEADER]
    for cell in cells:
        res = cell.result
        for run, acc in enumerate(res.accuracies):
            lines.append(f"{float(cell.fraction)!r},"
                         f"{_method_field(res.method)},{run},{float(acc)!r}")
    return lines


def format_mean_sd(mean: float, sd: float) -> str:
    """Accuracy cell in percent: '87.46 (2.87)'."""
    return f"{mean * 100:.2f} ({sd * 100:.2f})"


def _fmt_mean_sd(res: AggregateResult) -> str:
    return format_mean_sd(res.mean, res.sd)


def fsi_markdown(results) -> str:
    lines = ["| n_aug | Method | Accuracy (%) |", "| --- | --- | --- |"]
    for res in results:
        tag = "-" if res.method is None else str(res.n_aug)
        lines.append(f"| {tag} | {_DISPLAY[res.method]} | "
                     f"{_fmt_mean_sd(res)} |")
    return "\n".join(lines) + "\n"


def sweep_markdown(cells) -> str:
    lines = ["| k | Method | n_aug | Accuracy (%) |",
             "| --- | --- | --- | --- |"]
    for cell in cells:
        for res in cell.results:
            tag = "-" if res.method is None else str(res.n_aug)
            lines.append(f"| {cell.k} | {_DISPLAY[res.method]} | {tag} | "
                         f"{_fmt_mean_sd(res)} |")
    return "\n".join(lines) + "\n"


def fulldata_markdown(cells) -> str:
    lines = ["| Fraction | Method | Accuracy (%) |", "| --- | --- | --- |"]
    for cell in cells:
        res = cell.result
        tag = "-" if res.method is None else f"{cell.fraction * 100:g}%"
        lines.append(f"| {tag} | {_DISPLAY[res.method]} | "
                     f"{_fmt_mean_sd(res)} |")
    return "\n".join(lines) + "\n"


def _read_rows(path, expect_cols: int):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"{path}: cannot read: {e}") from None
    lines = [ln for ln in text.split("\n") if ln.strip()]
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != expect_cols:
            raise DataError(f"{path}:{lineno}: expected {expect_cols} "
                            f"columns, got {len(parts)}")
        rows.append(parts)
    return lines[0] if lines else "", rows


def read_results_csv(path):
    """Load a results CSV back into (kind, structure); kind is one of
    'fsi', 'sweep', 'fulldata' and structure matches the producing op."""
    try:
        header = Path(path).read_text(encoding="utf-8").split("\n", 1)[0]
    except OSError as e:
        raise DataError(f"{path}: cannot read: {e}") from None
    try:
        if header == _FSI_HEADER:
            _, rows = _read_rows(path, 4)
            groups: dict = {}
            for m, n, _run, acc in rows:
                groups.setdefault((m, int(n)), []).append(float(acc))
            return "fsi", [_make_result(_parse_method(m), n, accs)
                           for (m, n), accs in groups.items()]
        if header == _SWEEP_HEADER:
            _, rows = _read_rows(path, 5)
            by_k: dict = {}
            for k, m, n, _run, acc in rows:
                by_k.setdefault(int(k), {}).setdefault(
                    (m, int(n)), []).append(float(acc))
            return "sweep", [
                SweepCell(k, tuple(_make_result(_parse_method(m), n, accs)
                                   for (m, n), accs in groups.items()))
                for k, groups in by_k.items()]
        if header == _FULLDATA_HEADER:
            _, rows = _read_rows(path, 4)
            groups = {}
            for f, m, _run, acc in rows:
                groups.setdefault((float(f), m), []).append(float(acc))
            return "fulldata", [
                FullDataCell(f, _make_result(_parse_method(m),
                                             0 if m == "none" else -1, accs))
                for (f, m), accs in groups.items()]
    except (ValueError, DataError) as e:
        raise DataError(f"{path}: malformed results CSV: {e}") from None
    raise DataError(f"{path}: unrecognized results header {header!r}")


def results_markdown(kind: str, structure) -> str:
    if kind == "fsi":
        return fsi_markdown(structure)
    if kind == "sweep":
        return sweep_markdown(structure)
    if kind == "fulldata":
        return fulldata_markdown(structure)
    raise DataError(f"unknown results kind {kind!r}")
