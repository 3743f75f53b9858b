"""Command-line front door: reproducible experiment recipes from one config.

Config files are INI-style text (sections of ``key = value``); every flag
overrides its config key, and every artifact-producing command writes a
``run.lock`` into the output directory holding the fully resolved config.
Rerunning a command with ``--config <run.lock>`` replays it bit-exactly.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

Subcommands: synth, ingest, augment, fsi, sweep, fulldata, train-classifier,
evaluate, project, report.  See the README for the config grammar.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import cvae as cvae_mod
from . import deltaenc
from . import fsi as fsi_mod
from .classifier import (ClassifierTrainConfig, Selection, evaluate,
                         load_classifier, save_classifier, train_classifier)
from .dataio import (DatasetBundle, EmbeddingDataset, LabelVocab, Method,
                     load_embeddings, load_manifest, save_embeddings,
                     save_manifest)
from .errors import ConfigError, DataError, NumericError
from .fsi import GeneratorConfigs, SimulationSpec, derive_seed
from .synthgen import generate_mixture, snipslike_spec

logger = logging.getLogger(__name__)

_ALL_METHODS = " ".join(m.value for m in Method)

# every key a config file may set, per section; anything else is a typo
_KNOWN_KEYS = {
    "run": {"experiment", "out", "seed", "jobs"},
    "data": {"manifest"},
    "synth": {"dim", "separation", "seed", "train_per_class",
              "dev_per_class", "test_per_class"},
    "fsi": {"target", "k", "n_aug", "methods", "repeats"},
    "sweep": {"target", "ks", "n_aug", "methods", "repeats"},
    "fulldata": {"fractions", "methods", "repeats"},
    "classifier": {"lr", "epochs", "batch_size", "input_dropout",
                   "selection"},
    "perturb": {"mode", "alpha"},
    "extra": {"lambda"},
    "cvae": {"lr", "epochs", "batch_size", "kl_weight"},
    "delta": {"lr", "epochs", "batch_size", "pairs_per_class"},
    "augment": {"method", "n", "label", "seed", "input", "train_from",
                "save_model"},
    "evaluate": {"model", "data"},
    "project": set(),  # input<N>/group<N> pairs, validated separately
    "report": {"results"},
}


def _load_config_file(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def _check_known_keys(cfg: dict) -> None:
    for section, kv in cfg.items():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        if section == "project":
            for key in kv:
                stem = key.rstrip("0123456789")
                if stem not in ("input", "group") or stem == key:
                    raise ConfigError(f"project.{key}: unknown key")
            continue
        for key in kv:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")


def _conv(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except (ValueError, DataError) as e:
        raise ConfigError(f"{section}.{key}: invalid value {raw!r} "
                          f"({e})") from None


def _parse_int_list(raw: str) -> list[int]:
    vals = [int(t) for t in raw.split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _parse_float_list(raw: str) -> list[float]:
    vals = [float(t) for t in raw.split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _parse_methods(raw: str) -> list[Method]:
    names = raw.split()
    if names == ["all"]:
        return list(Method)
    return [Method.from_name(n) for n in names]


class _Resolver:
    """Merges defaults, config file, and flags into canonical strings.

    The canonical string form is both what run.lock records and what the
    typed getters parse, so a replayed lock goes through the identical code
    path as the original invocation.
    """

    def __init__(self, experiment: str, args):
        self.experiment = experiment
        self.file_cfg = _load_config_file(args.config) \
            if getattr(args, "config", None) else {}
        _check_known_keys(self.file_cfg)
        locked = self.file_cfg.get("run", {}).get("experiment")
        if locked is not None and locked != experiment:
            raise ConfigError(f"run.experiment is {locked!r} but the "
                              f"{experiment!r} command was invoked")
        self.sections: dict[str, dict[str, str]] = {}

    def put(self, section: str, key: str, default, flag=None) -> str:
        """Resolve one value to its canonical string; None means absent."""
        raw = self.file_cfg.get(section, {}).get(key)
        if flag is not None:
            raw = str(flag)
        if raw is None and default is not None:
            raw = str(default)
        if raw is not None:
            self.sections.setdefault(section, {})[key] = raw
        return raw

    def require(self, section: str, key: str, flag=None) -> str:
        raw = self.put(section, key, None, flag)
        if raw is None:
            raise ConfigError(f"{section}.{key} is required")
        return raw

    def get_typed(self, section: str, key: str, kind):
        raw = self.sections.get(section, {}).get(key)
        return None if raw is None else _conv(section, key, raw, kind)

    def common(self, args) -> None:
        self.sections["run"] = {}
        self.sections["run"]["experiment"] = self.experiment
        self.put("run", "out", "out", getattr(args, "out", None))
        self.put("run", "seed", 0, getattr(args, "seed", None))
        self.put("run", "jobs", 1, getattr(args, "jobs", None))

    @property
    def out_dir(self) -> Path:
        return Path(self.sections["run"]["out"])

    @property
    def master_seed(self) -> int:
        return self.get_typed("run", "seed", int)

    @property
    def jobs(self) -> int:
        return self.get_typed("run", "jobs", int)

    # -- data source ------------------------------------------------------

    def data_source(self, args, *, synth_only: bool = False) -> None:
        """Resolve exactly one of [data] manifest / [synth]."""
        manifest = getattr(args, "manifest", None) \
            or self.file_cfg.get("data", {}).get("manifest")
        if synth_only and manifest is not None:
            raise ConfigError("data.manifest: not accepted here; synth "
                              "generates its own data")
        if manifest is not None and "synth" in self.file_cfg:
            raise ConfigError("exactly one data source: both data.manifest "
                              "and [synth] are configured")
        if manifest is not None:
            self.sections["data"] = {"manifest": str(manifest)}
            return
        if not synth_only and "synth" not in self.file_cfg:
            raise ConfigError("data.manifest (or a [synth] section) is "
                              "required: no data source configured")
        self.put("synth", "dim", 16)
        self.put("synth", "separation", 8.0)
        # for the synth command --seed means the data seed; experiment
        # commands keep their data pinned under [synth] seed instead
        self.put("synth", "seed", 0,
                 getattr(args, "seed", None) if synth_only else None)
        self.put("synth", "train_per_class", 1800)
        self.put("synth", "dev_per_class", 100)
        self.put("synth", "test_per_class", 100)

    def bundle(self) -> DatasetBundle:
        if "data" in self.sections:
            path = self.sections["data"]["manifest"]
            if not Path(path).exists():
                raise DataError(f"data.manifest: file not found: {path}")
            return load_manifest(path)
        s = self.sections["synth"]
        seed = _conv("synth", "seed", s["seed"], int)
        spec = snipslike_spec(
            _conv("synth", "dim", s["dim"], int),
            _conv("synth", "separation", s["separation"], float),
            derive_seed(seed, 0),
            train_per_class=_conv("synth", "train_per_class",
                                  s["train_per_class"], int),
            dev_per_class=_conv("synth", "dev_per_class",
                                s["dev_per_class"], int),
            test_per_class=_conv("synth", "test_per_class",
                                 s["test_per_class"], int))
        return generate_mixture(spec, derive_seed(seed, 1))

    # -- shared model/generator config sections ---------------------------

    def classifier_cfg(self) -> ClassifierTrainConfig:
        self.put("classifier", "lr", 0.001)
        self.put("classifier", "epochs", 100)
        self.put("classifier", "batch_size", 32)
        self.put("classifier", "input_dropout", 0.1)
        self.put("classifier", "selection", "best_dev")
        sel = self.sections["classifier"]["selection"]
        try:
            selection = Selection(sel)
        except ValueError:
            raise ConfigError(f"classifier.selection: invalid value {sel!r}; "
                              f"use best_dev or last_epoch") from None
        return ClassifierTrainConfig(
            lr=self.get_typed("classifier", "lr", float),
            epochs=self.get_typed("classifier", "epochs", int),
            batch_size=self.get_typed("classifier", "batch_size", int),
            input_dropout_p=self.get_typed("classifier", "input_dropout",
                                           float),
            selection=selection)

    def generator_cfgs(self, args=None) -> GeneratorConfigs:
        self.put("perturb", "mode", "mixed")
        self.put("perturb", "alpha", 1.0, getattr(args, "alpha", None))
        self.put("extra", "lambda", 0.5, getattr(args, "lam", None))
        self.put("cvae", "lr", 0.001)
        self.put("cvae", "epochs", 200)
        self.put("cvae", "batch_size", 64)
        self.put("cvae", "kl_weight", 1.0)
        self.put("delta", "lr", 0.001)
        self.put("delta", "epochs", 200)
        self.put("delta", "batch_size", 64)
        self.put("delta", "pairs_per_class", "data")
        mode_raw = self.sections["perturb"]["mode"]
        try:
            mode = aug.PerturbMode(mode_raw)
        except ValueError:
            raise ConfigError(f"perturb.mode: invalid value {mode_raw!r}; "
                              "use additive, multiplicative, or mixed") \
                from None
        ppc_raw = self.sections["delta"]["pairs_per_class"]
        ppc = None if ppc_raw == "data" \
            else _conv("delta", "pairs_per_class", ppc_raw, int)
        return GeneratorConfigs(
            perturb=aug.PerturbConfig(
                mode=mode, alpha=self.get_typed("perturb", "alpha", float)),
            extra=aug.ExtraConfig(
                lam=self.get_typed("extra", "lambda", float)),
            cvae=cvae_mod.CvaeTrainConfig(
                lr=self.get_typed("cvae", "lr", float),
                epochs=self.get_typed("cvae", "epochs", int),
                batch_size=self.get_typed("cvae", "batch_size", int),
                kl_weight=self.get_typed("cvae", "kl_weight", float)),
            delta=deltaenc.DeltaTrainConfig(
                lr=self.get_typed("delta", "lr", float),
                epochs=self.get_typed("delta", "epochs", int),
                batch_size=self.get_typed("delta", "batch_size", int),
                pairs_per_class=ppc))

    def write_lock(self) -> None:
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        lines = []
        for section, kv in self.sections.items():
            lines.append(f"[{section}]")
            for key, value in kv.items():
                lines.append(f"{key} = {value}")
            lines.append("")
        (out / "run.lock").write_text("\n".join(lines), encoding="utf-8")


def _write_lines(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _resolve_target(res: _Resolver, section: str, args,
                    vocab: LabelVocab) -> int:
    name = res.put(section, "target", vocab.names[0],
                   getattr(args, "target", None))
    return vocab.id_of(name)


# -- subcommand handlers ---------------------------------------------------


def _cmd_synth(args) -> int:
    res = _Resolver("synth", args)
    res.common(args)
    res.data_source(args, synth_only=True)
    bundle = res.bundle()
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    for split, ds in (("train", bundle.train), ("dev", bundle.dev),
                      ("test", bundle.test)):
        save_embeddings(ds, out / f"{split}.embv1")
    save_manifest(out / "manifest.txt", "train.embv1", "dev.embv1",
                  "test.embv1")
    res.write_lock()
    print(f"wrote {bundle.train.n_rows}/{bundle.dev.n_rows}/"
          f"{bundle.test.n_rows} rows to {out}/{{train,dev,test}}.embv1")
    return 0


def _cmd_ingest(args) -> int:
    res = _Resolver("ingest", args)
    res.common(args)
    manifest = getattr(args, "manifest", None) \
        or res.file_cfg.get("data", {}).get("manifest")
    if manifest is None:
        raise ConfigError("data.manifest is required")
    res.sections["data"] = {"manifest": str(manifest)}
    if not Path(manifest).exists():
        raise DataError(f"data.manifest: file not found: {manifest}")
    bundle = load_manifest(manifest)
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    for split, ds in (("train", bundle.train), ("dev", bundle.dev),
                      ("test", bundle.test)):
        save_embeddings(ds, out / f"{split}.embv1")
    save_manifest(out / "manifest.txt", "train.embv1", "dev.embv1",
                  "test.embv1")
    res.write_lock()
    print(f"ingested {bundle.train.n_rows}/{bundle.dev.n_rows}/"
          f"{bundle.test.n_rows} rows into {out}")
    return 0


def _cmd_augment(args) -> int:
    res = _Resolver("augment", args)
    res.common(args)
    method = _conv("augment", "method",
                   res.require("augment", "method",
                               getattr(args, "method", None)),
                   Method.from_name)
    n = _conv("augment", "n",
              res.require("augment", "n", getattr(args, "n", None)), int)
    if n < 0:
        raise ConfigError(f"augment.n must be >= 0, got {n}")
    gen_seed = _conv("augment", "seed",
                     res.put("augment", "seed", 0,
                             getattr(args, "seed", None)), int)
    gens = res.generator_cfgs(args)
    label_name = res.put("augment", "label", None,
                         getattr(args, "label", None))
    input_path = res.put("augment", "input", None,
                         getattr(args, "input", None))
    train_from = res.put("augment", "train_from", None,
                         getattr(args, "train_from", None))
    save_model = res.put("augment", "save_model", None,
                         getattr(args, "save_model", None))
    res.out_dir.mkdir(parents=True, exist_ok=True)
    if save_model:
        Path(save_model).parent.mkdir(parents=True, exist_ok=True)

    needs_training = method in (Method.CVAE, Method.DELTA_R, Method.DELTA_S)
    if needs_training:
        if train_from is None:
            raise ConfigError(f"augment.train_from is required for method "
                              f"{method.value}")
        if label_name is None:
            raise ConfigError("augment.label is required for trained methods")
        if not Path(train_from).exists():
            raise DataError(f"augment.train_from: file not found: "
                            f"{train_from}")
        bundle = load_manifest(train_from)
        label_id = bundle.vocab.id_of(label_name)
        train = bundle.train
        if method is Method.CVAE:
            ccfg = dataclasses.replace(gens.cvae, seed=gen_seed)
            model, _ = cvae_mod.train_cvae(train, ccfg)
            batch = cvae_mod.sample_cvae(model, label_id, n,
                                         derive_seed(gen_seed, 1))
            if save_model:
                cvae_mod.save_cvae(save_model, model)
        else:
            dcfg = dataclasses.replace(gens.delta, seed=gen_seed)
            model, _ = deltaenc.train_delta(train, dcfg)
            strategy = deltaenc.PairStrategy(method.value)
            batch = deltaenc.generate_delta(model, train, label_id, n,
                                            strategy, derive_seed(gen_seed, 1))
            if save_model:
                deltaenc.save_delta(save_model, model)
        out_vocab = bundle.vocab
    else:
        if input_path is None:
            raise ConfigError("augment.input is required for seed-based "
                              "methods")
        if not Path(input_path).exists():
            raise DataError(f"augment.input: file not found: {input_path}")
        ds = load_embeddings(input_path)
        if label_name is None:
            present = sorted(set(ds.labels.tolist()))
            if len(present) != 1:
                raise ConfigError("augment.label is required when the input "
                                  "file has multiple labels")
            label_id = int(present[0])
            label_name = ds.vocab.name_of(label_id)
            res.put("augment", "label", label_name)
        else:
            label_id = ds.vocab.id_of(label_name)
        seeds = ds.vectors[ds.labels == label_id]
        if method is Method.UPSAMPLE:
            batch = aug.upsample(seeds, n, label_id=label_id)
        elif method is Method.PERTURB:
            batch = aug.perturb(seeds, n, gens.perturb, seed=gen_seed,
                                label_id=label_id)
        elif method is Method.LINEAR:
            batch = aug.linear_delta(seeds, n, seed=gen_seed,
                                     label_id=label_id)
        else:
            batch = aug.extrapolate(seeds, n, gens.extra, seed=gen_seed,
                                    label_id=label_id)
        out_vocab = ds.vocab

    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    gen_ds = EmbeddingDataset(
        batch.vectors.shape[1],
        np.zeros(batch.size, np.int64),
        batch.vectors,
        LabelVocab((out_vocab.name_of(batch.label_id),)))
    save_embeddings(gen_ds, out / "generated.embv1")
    res.write_lock()
    print(f"wrote {batch.size} {method.value} rows for label "
          f"{label_name!r} to {out / 'generated.embv1'}")
    return 0


def _cmd_fsi(args) -> int:
    res = _Resolver("fsi", args)
    res.common(args)
    res.data_source(args)
    bundle = res.bundle()
    target = _resolve_target(res, "fsi", args, bundle.vocab)
    k = _conv("fsi", "k", res.put("fsi", "k", 10,
                                  getattr(args, "k", None)), int)
    n_aug = _conv("fsi", "n_aug",
                  res.put("fsi", "n_aug", "100 512",
                          getattr(args, "n_aug", None)), _parse_int_list)
    methods = _conv("fsi", "methods",
                    res.put("fsi", "methods", _ALL_METHODS,
                            getattr(args, "methods", None)), _parse_methods)
    repeats = _conv("fsi", "repeats",
                    res.put("fsi", "repeats", 10,
                            getattr(args, "repeats", None)), int)
    spec = SimulationSpec(
        target_label=target, k=k, n_aug=tuple(n_aug),
        methods=tuple(methods), repeats=repeats,
        master_seed=res.master_seed, classifier=res.classifier_cfg(),
        generators=res.generator_cfgs())
    results = fsi_mod.run_fsi(bundle, spec, jobs=res.jobs)
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / "results.csv", fsi_mod.fsi_csv_lines(results))
    (out / "results.md").write_text(fsi_mod.fsi_markdown(results),
                                    encoding="utf-8")
    res.write_lock()
    print(fsi_mod.fsi_markdown(results), end="")
    return 0


def _cmd_sweep(args) -> int:
    res = _Resolver("sweep", args)
    res.common(args)
    res.data_source(args)
    bundle = res.bundle()
    target = _resolve_target(res, "sweep", args, bundle.vocab)
    ks = _conv("sweep", "ks",
               res.put("sweep", "ks", "5 10 15 20 25 30",
                       getattr(args, "ks", None)), _parse_int_list)
    n_aug = _conv("sweep", "n_aug",
                  res.put("sweep", "n_aug", 100, None), int)
    methods = _conv("sweep", "methods",
                    res.put("sweep", "methods", _ALL_METHODS,
                            getattr(args, "methods", None)), _parse_methods)
    repeats = _conv("sweep", "repeats",
                    res.put("sweep", "repeats", 10,
                            getattr(args, "repeats", None)), int)
    spec = SimulationSpec(
        target_label=target, n_aug=(n_aug,), methods=tuple(methods),
        repeats=repeats, master_seed=res.master_seed,
        classifier=res.classifier_cfg(), generators=res.generator_cfgs())
    cells = fsi_mod.seed_sweep(bundle, spec, ks, jobs=res.jobs)
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / "results.csv", fsi_mod.sweep_csv_lines(cells))
    (out / "results.md").write_text(fsi_mod.sweep_markdown(cells),
                                    encoding="utf-8")
    res.write_lock()
    print(fsi_mod.sweep_markdown(cells), end="")
    return 0


def _cmd_fulldata(args) -> int:
    res = _Resolver("fulldata", args)
    res.common(args)
    res.data_source(args)
    bundle = res.bundle()
    fractions = _conv("fulldata", "fractions",
                      res.put("fulldata", "fractions", "0.05 0.1 0.2",
                              getattr(args, "fractions", None)),
                      _parse_float_list)
    methods = _conv("fulldata", "methods",
                    res.put("fulldata", "methods", _ALL_METHODS,
                            getattr(args, "methods", None)), _parse_methods)
    repeats = _conv("fulldata", "repeats",
                    res.put("fulldata", "repeats", 10,
                            getattr(args, "repeats", None)), int)
    spec = SimulationSpec(
        target_label=0, methods=tuple(methods), repeats=repeats,
        master_seed=res.master_seed, classifier=res.classifier_cfg(),
        generators=res.generator_cfgs())
    cells = fsi_mod.full_data_augment(bundle, spec, fractions, jobs=res.jobs)
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / "results.csv", fsi_mod.fulldata_csv_lines(cells))
    (out / "results.md").write_text(fsi_mod.fulldata_markdown(cells),
                                    encoding="utf-8")
    res.write_lock()
    print(fsi_mod.fulldata_markdown(cells), end="")
    return 0


def _cmd_train_classifier(args) -> int:
    res = _Resolver("train-classifier", args)
    res.common(args)
    res.data_source(args)
    bundle = res.bundle()
    cfg = dataclasses.replace(res.classifier_cfg(), seed=res.master_seed)
    model, trace = train_classifier(bundle.train, bundle.dev, cfg)
    result = evaluate(model, bundle.test)
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    save_classifier(out / "classifier.npz", model)
    _write_lines(out / "trace.csv",
                 ["epoch,dev_accuracy"]
                 + [f"{e},{acc!r}" for e, acc in enumerate(trace)])
    res.write_lock()
    print(f"test accuracy {result.accuracy:.4f} "
          f"({out / 'classifier.npz'})")
    return 0


def _cmd_evaluate(args) -> int:
    res = _Resolver("evaluate", args)
    res.common(args)
    model_path = res.require("evaluate", "model",
                             getattr(args, "model", None))
    data_path = res.require("evaluate", "data", getattr(args, "data", None))
    for field, p in (("evaluate.model", model_path),
                     ("evaluate.data", data_path)):
        if not Path(p).exists():
            raise DataError(f"{field}: file not found: {p}")
    model = load_classifier(model_path)
    ds = load_embeddings(data_path)
    if ds.vocab.names != model.vocab.names:
        # remap dataset labels into the model's id space by name
        try:
            mapping = np.array([model.vocab.id_of(n) for n in ds.vocab.names],
                               dtype=np.int64)
        except DataError:
            raise DataError("evaluate.data: labels do not match the "
                            "model's vocabulary") from None
        ds = EmbeddingDataset(ds.dim, mapping[ds.labels], ds.vectors,
                              model.vocab)
    result = evaluate(model, ds)
    print(f"accuracy {result.accuracy!r} on {ds.n_rows} rows")
    if getattr(args, "out", None) or "out" in res.file_cfg.get("run", {}):
        out = res.out_dir
        out.mkdir(parents=True, exist_ok=True)
        header = "true\\predicted," + ",".join(model.vocab.names)
        lines = [header]
        for i, name in enumerate(model.vocab.names):
            lines.append(name + "," + ",".join(
                str(int(v)) for v in result.confusion[i]))
        _write_lines(out / "confusion.csv", lines)
        res.write_lock()
    return 0


def _cmd_project(args) -> int:
    res = _Resolver("project", args)
    res.common(args)
    pairs: list[tuple[str, str]] = []
    proj_cfg = res.file_cfg.get("project", {})
    indices = sorted(int(k[len("input"):]) for k in proj_cfg
                     if k.startswith("input"))
    for idx in indices:
        path = proj_cfg[f"input{idx}"]
        group = proj_cfg.get(f"group{idx}", f"group{idx}")
        pairs.append((path, group))
    for path, group in (getattr(args, "inputs", None) or []):
        pairs.append((path, group))
    if not pairs:
        raise ConfigError("project.input1 (or --input PATH TAG) is required")
    for i, (path, group) in enumerate(pairs, start=1):
        res.sections.setdefault("project", {})[f"input{i}"] = path
        res.sections["project"][f"group{i}"] = group
    vectors, groups = [], []
    for path, group in pairs:
        if not Path(path).exists():
            raise DataError(f"project input: file not found: {path}")
        ds = load_embeddings(path)
        vectors.append(ds.vectors)
        groups.extend([group] * ds.n_rows)
    stacked = np.concatenate(vectors) if vectors else np.empty((0, 0))
    points = fsi_mod.project_2d(stacked, groups)
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / "projection.csv",
                 ["x,y,group"] + [f"{x!r},{y!r},{g}" for x, y, g in points])
    res.write_lock()
    print(f"wrote {len(points)} projected points to "
          f"{out / 'projection.csv'}")
    return 0


def _cmd_report(args) -> int:
    res = _Resolver("report", args)
    res.common(args)
    results_path = res.require("report", "results",
                               getattr(args, "results", None))
    if not Path(results_path).exists():
        raise DataError(f"report.results: file not found: {results_path}")
    kind, structure = fsi_mod.read_results_csv(results_path)
    md = fsi_mod.results_markdown(kind, structure)
    out = res.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.md").write_text(md, encoding="utf-8")
    res.write_lock()
    print(md, end="")
    return 0


# -- parser wiring ---------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (flags override it)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--jobs", type=int, help="max worker processes")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="dataset manifest path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feataug",
        description="Feature-space augmentation toolkit and few-shot "
                    "integration benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="validate + normalize a bundle")
    _add_common(p)
    _add_data_flags(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("augment", help="generate vectors with one method")
    _add_common(p)
    p.add_argument("--method", help="one of: " + _ALL_METHODS)
    p.add_argument("--n", type=int, help="rows to generate")
    p.add_argument("--label", help="target label name")
    p.add_argument("--input", help="EMBV1 seed file (seed-based methods)")
    p.add_argument("--train-from", dest="train_from",
                   help="manifest to train cvae/deltar/deltas on")
    p.add_argument("--save-model", dest="save_model",
                   help="checkpoint path for the trained generator")
    p.add_argument("--alpha", type=float, help="perturb noise scale")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="extrapolation step")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("fsi", help="few-shot integration simulation")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--target", help="target label name")
    p.add_argument("--k", type=int, help="seed examples per run")
    p.add_argument("--n-aug", dest="n_aug", help="generation sizes, e.g. "
                   "'100 512'")
    p.add_argument("--methods", help="space-separated methods or 'all'")
    p.add_argument("--repeats", type=int, help="number of runs")
    p.set_defaults(func=_cmd_fsi)

    p = sub.add_parser("sweep", help="seed-count sweep")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--target", help="target label name")
    p.add_argument("--ks", help="seed counts, e.g. '5 10 15'")
    p.add_argument("--methods", help="space-separated methods or 'all'")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("fulldata", help="full-data augmentation control")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--fractions", help="e.g. '0.05 0.1 0.2'")
    p.add_argument("--methods", help="space-separated methods or 'all'")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=_cmd_fulldata)

    p = sub.add_parser("train-classifier", help="train the softmax probe")
    _add_common(p)
    _add_data_flags(p)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("evaluate", help="score a classifier checkpoint")
    _add_common(p)
    p.add_argument("--model", help="classifier checkpoint")
    p.add_argument("--data", help="EMBV1 file to score")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("project", help="2-D projection export")
    _add_common(p)
    p.add_argument("--input", dest="inputs", nargs=2, action="append",
                   metavar=("PATH", "TAG"), help="EMBV1 file + group tag")
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("report", help="re-render a results CSV as markdown")
    _add_common(p)
    p.add_argument("--results", help="results.csv from fsi/sweep/fulldata")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


def run() -> None:
    sys.exit(main())
