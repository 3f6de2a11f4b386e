"""Training loops and run reports for the three benchmark experiments.

Every run is seeded and single threaded; the same config and seed give
byte-identical ``report.csv`` files.  Wall time only goes to ``run.json``.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from typing import Sequence

import numpy as np

from .. import grad as G
from .. import nets
from ..layerc import compile_formula
from ..logic import make_vars, to_text
from . import data

EXPERIMENTS = ("synthetic", "structsum", "hierarchy")
REPORT_COLUMNS = ("epoch", "split", "neg_elbo", "satisfaction", "class_acc", "group_acc")
# the held-out test set is shared by every seed
TEST_SEED = 20_000


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "synthetic"
    n: int = 1000
    seeds: tuple[int, ...] = (0,)
    epochs: int = 300
    lr: float = 3e-3
    batch: int = 64
    val_fraction: float = 0.1
    n_test: int = 1000
    sigma: float = 0.1
    activation: str = "tanh"
    # synthetic
    models: tuple[str, ...] = ("multiplex", "unaware")
    latent: int = 15
    hidden: tuple[int, ...] = (50,)
    learn_prior: bool = False
    geometry: str | None = None
    n_samples: int = 1000
    # structured sum
    base: int = 4
    gate_hidden: tuple[int, ...] = (64,)
    # likelihood scale decays geometrically from this to ``sigma`` over the
    # first ``anneal_fraction`` of training; None keeps it fixed
    sigma_start: float | None = None
    anneal_fraction: float = 0.5
    # hierarchy
    groups: int = 3
    per_group: int = 3
    alpha: float = 0.95

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.models = tuple(self.models)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.gate_hidden = tuple(int(h) for h in self.gate_hidden)
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.n < 1:
            raise ConfigError("N must be at least 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.sigma_start is not None and not self.sigma_start >= self.sigma > 0:
            raise ConfigError("sigma_start must be at least sigma")
        if not 0.5 <= self.alpha < 1:
            raise ConfigError("alpha must be in [0.5, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def default(cls, experiment: str) -> "ExperimentConfig":
        """The shipped configuration for ``experiment``."""
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        text = resources.files(__package__).joinpath(f"configs/{experiment}.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            cfg = cls.from_dict(json.load(fh))
        return cfg.override(**overrides)

    def override(self, seed=None, epochs=None, n=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seeds"] = (int(seed),)
        if epochs is not None:
            changes["epochs"] = int(epochs)
        if n is not None:
            changes["n"] = int(n)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass
class RunReport:
    experiment: str
    model: str
    seed: int
    n: int
    rows: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def log(self, epoch: int, split: str, neg_elbo=math.nan, satisfaction=math.nan,
            class_acc=math.nan, group_acc=math.nan):
        if not (math.isnan(satisfaction) or 0.0 <= satisfaction <= 1.0):
            raise ValueError(f"satisfaction {satisfaction} outside [0, 1]")
        self.rows.append({"epoch": epoch, "split": split, "neg_elbo": neg_elbo,
                          "satisfaction": satisfaction, "class_acc": class_acc,
                          "group_acc": group_acc})

    def series(self, split: str, column: str) -> list[float]:
        return [r[column] for r in self.rows if r["split"] == split]

    def last(self, split: str, column: str) -> float:
        s = self.series(split, column)
        return s[-1] if s else math.nan


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "" if math.isnan(v) else f"{v:.10g}"


def write_report(report: RunReport, out_dir, config: ExperimentConfig, extra: dict | None = None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
    run = {"config": config.to_dict(), "model": report.model, "seed": report.seed,
           "final": report.final, "wall_time": report.wall_time, **(extra or {})}
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(run, fh, indent=2, sort_keys=True)


def write_samples(path, samples: np.ndarray, names: Sequence[str]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in samples:
            w.writerow([repr(float(v)) for v in row])


def _split(n: int, val_fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    if n - n_val < 1:
        n_val = n - 1
    return perm[n_val:], perm[:n_val]


def _step(params, opt, loss_fn):
    tape = G.Tape()
    P = nets.lift(params, tape)
    loss = loss_fn(P)
    g = tape.backward(loss)
    opt.step(params, {k: g[P[k]] for k in params})
    return float(loss.data)


def sigma_at(config: ExperimentConfig, epoch: int) -> float:
    """Likelihood scale used during ``epoch`` (1-based)."""
    if config.sigma_start is None:
        return config.sigma
    span = max(1, int(round(config.epochs * config.anneal_fraction)))
    t = min(1.0, (epoch - 1) / span)
    return float(config.sigma_start * (config.sigma / config.sigma_start) ** t)


def _batches(n: int, batch: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for s in range(0, n, batch):
        yield perm[s:s + batch]


# --------------------------------------------------------------------------
# synthetic six-mode VAE

def vae_neg_elbo(model: nets.VaeModel, x: np.ndarray, noise: np.ndarray) -> float:
    """Mean negative ELBO per row, including the categorical KL.

    For the constrained model this is the multiplex objective plus ``log K``
    under a uniform prior, which makes it a proper bound comparable to the
    unconstrained model's.
    """
    if len(x) == 0:
        return math.nan
    value = float(nets.constrained_vae_loss(x, model, noise).data)
    if model.head is not None and "prior_logits" not in model.params:
        value += math.log(model.k)
    return value


def train_synthetic(config: ExperimentConfig, seed: int, model_kind: str = "multiplex",
                    out_dir=None) -> RunReport:
    if model_kind not in ("multiplex", "unaware"):
        raise ConfigError(f"unknown synthetic model {model_kind!r}")
    start = time.perf_counter()
    geometry = data.load_six_mode(config.geometry)
    rng = np.random.default_rng(seed)
    x_all, formula, names = data.gen_six_mode(config.n, rng, geometry)
    x_test, _, _ = data.gen_six_mode(config.n_test, np.random.default_rng(TEST_SEED), geometry)
    tr, va = _split(len(x_all), config.val_fraction, rng)
    x_tr, x_va = x_all[tr], x_all[va]
    var_order = make_vars(names)
    head = compile_formula(formula, var_order) if model_kind == "multiplex" else None
    model = nets.VaeModel(len(names), config.latent, config.hidden, config.sigma,
                          config.activation, head, config.learn_prior and head is not None)
    model.init(rng)
    opt = nets.Adam(config.lr)
    eval_rng = np.random.default_rng([seed, 1])
    eval_noise = {s: eval_rng.standard_normal((len(x), config.latent))
                  for s, x in (("val", x_va), ("test", x_test))}
    report = RunReport("synthetic", model_kind, seed, config.n)
    for epoch in range(1, config.epochs + 1):
        for idx in _batches(len(x_tr), config.batch, rng):
            xb = x_tr[idx]
            noise = rng.standard_normal((len(xb), config.latent))
            _step(model.params, opt, lambda P: nets.constrained_vae_loss(xb, model, noise, P))
        for split, x in (("val", x_va), ("test", x_test)):
            if len(x) == 0:
                continue
            rec = nets.posterior_reconstruct(model, x, np.random.default_rng([seed, 2, epoch]))
            report.log(epoch, split, vae_neg_elbo(model, x, eval_noise[split]),
                       data.satisfaction_rate(rec, formula, var_order))
    samples, _ = nets.sample_prior(model, config.n_samples, np.random.default_rng([seed, 3]))
    report.final = {
        "val_neg_elbo": report.last("val", "neg_elbo"),
        "test_neg_elbo": report.last("test", "neg_elbo"),
        "test_satisfaction": report.last("test", "satisfaction"),
        "prior_sample_satisfaction": data.satisfaction_rate(samples, formula, var_order),
        "log_k": math.log(model.k),
        "formula": to_text(formula),
    }
    report.wall_time = time.perf_counter() - start
    if out_dir is not None:
        write_report(report, out_dir, config)
        write_samples(os.path.join(out_dir, "samples.csv"), samples, names)
        nets.save_checkpoint(os.path.join(out_dir, "checkpoint.json"), model, seed=seed)
    report.model_obj = model
    return report


def unaware_vae(config: ExperimentConfig, seed: int, out_dir=None) -> RunReport:
    """Same VAE and budget without a constraint head."""
    return train_synthetic(config, seed, "unaware", out_dir)


# --------------------------------------------------------------------------
# structured sum

def structsum_neg_elbo(model: nets.StructSumModel, quads: np.ndarray, noise) -> float:
    if len(quads) == 0:
        return math.nan
    value = float(nets.structured_sum_loss(quads, model, noise).data)
    return value + math.log(len(model.table))


def train_structsum_seed(config: ExperimentConfig, seed: int, quads_tr, quads_va
                         ) -> tuple[nets.StructSumModel, RunReport]:
    """One seed on fixed data; label accuracy is not computed here."""
    rng = np.random.default_rng(seed)
    model = nets.StructSumModel(config.base, config.latent, config.hidden,
                                config.gate_hidden, config.sigma, config.activation)
    model.init(rng)
    opt = nets.Adam(config.lr)
    val_noise = np.random.default_rng([seed, 1]).standard_normal((len(quads_va), 4, config.latent))
    report = RunReport("structsum", "multiplex", seed, config.n)
    for epoch in range(1, config.epochs + 1):
        model.sigma = sigma_at(config, epoch)
        for idx in _batches(len(quads_tr), config.batch, rng):
            qb = quads_tr[idx]
            noise = rng.standard_normal((len(qb), 4, config.latent))
            _step(model.params, opt, lambda P: nets.structured_sum_loss(qb, model, noise, P))
        # held-out bound at the target scale; every inferred tuple is valid
        model.sigma = config.sigma
        report.log(epoch, "val", structsum_neg_elbo(model, quads_va, val_noise), 1.0)
    return model, report


def train_structsum(config: ExperimentConfig, out_dir=None) -> dict:
    """Best of ``config.seeds`` by validation ELBO, scored once on the test key."""
    start = time.perf_counter()
    data_rng = np.random.default_rng(config.seeds[0])
    quads, _train_key = data.gen_struct_sum(config.n, config.base, data_rng)
    tr, va = _split(len(quads), config.val_fraction, data_rng)
    test_quads, test_key = data.gen_struct_sum(config.n_test, config.base,
                                               np.random.default_rng(TEST_SEED))
    runs = []
    for seed in config.seeds:
        model, report = train_structsum_seed(config, seed, quads[tr], quads[va])
        runs.append((report.last("val", "neg_elbo"), seed, model, report))
    best_val, best_seed, best, report = min(runs, key=lambda r: (r[0], r[1]))
    item_acc, tuple_acc = test_key.score(best.infer(test_quads))
    noise = np.random.default_rng([best_seed, 4]).standard_normal((len(test_quads), 4, config.latent))
    report.log(config.epochs, "test", structsum_neg_elbo(best, test_quads, noise), 1.0,
               item_acc, tuple_acc)
    report.final = {"best_seed": best_seed, "val_neg_elbo": best_val,
                    "label_accuracy": item_acc, "tuple_accuracy": tuple_acc,
                    "seed_val_neg_elbo": {str(s): v for v, s, _, _ in runs}}
    report.wall_time = time.perf_counter() - start
    if out_dir is not None:
        write_report(report, out_dir, config)
        nets.save_checkpoint(os.path.join(out_dir, "checkpoint.json"), best, seed=best_seed)
    return {"report": report, "model": best, "runs": runs}


# --------------------------------------------------------------------------
# hierarchy

def group_satisfaction(probs: np.ndarray, groups, alpha: float) -> float:
    """Fraction of rows whose probability mass on some group exceeds alpha."""
    mass = np.stack([probs[:, list(g)].sum(axis=1) for g in groups], axis=1)
    return float((mass > alpha).any(axis=1).mean())


def _hierarchy_metrics(model: nets.HierarchyModel, x, y, g, alpha):
    probs = model.predict_proba(x)
    pred = probs.argmax(axis=1)
    loss = float(model.loss(nets.lift(model.params), x, y).data)
    return (loss, group_satisfaction(probs, model.groups, alpha),
            float((pred == y).mean()), float((model.class_group[pred] == g).mean()))


def train_hierarchy(config: ExperimentConfig, seed: int, mode: str = "multiplex",
                    out_dir=None) -> RunReport:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    x, y, g = data.gen_hierarchy(config.n, config.groups, config.per_group, rng)
    x_te, y_te, g_te = data.gen_hierarchy(config.n_test, config.groups, config.per_group,
                                          np.random.default_rng(TEST_SEED))
    tr, va = _split(len(x), config.val_fraction, rng)
    groups = data.hierarchy_groups(config.groups, config.per_group)
    model = nets.HierarchyModel(x.shape[1], groups, mode, config.alpha, config.hidden,
                                config.activation)
    model.init(rng)
    opt = nets.Adam(config.lr)
    report = RunReport("hierarchy", mode, seed, config.n)
    for epoch in range(1, config.epochs + 1):
        for idx in _batches(len(tr), config.batch, rng):
            b = tr[idx]
            _step(model.params, opt, lambda P: model.loss(P, x[b], y[b]))
        for split, (xs, ys, gs) in (("val", (x[va], y[va], g[va])),
                                    ("test", (x_te, y_te, g_te))):
            if len(xs):
                report.log(epoch, split, *_hierarchy_metrics(model, xs, ys, gs, config.alpha))
    report.final = {k: report.last("test", c) for k, c in
                    (("test_loss", "neg_elbo"), ("test_satisfaction", "satisfaction"),
                     ("class_accuracy", "class_acc"), ("group_accuracy", "group_acc"))}
    report.wall_time = time.perf_counter() - start
    if out_dir is not None:
        write_report(report, out_dir, config)
        nets.save_checkpoint(os.path.join(out_dir, "checkpoint.json"), model, seed=seed)
    return report


def vanilla_classifier(config: ExperimentConfig, seed: int, out_dir=None) -> RunReport:
    return train_hierarchy(config, seed, "vanilla", out_dir)


def hierarchical_classifier(config: ExperimentConfig, seed: int, out_dir=None) -> RunReport:
    """Predicts the group, then the class within it."""
    return train_hierarchy(config, seed, "hierarchical", out_dir)
