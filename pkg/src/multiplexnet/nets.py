"""Networks and losses built on the tape engine.

Parameters live in plain ``dict[str, np.ndarray]``; a training step lifts
them onto a fresh :class:`~multiplexnet.grad.Tape`, evaluates a loss and
hands the gradients to :class:`Adam`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import grad as G
from .layerc import MultiplexHead, TransformProgram, apply, compile_formula, compile_group_margin
from .logic import parse, to_text

__all__ = [
    "Mlp", "Adam", "GaussianPosterior", "GatingDistribution", "VaeModel",
    "StructSumModel", "HierarchyModel", "lift", "reparameterize",
    "vae_elbo_term", "multiplex_loss", "constrained_vae_loss",
    "structured_sum_loss", "hierarchical_ce_loss", "sample_prior",
    "posterior_reconstruct", "save_checkpoint", "load_checkpoint",
]

LOG_2PI = math.log(2 * math.pi)


def lift(params: dict[str, np.ndarray], tape: G.Tape | None = None) -> dict[str, G.Value]:
    """Wrap parameters as tape variables, or as constants without a tape."""
    if tape is None:
        return {k: G.Value(v) for k, v in params.items()}
    return {k: tape.variable(v) for k, v in params.items()}


@dataclass
class Mlp:
    prefix: str
    sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if self.activation not in ("tanh", "softplus"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            limit = math.sqrt(6.0 / (n_in + n_out))
            params[f"{self.prefix}.W{i}"] = rng.uniform(-limit, limit, (n_out, n_in))
            params[f"{self.prefix}.b{i}"] = np.zeros(n_out)
        return params

    def __call__(self, P: dict[str, G.Value], x) -> G.Value:
        act = G.tanh if self.activation == "tanh" else G.softplus
        h = x
        last = len(self.sizes) - 2
        for i in range(last + 1):
            h = G.affine(P[f"{self.prefix}.W{i}"], P[f"{self.prefix}.b{i}"], h)
            if i < last:
                h = act(h)
        return h


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --------------------------------------------------------------------------
# distributions and loss terms

@dataclass
class GaussianPosterior:
    mu: G.Value
    log_var: G.Value

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise G.ShapeError("mu and log_var shapes differ")


@dataclass
class GatingDistribution:
    logits: G.Value

    @property
    def log_probs(self) -> G.Value:
        return G.log_softmax(self.logits)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    @property
    def k(self) -> int:
        return self.logits.shape[-1]


def reparameterize(post: GaussianPosterior, noise) -> G.Value:
    noise = G.as_value(noise)
    if noise.shape != post.mu.shape:
        raise G.ShapeError(f"noise shape {noise.shape} != latent shape {post.mu.shape}")
    return G.add(post.mu, G.mul(G.exp(G.mul(post.log_var, 0.5)), noise))


def gaussian_nll(x, mean, sigma: float) -> G.Value:
    """-log N(x; mean, sigma^2 I), summed over the last axis."""
    if not sigma > 0:
        raise ValueError(f"likelihood scale must be positive, got {sigma}")
    x, mean = G.as_value(x), G.as_value(mean)
    d = x.shape[-1]
    sq = G.sum(G.square(G.sub(x, mean)), axis=-1)
    return G.add(G.mul(sq, 0.5 / sigma ** 2), d * (math.log(sigma) + 0.5 * LOG_2PI))


def kl_standard_normal(post: GaussianPosterior) -> G.Value:
    """KL(q || N(0, I)) = -0.5 * sum(1 + log_var - mu^2 - exp(log_var))."""
    inner = G.sub(G.sub(G.add(post.log_var, 1.0), G.square(post.mu)), G.exp(post.log_var))
    return G.mul(G.sum(inner, axis=-1), -0.5)


def vae_elbo_term(x, mean, post: GaussianPosterior, sigma: float) -> G.Value:
    """Negative ELBO of one VAE pass: Gaussian reconstruction plus KL.

    Per row for batched input, a scalar for a single sample.
    """
    return G.add(gaussian_nll(x, mean, sigma), kl_standard_normal(post))


def multiplex_loss(losses, gating: GatingDistribution,
                   prior_logits: G.Value | None = None) -> G.Value:
    """``sum_k pi_k * (L_k + log pi_k)`` over the last axis.

    With ``prior_logits`` the term ``- log p(k)`` is included as well; the
    uniform-prior objective differs from the full bound only by ``log K``.
    """
    losses = G.as_value(losses)
    if losses.shape[-1] != gating.k:
        raise G.ShapeError(f"{losses.shape[-1]} losses for {gating.k} gating outputs")
    log_pi = gating.log_probs
    inner = G.add(losses, log_pi)
    if prior_logits is not None:
        log_prior = G.log_softmax(prior_logits)
        if losses.ndim == 2:
            log_prior = G.stack([log_prior] * losses.shape[0], axis=0)
        inner = G.sub(inner, log_prior)
    return G.sum(G.mul(G.exp(log_pi), inner), axis=-1)


# --------------------------------------------------------------------------
# constrained VAE

@dataclass
class VaeModel:
    n_vars: int
    latent: int = 15
    hidden: tuple[int, ...] = (50,)
    sigma: float = 0.1
    activation: str = "tanh"
    head: MultiplexHead | None = None
    learn_prior: bool = False
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.encoder = Mlp("enc", (self.n_vars, *self.hidden, 2 * self.latent + self.k),
                           self.activation)
        self.decoder = Mlp("dec", (self.latent, *self.hidden, self.n_vars), self.activation)
        if self.head is not None and len(self.head.var_order) != self.n_vars:
            raise ValueError("head variables do not match the decoder output")

    @property
    def k(self) -> int:
        return self.head.k if self.head is not None else 1

    def init(self, rng: np.random.Generator) -> "VaeModel":
        self.params = {**self.encoder.init(rng), **self.decoder.init(rng)}
        # start the gating logits at zero so every branch begins equally likely
        last = len(self.encoder.sizes) - 2
        self.params[f"enc.W{last}"][2 * self.latent:] = 0.0
        if self.learn_prior:
            self.params["prior_logits"] = np.zeros(self.k)
        return self

    def encode(self, P, x) -> tuple[GaussianPosterior, GatingDistribution]:
        h = self.encoder(P, x)
        lat = self.latent
        mu = G.gather_columns(h, np.arange(lat))
        log_var = G.gather_columns(h, np.arange(lat, 2 * lat))
        logits = G.gather_columns(h, np.arange(2 * lat, 2 * lat + self.k))
        return GaussianPosterior(mu, log_var), GatingDistribution(logits)

    def decode(self, P, z) -> G.Value:
        return self.decoder(P, z)

    def constrain(self, raw) -> list:
        if self.head is None:
            return [raw]
        return self.head.apply_all(raw)

    def per_term_losses(self, P, x, noise):
        post, gating = self.encode(P, x)
        z = reparameterize(post, noise)
        raw = self.decode(P, z)
        kl = kl_standard_normal(post)
        losses = [G.add(gaussian_nll(x, m, self.sigma), kl) for m in self.constrain(raw)]
        return G.stack(losses, axis=-1), gating

    def to_json(self) -> dict:
        return {
            "kind": "vae", "n_vars": self.n_vars, "latent": self.latent,
            "hidden": list(self.hidden), "sigma": self.sigma,
            "activation": self.activation, "learn_prior": self.learn_prior,
            "formula": to_text(self.head.formula) if self.head is not None else None,
            "var_order": [v.name for v in self.head.var_order] if self.head is not None else None,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "VaeModel":
        head = None
        if d.get("formula") is not None:
            head = compile_formula(parse(d["formula"], d["var_order"]), d["var_order"])
        model = cls(d["n_vars"], d["latent"], tuple(d["hidden"]), d["sigma"],
                    d["activation"], head, d.get("learn_prior", False))
        model.params = {k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()}
        return model


def constrained_vae_loss(x, model: VaeModel, noise, P=None) -> G.Value:
    """Batch mean of the marginalized multiplex objective."""
    P = lift(model.params) if P is None else P
    losses, gating = model.per_term_losses(P, x, noise)
    if model.head is None:
        per_row = G.take(losses, 0)
    else:
        per_row = multiplex_loss(losses, gating, P.get("prior_logits"))
    return G.mean(per_row)


def posterior_reconstruct(model: VaeModel, x: np.ndarray, rng: np.random.Generator
                          ) -> np.ndarray:
    """Decode one posterior sample per row through its most probable branch."""
    P = lift(model.params)
    post, gating = model.encode(P, x)
    noise = rng.standard_normal(post.mu.shape)
    raw = model.decode(P, reparameterize(post, noise)).data
    outs = np.stack([np.asarray(o.data if isinstance(o, G.Value) else o)
                     for o in model.constrain(raw)], axis=0)
    k = np.argmax(gating.logits.data, axis=-1)
    return outs[k, np.arange(len(x))]


def sample_prior(model: VaeModel, count: int, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """z ~ N(0, I), branch k from the prior; returns (samples, k)."""
    z = rng.standard_normal((count, model.latent))
    raw = model.decode(lift(model.params), z).data
    if "prior_logits" in model.params:
        logits = model.params["prior_logits"]
        p = np.exp(logits - logits.max())
        p /= p.sum()
    else:
        p = np.full(model.k, 1.0 / model.k)
    k = rng.choice(model.k, size=count, p=p) if model.k > 1 else np.zeros(count, dtype=int)
    outs = np.stack([np.asarray(o) for o in model.constrain(raw)], axis=0)
    return outs[k, np.arange(count)], k


# --------------------------------------------------------------------------
# structured sum

def valid_tuples(base: int) -> np.ndarray:
    """Rows ``(i, j, carry, units)`` with ``i + j == carry * base + units``."""
    if base < 2:
        raise ValueError("base must be at least 2")
    rows = [(i, j, int(i + j >= base), (i + j) % base)
            for i in range(base) for j in range(base)]
    return np.array(rows, dtype=np.intp)


@dataclass
class StructSumModel:
    """Class-conditional item VAE plus a categorical over valid label tuples.

    Digit symbols are classes ``0..base-1``; carry symbols are the separate
    classes ``base + c``.
    """

    base: int = 4
    latent: int = 2
    hidden: tuple[int, ...] = (64,)
    gate_hidden: tuple[int, ...] = (64,)
    sigma: float = 0.1
    activation: str = "tanh"
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.n_symbols = self.base + max(2, self.base)
        self.table = valid_tuples(self.base)
        self.encoder = Mlp("enc", (2, *self.hidden, 2 * self.latent), self.activation)
        self.decoder = Mlp("dec", (self.latent + self.n_symbols, *self.hidden, 2),
                           self.activation)
        # per-item symbol scores; a tuple's logit sums the scores of its four labels
        self.gate = Mlp("gate", (2, *self.gate_hidden, self.n_symbols), self.activation)

    def init(self, rng: np.random.Generator) -> "StructSumModel":
        self.params = {**self.decoder.init(rng), **self.gate.init(rng)}
        if self.latent:
            self.params.update(self.encoder.init(rng))
        last = len(self.gate.sizes) - 2
        self.params[f"gate.W{last}"][:] = 0.0
        return self

    def symbol_columns(self) -> np.ndarray:
        """Class index used by each tuple slot; carry maps to ``base + c``."""
        cols = self.table.copy()
        cols[:, 2] += self.base
        return cols

    def item_losses(self, P, x_item, noise, symbols) -> G.Value:
        """V(x, y) for each candidate class y in ``symbols``: shape (B, len)."""
        n = x_item.shape[0]
        if self.latent:
            h = self.encoder(P, x_item)
            post = GaussianPosterior(G.gather_columns(h, np.arange(self.latent)),
                                     G.gather_columns(h, np.arange(self.latent, 2 * self.latent)))
            z = reparameterize(post, noise)
            kl = kl_standard_normal(post)
        per_class = []
        for y in symbols:
            onehot = G.constant(np.zeros((n, self.n_symbols)))
            onehot.data[:, y] = 1.0
            if self.latent:
                mean = self.decoder(P, G.concat([z, onehot], axis=-1))
                per_class.append(G.add(gaussian_nll(x_item, mean, self.sigma), kl))
            else:
                # no continuous latent: a class-conditional Gaussian
                per_class.append(gaussian_nll(x_item, self.decoder(P, onehot), self.sigma))
        return G.stack(per_class, axis=-1)

    def gating(self, P, quads: np.ndarray) -> GatingDistribution:
        """q(tuple | quadruple), restricted to the valid tuples."""
        cols = self.symbol_columns()
        logits = None
        for n in range(4):
            scores = G.gather_columns(self.gate(P, quads[:, n]), cols[:, n])
            logits = scores if logits is None else G.add(logits, scores)
        return GatingDistribution(logits)

    def infer(self, quads: np.ndarray) -> np.ndarray:
        """Most probable label tuple per quadruple, as (i, j, carry, units)."""
        logits = self.gating(lift(self.params), quads).logits.data
        return self.table[np.argmax(logits, axis=-1)]

    def to_json(self) -> dict:
        return {"kind": "structsum", "base": self.base, "latent": self.latent,
                "hidden": list(self.hidden), "gate_hidden": list(self.gate_hidden),
                "sigma": self.sigma, "activation": self.activation,
                "params": {k: v.tolist() for k, v in self.params.items()}}


def structured_sum_loss(quads: np.ndarray, model: StructSumModel, noise: np.ndarray,
                        P=None) -> G.Value:
    """Batch mean of ``sum_h pi_h [V(x1,i)+V(x2,j)+V(x3,carry)+V(x4,units) + log pi_h]``.

    ``quads`` has shape (B, 4, 2); ``noise`` has shape (B, 4, latent).
    """
    if len(model.table) == 0:
        raise ValueError("empty assignment table")
    P = lift(model.params) if P is None else P
    cols = model.symbol_columns()
    digits = list(range(model.base))
    carries = [model.base, model.base + 1]
    total = None
    for n in range(4):
        symbols = carries if n == 2 else digits
        v = model.item_losses(P, quads[:, n], noise[:, n], symbols)
        local = cols[:, n] - (model.base if n == 2 else 0)
        picked = G.gather_columns(v, local)
        total = picked if total is None else G.add(total, picked)
    return G.mean(multiplex_loss(total, model.gating(P, quads)))


# --------------------------------------------------------------------------
# hierarchical classification

@dataclass
class HierarchyModel:
    """MLP classifier; ``mode`` is 'multiplex', 'vanilla' or 'hierarchical'."""

    n_features: int
    groups: tuple[tuple[int, ...], ...]
    mode: str = "multiplex"
    alpha: float = 0.95
    hidden: tuple[int, ...] = (64,)
    activation: str = "tanh"
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("multiplex", "vanilla", "hierarchical"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.n_classes = sum(len(g) for g in self.groups)
        self.class_group = np.empty(self.n_classes, dtype=np.intp)
        for gi, g in enumerate(self.groups):
            self.class_group[list(g)] = gi
        extra = len(self.groups) if self.mode != "vanilla" else 0
        self.net = Mlp("net", (self.n_features, *self.hidden, self.n_classes + extra),
                       self.activation)
        self.programs = (compile_group_margin(self.groups, self.alpha)
                         if self.mode == "multiplex" else [])

    def init(self, rng: np.random.Generator) -> "HierarchyModel":
        self.params = self.net.init(rng)
        return self

    def split(self, P, x) -> tuple[G.Value, G.Value | None]:
        h = self.net(P, x)
        logits = G.gather_columns(h, np.arange(self.n_classes))
        if self.mode == "vanilla":
            return logits, None
        extra = G.gather_columns(h, np.arange(self.n_classes, self.n_classes + len(self.groups)))
        return logits, extra

    def loss(self, P, x, labels) -> G.Value:
        logits, extra = self.split(P, x)
        if self.mode == "vanilla":
            return G.mean(G.neg(G.pick(G.log_softmax(logits), labels)))
        if self.mode == "multiplex":
            return G.mean(hierarchical_ce_loss(logits, labels, self.programs,
                                               GatingDistribution(extra)))
        group_lp = G.pick(G.log_softmax(extra), self.class_group[labels])
        within = []
        for g in self.groups:
            within.append(G.log_softmax(G.gather_columns(logits, list(g))))
        # log p(class | its group) for every class, in class order
        cls_lp = G.concat(within, axis=-1)
        order = np.argsort(np.concatenate([list(g) for g in self.groups]))
        cls_lp = G.gather_columns(cls_lp, order)
        return G.mean(G.neg(G.add(group_lp, G.pick(cls_lp, labels))))

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Class distribution of the model's final prediction."""
        P = lift(self.params)
        logits, extra = self.split(P, x)
        if self.mode == "vanilla":
            return G.softmax(logits).data
        if self.mode == "multiplex":
            k = np.argmax(extra.data, axis=-1)
            outs = np.stack([apply(p, logits.data) for p in self.programs], axis=0)
            chosen = outs[k, np.arange(len(x))]
            return G.softmax(G.Value(chosen)).data
        k = np.argmax(extra.data, axis=-1)
        probs = np.zeros((len(x), self.n_classes))
        for gi, g in enumerate(self.groups):
            rows = k == gi
            if rows.any():
                sub = logits.data[rows][:, list(g)]
                sub = np.exp(sub - sub.max(axis=1, keepdims=True))
                probs[np.ix_(rows, list(g))] = sub / sub.sum(axis=1, keepdims=True)
        return probs

    def to_json(self) -> dict:
        return {"kind": "hierarchy", "mode": self.mode, "n_features": self.n_features,
                "groups": [list(g) for g in self.groups], "alpha": self.alpha,
                "hidden": list(self.hidden), "activation": self.activation,
                "params": {k: v.tolist() for k, v in self.params.items()}}


def hierarchical_ce_loss(logits, labels, programs: Sequence[TransformProgram],
                         gating: GatingDistribution) -> G.Value:
    """Per-row ``sum_k pi_k (CE(y_k, label) + log pi_k)`` with y_k the
    group-k constrained logits."""
    logits = G.as_value(logits)
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= logits.shape[-1]):
        raise IndexError("label out of range")
    if gating.k != len(programs):
        raise G.ShapeError(f"{gating.k} gating outputs for {len(programs)} groups")
    ce = [G.neg(G.pick(G.log_softmax(apply(p, logits)), labels)) for p in programs]
    return multiplex_loss(G.stack(ce, axis=-1), gating)


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, model, **extra):
    payload = {**model.to_json(), **extra}
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        d = json.load(fh)
    if d["kind"] == "vae":
        return VaeModel.from_json(d), d
    if d["kind"] == "structsum":
        m = StructSumModel(d["base"], d["latent"], tuple(d["hidden"]),
                           tuple(d["gate_hidden"]), d["sigma"], d["activation"])
    elif d["kind"] == "hierarchy":
        m = HierarchyModel(d["n_features"], tuple(tuple(g) for g in d["groups"]),
                           d["mode"], d["alpha"], tuple(d["hidden"]), d["activation"])
    else:
        raise ValueError(f"unknown checkpoint kind {d['kind']!r}")
    m.params = {k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()}
    return m, d
