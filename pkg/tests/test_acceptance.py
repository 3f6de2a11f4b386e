"""Acceptance checks. Each prints one ``CRITERION n: PASS|FAIL`` line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; they are also repeated in the pytest terminal summary.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from multiplexnet import cli, nets
from multiplexnet import grad as G
from multiplexnet.bench import data, train
from multiplexnet.dnf import to_dnf
from multiplexnet.layerc import (GroupMargin, Interval, LowerBound, NoFeasibleTerm, Passthrough,
                                 SetConst, UpperBound, apply, compile_formula,
                                 compile_group_margin)
from multiplexnet.logic import evaluate, make_vars, parse
from multiplexnet.randgen import random_assignment, random_formula

try:
    from conftest import ACCEPTANCE
except ImportError:  # run as a script
    ACCEPTANCE = {}


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE[n] = line
    print(line, flush=True)
    assert ok, line


def test_criterion_1_satisfaction_by_construction():
    start = time.perf_counter()
    rng = np.random.default_rng(1001)
    formulas = satisfied = total = 0
    while formulas < 1000:
        f, vs = random_formula(rng)
        try:
            head = compile_formula(f, vs)
        except NoFeasibleTerm:
            continue
        formulas += 1
        raw = np.concatenate([rng.normal(scale=3, size=(50, len(vs))),
                              rng.uniform(-40, 40, size=(50, len(vs)))])
        branch = rng.integers(head.k, size=len(raw))
        outs = [apply(p, raw) for p in head.programs]
        for i in range(len(raw)):
            row = outs[branch[i]][i]
            total += 1
            satisfied += evaluate(f, {v: Fraction(float(x)) for v, x in zip(vs, row)})
    elapsed = time.perf_counter() - start
    report(1, satisfied == total == 100_000 and elapsed < 120,
           f"{satisfied}/{total} outputs satisfy their formula over {formulas} formulas "
           f"({elapsed:.1f}s, limit 120s)")


def test_criterion_2_dnf_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2002)
    mismatches = checks = 0
    for _ in range(500):
        f, vs = random_formula(rng)
        d = to_dnf(f)
        for _ in range(1000):
            asg = random_assignment(rng, vs)
            checks += 1
            mismatches += evaluate(f, asg) != d.evaluate(asg)
    elapsed = time.perf_counter() - start
    report(2, mismatches == 0 and elapsed < 60,
           f"{checks - mismatches}/{checks} assignments agree ({elapsed:.1f}s, limit 60s)")


def _step_cases():
    xy = make_vars(["x", "y"])
    cases = {
        "Passthrough": ("x > 0 | x <= 0", [0.3, -1.1]),
        "SetConst": ("x = 2 & y > x", [0.3, 0.4]),
        "LowerBound": ("y > x + 1", [0.7, -0.2]),
        "UpperBound": ("y < 2 * x - 1", [0.7, 0.5]),
        "Interval": ("x > -1 & x < 2 & y > x & y < x + 3", [0.3, -0.6]),
    }
    out = []
    for name, (text, point) in cases.items():
        head = compile_formula(parse(text, xy), xy)
        kinds = {type(s).__name__ for p in head.programs for s in p.steps}
        assert name in kinds, (name, kinds)
        out.append((name, head.programs[0], np.array(point)))
    gm = compile_group_margin([[0, 1], [2]], 0.95)[0]
    out.append(("GroupMargin", gm, np.array([0.2, -0.4, 1.3])))
    return out


def test_criterion_3_gradients():
    start = time.perf_counter()
    results = {}

    def record(name, rep):
        results[name] = (rep.max_rel_err, int(rep.skipped.sum()), rep.skipped.size)

    for name, program, point in _step_cases():
        record(name, G.finite_diff_check(lambda r, p=program: G.sum(G.tanh(apply(p, r))), point))

    rng = np.random.default_rng(3)
    _, formula, names = data.gen_six_mode(1, rng)
    order = make_vars(names)
    head = compile_formula(formula, order)
    model = nets.VaeModel(2, latent=3, hidden=(6,), head=head).init(rng)
    x = rng.uniform(-3, 3, size=(2, 2))
    noise = rng.standard_normal((2, 3))
    for key in ("enc.W0", "enc.W1", "dec.W0", "dec.W1"):
        def vae(v, key=key):
            P = nets.lift(model.params)
            P[key] = v
            return nets.constrained_vae_loss(x, model, noise, P)
        record(f"vae:{key}", G.finite_diff_check(vae, model.params[key]))

    losses = rng.normal(size=(3, 5)) * 2
    logits = rng.normal(size=(3, 5))
    record("multiplex:logits", G.finite_diff_check(
        lambda v: G.sum(nets.multiplex_loss(losses, nets.GatingDistribution(v))), logits))
    record("multiplex:losses", G.finite_diff_check(
        lambda v: G.sum(nets.multiplex_loss(v, nets.GatingDistribution(G.Value(logits)))),
        losses))

    progs = compile_group_margin(data.hierarchy_groups(3, 3), 0.95)
    labels = np.array([0, 4, 8, 2])
    joint = rng.normal(size=(4, 12))
    record("hierarchical", G.finite_diff_check(
        lambda v: G.sum(nets.hierarchical_ce_loss(
            G.gather_columns(v, list(range(9))), labels, progs,
            nets.GatingDistribution(G.gather_columns(v, [9, 10, 11])))), joint))

    elapsed = time.perf_counter() - start
    worst = max(r[0] for r in results.values())
    skipped = sum(r[1] for r in results.values())
    coords = sum(r[2] for r in results.values())
    ok = worst <= 1e-4 and skipped == 0 and elapsed < 60
    report(3, ok, f"max relative error {worst:.2e} over {len(results)} checks, "
                  f"{coords} coordinates, {skipped} skipped ({elapsed:.1f}s, limit 60s)")


def test_criterion_4_synthetic_grid(tmp_path):
    start = time.perf_counter()
    cfg = train.ExperimentConfig.default("synthetic")
    every_epoch = True
    unaware_sat = []
    elbo = {}
    for n in (100, 250, 500, 1000):
        for seed in cfg.seeds:
            c = cfg.override(seed=seed, n=n)
            m = train.train_synthetic(c, seed, "multiplex")
            u = train.train_synthetic(c, seed, "unaware")
            sats = (m.series("val", "satisfaction") + m.series("test", "satisfaction")
                    + [m.final["prior_sample_satisfaction"]])
            every_epoch &= all(s == 1.0 for s in sats)
            unaware_sat.append(u.final["test_satisfaction"])
            if n == 1000:
                elbo[seed] = (m.final["test_neg_elbo"], u.final["test_neg_elbo"])
    elapsed = time.perf_counter() - start
    better = all(a <= b for a, b in elbo.values())
    ok = every_epoch and max(unaware_sat) < 1.0 and better and elapsed < 900
    pairs = ", ".join(f"{a:.3f}<={b:.3f}" for a, b in elbo.values())
    report(4, ok, f"multiplex satisfaction 1.0 every epoch={every_epoch}; unaware final "
                  f"satisfaction {min(unaware_sat):.3f}..{max(unaware_sat):.3f}; "
                  f"N=1000 test neg-ELBO multiplex vs unaware {pairs} ({elapsed:.0f}s, limit 900s)")


def test_criterion_5_hierarchy():
    start = time.perf_counter()
    cfg = train.ExperimentConfig.default("hierarchy")
    acc = {"multiplex": [], "vanilla": []}
    sat = []
    for seed in cfg.seeds:
        for mode in acc:
            rep = train.train_hierarchy(cfg, seed, mode)
            acc[mode].append(rep.final["group_accuracy"])
            if mode == "multiplex":
                sat.append(rep.final["test_satisfaction"])
    elapsed = time.perf_counter() - start
    m, v = np.array(acc["multiplex"]), np.array(acc["vanilla"])
    pooled = math.sqrt((m.var(ddof=1) + v.var(ddof=1)) / 2)
    threshold = v.mean() - pooled
    ok = all(s == 1.0 for s in sat) and m.mean() >= threshold and elapsed < 600
    report(5, ok, f"satisfaction {min(sat):.3f}; group accuracy multiplex {m.mean():.4f} "
                  f"vs vanilla {v.mean():.4f} - pooled sd {pooled:.4f} = {threshold:.4f} "
                  f"({elapsed:.0f}s, limit 600s)")


def test_criterion_6_struct_sum():
    start = time.perf_counter()
    cfg = train.ExperimentConfig.default("structsum")
    assert cfg.base == 4 and cfg.n == 2000 and len(cfg.seeds) == 5
    final = train.train_structsum(cfg)["report"].final
    rows = data.enumerate_valid_assignments(4)
    identity = len(rows) == 16 and all(i + j == c * 4 + u for i, j, c, u in rows)
    elapsed = time.perf_counter() - start
    ok = final["label_accuracy"] >= 0.90 and identity and elapsed < 900
    report(6, ok, f"best seed {final['best_seed']} label accuracy "
                  f"{final['label_accuracy']:.4f} (threshold 0.90); "
                  f"{len(rows)} valid tuples, identity holds={identity} "
                  f"({elapsed:.0f}s, limit 900s)")


def test_criterion_7_interval_analytics():
    start = time.perf_counter()
    rng = np.random.default_rng(7007)
    x = make_vars(["x"])
    grid = np.linspace(-30, 30, 1001)[:, None]
    near = monotone = 0
    worst_width = math.inf
    for _ in range(1000):
        width = 10 ** rng.uniform(-3, 3)
        a = float(rng.uniform(-10, 10))
        b = a + width
        head = compile_formula(parse(f"x > {a!r} & x < {b!r}", x), x)
        prog = head.programs[0]
        assert isinstance(prog.steps[0], Interval)
        lo_f = float(Fraction(repr(a)))
        hi_f = float(Fraction(repr(b)))
        ends = apply(prog, np.array([[-30.0], [30.0]]))[:, 0]
        tol = 1e-6 * (hi_f - lo_f)
        if abs(ends[0] - lo_f) <= tol and abs(hi_f - ends[1]) <= tol:
            near += 1
        else:
            worst_width = min(worst_width, hi_f - lo_f)
        monotone += bool(np.all(np.diff(apply(prog, grid)[:, 0]) > 0))
    elapsed = time.perf_counter() - start
    ok = near == 1000 and monotone == 1000 and elapsed < 30
    report(7, ok, f"{near}/1000 reach both endpoints within 1e-6*(b-a), "
                  f"{monotone}/1000 strictly monotone on the grid; smallest failing width "
                  f"{worst_width:.4g} ({elapsed:.1f}s, limit 30s)")


@pytest.mark.parametrize("command", ["train-synthetic", "train-structsum", "train-hierarchy"])
def test_criterion_8_report_bytes(tmp_path, command):
    reports = []
    for tag in ("first", "second"):
        out = tmp_path / tag
        code = cli.main([command, "--seed", "0", "--epochs", "3", "--n", "200",
                         "--out", str(out)])
        assert code == 0
        reports.append({p.relative_to(out): p.read_bytes() for p in out.rglob("report.csv")})
    same = bool(reports[0]) and reports[0] == reports[1]
    line = f"{command}: {len(reports[0])} report.csv file(s) byte-identical={same}"
    test_criterion_8_report_bytes.lines[command] = (same, line)
    if len(test_criterion_8_report_bytes.lines) == 3:
        lines = test_criterion_8_report_bytes.lines
        report(8, all(s for s, _ in lines.values()), "; ".join(l for _, l in lines.values()))
    assert same, line


test_criterion_8_report_bytes.lines = {}


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v", "-s"]))
