"""Acceptance checks. Each test prints one ``CRITERION n: PASS|FAIL`` line to
the terminal, then asserts the same condition."""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fedsec.config import load_config
from fedsec.defense import agg_comed, agg_cotmed, agg_geomed, agg_krum, agg_normbound, agg_rsa
from fedsec.harness import moving_average, run_experiment
from fedsec.nn import DrqnSpec, MlpSpec, ParamVector, drqn_backward, mlp_backward
from fedsec.selection import action_count, action_decode, action_encode
from fedsec.simulation import Simulation

import oracles
from conftest import central_difference

ROOT = Path(__file__).resolve().parents[1]
CANONICAL = ROOT / "configs" / "canonical.toml"


@pytest.fixture
def report(capsys, request):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return emit


def canonical():
    return load_config(CANONICAL)


# -- 1 ------------------------------------------------------------------------------------------

def _grad_ok(analytic, numeric, rel=1e-4, floor=1e-7):
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((err <= rel * scale) | (err <= floor))), float(err.max())


def test_criterion_1_gradients(report):
    started = time.perf_counter()
    failures, worst, cases = [], 0.0, 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        spec = MlpSpec(int(rng.integers(2, 6)), tuple(int(w) for w in rng.integers(2, 6, rng.integers(1, 3))),
                       int(rng.integers(2, 5)))
        p = ParamVector.zeros(spec.shape_map)
        p = p.with_values(rng.normal(0, 0.5, p.values.size))
        x = rng.normal(size=(6, spec.input_dim))
        y = rng.integers(0, spec.output_dim, 6)
        _, g = mlp_backward(p, spec, x, y)
        ok, err = _grad_ok(g.values, central_difference(lambda q: mlp_backward(q, spec, x, y)[0], p))
        cases += 1
        worst = max(worst, err)
        if not ok:
            failures.append(f"mlp seed {seed}")
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        spec = DrqnSpec(int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 5)),
                        int(rng.integers(2, 5)), int(rng.integers(1, 4)))
        p = ParamVector.zeros(spec.shape_map)
        p = p.with_values(rng.normal(0, 0.8, p.values.size))
        seqs = rng.normal(size=(3, spec.sequence_len, spec.obs_action_dim))
        targets = rng.normal(size=3)
        actions = rng.integers(0, spec.action_count, 3)
        _, g = drqn_backward(p, spec, seqs, targets, actions)
        ok, err = _grad_ok(g.values, central_difference(
            lambda q: drqn_backward(q, spec, seqs, targets, actions)[0], p))
        cases += 1
        worst = max(worst, err)
        if not ok:
            failures.append(f"drqn seed {seed}")
    elapsed = time.perf_counter() - started
    ok = not failures and elapsed < 60
    report(1, ok, f"{cases} instances, failures {failures or 'none'}, "
                  f"worst abs err {worst:.2e}, {elapsed:.1f}s")
    assert ok


# -- 2 ------------------------------------------------------------------------------------------

def test_criterion_2_aggregator_oracles(report):
    started = time.perf_counter()
    mismatches = {k: 0 for k in ("comed", "cotmed", "krum", "normbound", "rsa", "geomed")}
    cases = 120
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(5, 12))
        X = rng.normal(0, rng.uniform(0.1, 10), size=(m, int(rng.integers(1, 40))))
        if seed % 4 == 0:
            X[0] *= 20
        trim = math.ceil(m / 4)
        f = int(rng.integers(0, m - 2))
        mismatches["comed"] += not np.array_equal(agg_comed(X), oracles.coord_median(X))
        mismatches["cotmed"] += not np.array_equal(agg_cotmed(X, trim), oracles.trimmed_mean(X, trim))
        mismatches["krum"] += not np.array_equal(agg_krum(X, f), X[oracles.krum_index(X, f)])
        mismatches["normbound"] += not np.array_equal(
            agg_normbound(X), oracles.clip_mean(X, oracles.median_norm(X)))
        mismatches["rsa"] += not np.array_equal(agg_rsa(X, 0.01), oracles.sign_mean(X, 0.01))

        P = rng.normal(0, rng.uniform(0.5, 5), size=(m, 2))
        z = agg_geomed(P, tol=1e-10, max_iter=10_000)
        grid = oracles.grid_min_objective(P, 400)
        mismatches["geomed"] += not oracles.sum_dist(z, P) <= grid + 1e-9 * max(1.0, grid)
    elapsed = time.perf_counter() - started
    ok = not any(mismatches.values()) and elapsed < 60
    report(2, ok, f"{cases} cases per aggregator, mismatches {mismatches}, {elapsed:.1f}s")
    assert ok


# -- 3, 4, 7 ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def criterion3_runs(tmp_path_factory):
    cfg = canonical()
    out = tmp_path_factory.mktemp("c3")
    started = time.perf_counter()
    runs = {
        "clean": run_experiment(cfg.replace(attack__enabled=False, defense__strategy="fedavg"),
                                out / "clean"),
        "fedavg": run_experiment(cfg.replace(defense__strategy="fedavg"), out / "fedavg"),
        "vba": run_experiment(cfg, out / "vba", workers=1),
    }
    return runs, time.perf_counter() - started, out


def test_criterion_3_vba_effectiveness(report, criterion3_runs):
    runs, elapsed, _ = criterion3_runs
    clean = runs["clean"].records[-1].accuracy
    fedavg = runs["fedavg"].records[-1].accuracy
    vba = runs["vba"].records[-1].accuracy
    ok = abs(vba - clean) <= 0.02 and fedavg <= clean - 0.15 and elapsed < 300
    report(3, ok, f"final accuracy clean FedAvg {clean:.4f}, VBA {vba:.4f}, "
                  f"attacked FedAvg {fedavg:.4f}; three runs {elapsed:.0f}s")
    assert ok


def test_criterion_4_verdict_quality(report, criterion3_runs):
    runs, _, _ = criterion3_runs
    poisoned = caught = benign = flagged = 0
    for rec in runs["vba"].records:
        for ed, label in zip(rec.selected, rec.verdicts.split()):
            if ed in rec.attacked:
                poisoned += 1
                caught += label == "P"
            else:
                benign += 1
                flagged += label != "B"
    recall = caught / poisoned
    false_rate = flagged / benign
    ok = recall >= 0.95 and false_rate <= 0.10
    report(4, ok, f"poisoned labeled P {caught}/{poisoned} ({recall:.3f}), "
                  f"benign labeled non-B {flagged}/{benign} ({false_rate:.3f})")
    assert ok


def test_criterion_7_determinism_across_workers(report, criterion3_runs, tmp_path):
    _, _, out = criterion3_runs
    run_experiment(canonical(), tmp_path / "eight", workers=8)
    same = {name: (out / "vba" / name).read_bytes() == (tmp_path / "eight" / name).read_bytes()
            for name in ("rounds.csv", "tasks.csv")}
    ok = all(same.values())
    report(7, ok, f"1 worker vs 8 workers byte-identical: {same}")
    assert ok


# -- 5 ------------------------------------------------------------------------------------------

def test_criterion_5_drl_dominance(report, tmp_path):
    cfg = canonical().replace(rounds_per_task=1000, task_count=6)
    started = time.perf_counter()
    util = {}
    for policy in ("drqn", "random"):
        res = run_experiment(cfg.replace(selection__policy=policy), tmp_path / policy)
        util[policy] = np.array([r.utility for r in res.records])
    elapsed = time.perf_counter() - started
    drl, rnd = util["drqn"][-500:].mean(), util["random"][-500:].mean()
    ma = moving_average(util["drqn"], 100)
    tail = ma[-len(ma) // 3:]
    slope = float(np.polyfit(np.arange(tail.size), tail, 1)[0])
    gain = (drl - rnd) / abs(rnd)
    ok = gain >= 0.20 and slope >= 0 and elapsed < 1800
    report(5, ok, f"final-500 mean reward DRQN {drl:.4f} vs random {rnd:.4f} "
                  f"({100 * gain:+.1f}%), MA slope over last third {slope:+.2e}/round, "
                  f"{elapsed:.0f}s")
    assert ok


# -- 6 ------------------------------------------------------------------------------------------

def test_criterion_6_action_space(report):
    subsets = oracles.subsets(10, 5)
    good = sum(action_decode(a, 10, 5) == s and action_encode(s, 10, 5) == a
               for a, s in enumerate(subsets))
    ok = action_count(10, 5) == 252 and good == len(subsets) == 252
    report(6, ok, f"C(10,5) = {action_count(10, 5)}, {good}/252 round trips in lexicographic order")
    assert ok


# -- 8 ------------------------------------------------------------------------------------------

MNIST_DIR = Path(os.environ.get("FEDSEC_MNIST_DIR", ROOT / "data" / "mnist"))
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


@pytest.mark.slow
@pytest.mark.skipif(not all((MNIST_DIR / f).is_file() for f in MNIST_FILES),
                    reason=f"MNIST IDX files not found in {MNIST_DIR} (set FEDSEC_MNIST_DIR)")
@pytest.mark.parametrize("vulnerable", [3, 9])
def test_criterion_8_mnist(report, tmp_path, vulnerable):
    base = load_config(ROOT / "configs" / "mnist.toml", check_paths=False).replace(
        task_count=1, selection__policy="random", topology__vulnerable_count=vulnerable,
        data__train_images=str(MNIST_DIR / MNIST_FILES[0]),
        data__train_labels=str(MNIST_DIR / MNIST_FILES[1]),
        data__test_images=str(MNIST_DIR / MNIST_FILES[2]),
        data__test_labels=str(MNIST_DIR / MNIST_FILES[3]))
    vba = run_experiment(base, tmp_path / "vba").records[-1].accuracy
    fedavg = run_experiment(base.replace(defense__strategy="fedavg", rounds_per_task=200),
                            tmp_path / "fedavg").records[-1].accuracy
    ok = vba >= 0.97 and fedavg < 0.5
    report(8, ok, f"{vulnerable} vulnerable EDs: VBA test accuracy {vba:.4f}, "
                  f"unprotected FedAvg {fedavg:.4f}")
    assert ok
