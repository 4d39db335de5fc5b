"""Exit criteria. Each test records one PASS/FAIL line, printed in the terminal summary."""
import contextlib
import csv
import math
import os
import textwrap
import time
from dataclasses import replace

import numpy as np
import pytest

from fedsim import (BoundingBox, ClientUpdate, DataConfig, ExperimentConfig, FedAvgMState, ModelKind, ModelSpec,
                    TrainConfig, fedavg_step, fedavgm_step, generate_dataset, iou, partition, run_centralized,
                    run_experiment, run_round)
from fedsim.cli import GAP_HEADER, ROUND_HEADER, SUMMARY_HEADER, main
from fedsim.data import region_histogram, scene_features, scene_targets
from fedsim.models import init_params, loss_and_grad
from fedsim.orchestrator import prepare_data

RESULTS: dict[int, str] = {}
RESULT_DETAIL: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number: int, title: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        RESULTS[number] = f"FAIL  {number}. {title} ({time.perf_counter() - start:.2f}s): {exc}"
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= budget_s:
        RESULTS[number] = f"FAIL  {number}. {title}: took {elapsed:.2f}s, budget {budget_s}s"
        pytest.fail(RESULTS[number])
    RESULTS[number] = f"PASS  {number}. {title} ({elapsed:.2f}s < {budget_s}s)"


def _random_instance(rng):
    length = int(rng.integers(1, 513))
    k = int(rng.integers(1, 21))
    g = rng.normal(size=length)
    ws = rng.normal(size=(k, length))
    ns = rng.integers(1, 1000, size=k)
    ids = rng.permutation(10_000)[:k]
    return g, [ClientUpdate(int(i), w, int(n)) for i, w, n in zip(ids, ws, ns)], ws, ns


def test_1_aggregation_algebra():
    with criterion(1, "FedAvg equals n_k-weighted mean, 1000 instances, err < 1e-12", 5.0):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            g, ups, ws, ns = _random_instance(rng)
            oracle = np.average(ws, axis=0, weights=ns.astype(float))
            worst = max(worst, float(np.max(np.abs(fedavg_step(g, ups) - oracle))))
        assert worst < 1e-12, f"max abs error {worst:.3e}"


def test_2_fedavgm_reduction_and_velocity():
    with criterion(2, "FedAvgM(beta=0, lr=1) == FedAvg < 1e-12; velocity closed form < 1e-9", 5.0):
        rng = np.random.default_rng(77)
        worst = 0.0
        for _ in range(1000):
            g, ups, _, _ = _random_instance(rng)
            state = FedAvgMState(rng.normal(size=g.size), beta=0.0, server_lr=1.0)
            w, _ = fedavgm_step(g, ups, state)
            worst = max(worst, float(np.max(np.abs(w - fedavg_step(g, ups)))))
        assert worst < 1e-12, f"max abs error {worst:.3e}"

        for beta in (0.5, 0.9, 0.99):
            delta = rng.normal(size=16)
            v0 = rng.normal(size=16)
            g = rng.normal(size=16)
            state = FedAvgMState(v0, beta=beta, server_lr=0.3)
            for t in range(1, 11):
                # a single client sitting at g - delta makes the pseudo-gradient exactly delta
                g, state = fedavgm_step(g, [ClientUpdate(0, g - delta, 5)], state)
                closed = beta ** t * np.linalg.norm(v0 - delta)
                err = abs(np.linalg.norm(state.velocity - delta) - closed)
                assert err < 1e-9, f"beta={beta} round {t}: |v - delta| off by {err:.3e}"
                np.testing.assert_allclose(state.velocity, delta + beta ** t * (v0 - delta), rtol=0, atol=1e-9)


def test_3_one_step_centralized_equivalence():
    with criterion(3, "full-batch FedAvg round == centralized GD step, 10 rounds, err < 1e-9", 2.0):
        cfg = ExperimentConfig(
            n_clients=5, rounds=10, client_fraction=1.0, strategy="fedavg", partition_scheme="iid",
            model=ModelSpec(ModelKind.LINEAR_REGRESSION, d_in=4),
            train=TrainConfig(local_epochs=1, batch_size=1_000, lr=0.3),
            data=DataConfig(n_scenes=111, d_in=4, regions=3, noise_sigma=0.05), seed=5)
        data = prepare_data(cfg)
        assert len(data.train) == 100 and [len(s) for s in data.shards] == [20] * 5

        # oracle: plain full-batch gradient descent on the union, written out by hand
        X = np.hstack([scene_features(data.train), np.ones((100, 1))])
        y = scene_targets(data.train)[:, 0]
        w_oracle = np.zeros(5)
        w_fed = init_params(cfg.model)
        cen = run_centralized(cfg, data)
        for t in range(1, 11):
            w_oracle = w_oracle - cfg.train.lr * (2.0 / 100) * X.T @ (X @ w_oracle - y)
            w_fed, _, _ = run_round(w_fed, data.shards, cfg, None, t, data.test)
            err = float(np.max(np.abs(w_fed - w_oracle)))
            assert err < 1e-9, f"round {t}: federated vs centralized step differ by {err:.3e}"
        assert float(np.max(np.abs(cen.final_global - w_oracle))) < 1e-9


def _fd_grad(spec, p, batch, h=1e-6):
    g = np.zeros_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        g[i] = (loss_and_grad(spec, p + e, batch)[0] - loss_and_grad(spec, p - e, batch)[0]) / (2 * h)
    return g


def test_4_gradient_correctness():
    with criterion(4, "analytic vs central-difference gradients, 20 points x 2 models, rel err < 1e-5", 5.0):
        rng = np.random.default_rng(4)
        batch = generate_dataset(64, d_in=6, regions=3, noise_sigma=0.02, seed=4)
        worst = 0.0
        for spec in (ModelSpec(ModelKind.LINEAR_REGRESSION, d_in=6), ModelSpec(ModelKind.BOX_REGRESSOR, d_in=6, hidden=8)):
            for _ in range(20):
                p = rng.normal(scale=0.5, size=spec.param_count)
                _, grad = loss_and_grad(spec, p, batch)
                fd = _fd_grad(spec, p, batch)
                rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
                worst = max(worst, rel)
        assert worst < 1e-5, f"worst relative error {worst:.3e}"


def _mc_iou(a, b, rng, n_side=1000):
    # one uniform sample per cell of an n_side x n_side grid over the enclosing rectangle
    x0, y0 = min(a.x_min, b.x_min), min(a.y_min, b.y_min)
    x1, y1 = max(a.x_max, b.x_max), max(a.y_max, b.y_max)
    cells = np.arange(n_side)
    u = (cells[:, None] + rng.uniform(size=(n_side, n_side))) / n_side
    v = (cells[None, :] + rng.uniform(size=(n_side, n_side))) / n_side
    px, py = x0 + u * (x1 - x0), y0 + v * (y1 - y0)
    in_a = (px >= a.x_min) & (px <= a.x_max) & (py >= a.y_min) & (py <= a.y_max)
    in_b = (px >= b.x_min) & (px <= b.x_max) & (py >= b.y_min) & (py <= b.y_max)
    return np.count_nonzero(in_a & in_b) / np.count_nonzero(in_a | in_b)


def test_5_iou_correctness():
    with criterion(5, "IoU analytic cases, symmetry, self-IoU, Monte-Carlo (1e6 samples) within 2e-3", 30.0):
        a = BoundingBox(0.1, 0.2, 0.6, 0.7)
        assert iou(a, a) == 1.0
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(2, 2, 3, 3)) == 0.0
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3)) == 1 / 7

        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(50):
            x = np.sort(rng.uniform(0, 1, size=(2, 2)), axis=1)
            y = np.sort(rng.uniform(0, 1, size=(2, 2)), axis=1)
            p = BoundingBox(x[0, 0], y[0, 0], x[0, 1], y[0, 1])
            q = BoundingBox(x[1, 0], y[1, 0], x[1, 1], y[1, 1])
            assert iou(p, q) == iou(q, p)
            assert iou(p, p) == 1.0 and iou(q, q) == 1.0
            worst = max(worst, abs(iou(p, q) - _mc_iou(p, q, rng)))
        assert worst < 2e-3, f"worst Monte-Carlo disagreement {worst:.2e}"


def test_6_end_to_end_convergence():
    with criterion(6, "BoxRegressor, 5 clients, Dirichlet(0.5), FedAvg, 50 rounds: |fed - central| < 0.05 and IoU > 0.6", 120.0):
        cfg = ExperimentConfig(n_clients=5, rounds=50, strategy="fedavg", partition_scheme="region_dirichlet",
                               alpha=0.5, seed=0)
        data = prepare_data(cfg)
        central = run_centralized(cfg, data)  # oracle first
        fed = run_experiment(cfg, data)
        gap = abs(fed.final_metric - central.final_metric)
        RESULT_DETAIL[6] = f"federated {fed.final_metric:.4f}, centralized {central.final_metric:.4f}"
        assert gap < 0.05, f"gap {gap:.4f} ({RESULT_DETAIL[6]})"
        assert fed.final_metric > 0.6, RESULT_DETAIL[6]


GRID_CFG = """
[experiment]
rounds = 7
seed = 0

[data]
partition = region_dirichlet
alpha = 0.5

[grid]
n_clients = 5, 7, 9
strategies = fedavg, fedavgm
models = box_regressor
"""


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_7_structural_grid_reproduction(tmp_path):
    with criterion(7, "grid {5,7,9} x {FedAvg, FedAvgM}, 7 rounds: 6 rows, 6 seven-row series, gap table", 300.0):
        cfg = tmp_path / "grid.ini"
        cfg.write_text(textwrap.dedent(GRID_CFG))
        fed_dir, cen_dir = tmp_path / "fed", tmp_path / "fed+central"
        assert main(["grid", "--config", str(cfg), "--out", str(fed_dir)]) == 0

        summary = _rows(fed_dir / "summary.csv")
        assert summary[0] == SUMMARY_HEADER
        assert [(r[0], r[1], r[2]) for r in summary[1:]] == [
            (n, s, "box_regressor:16") for n in ("5", "7", "9") for s in ("fedavg", "fedavgm")]
        series = sorted(os.listdir(fed_dir / "series"))
        assert len(series) == 6
        for name in series:
            rows = _rows(fed_dir / "series" / name)
            assert rows[0] == ROUND_HEADER
            assert [r[0] for r in rows[1:]] == [str(t) for t in range(1, 8)]
        for r in summary[1:]:
            assert 0.0 <= float(r[3]) <= 1.0 and float(r[4]) > 0.0

        assert main(["grid", "--config", str(cfg), "--out", str(cen_dir), "--centralized"]) == 0
        with_central = _rows(cen_dir / "summary.csv")
        assert len(with_central) == 1 + 6 + 3
        assert [r[0] for r in with_central[1:] if r[1] == "centralized"] == ["5", "7", "9"]

        out = tmp_path / "gap"
        assert main(["compare", str(cen_dir), str(fed_dir), "--out", str(out)]) == 0
        gap = _rows(out / "gap.csv")
        assert gap[0] == GAP_HEADER
        assert [r[0] for r in gap[1:]] == ["5", "7", "9"]
        for r in gap[1:]:
            assert r[2] == "centralized" and r[4] in ("fedavg", "fedavgm")
            assert math.isclose(float(r[6]), float(r[3]) - float(r[5]), abs_tol=1e-15)


DET_CFG = """
[experiment]
n_clients = 6
rounds = 5
client_fraction = 0.5
strategy = {strategy}
workers = {workers}
seed = 11

[data]
n_scenes = 3000

[train]
local_epochs = 2
"""


def _without_timing(path):
    rows = _rows(path)
    idx = rows[0].index("wall_seconds")
    return [r[:idx] + r[idx + 1:] for r in rows]


def test_8_determinism(tmp_path):
    with criterion(8, "same seed reruns give byte-identical metric CSVs across parallelism", 120.0):
        for strategy in ("fedavg", "fedavgm"):
            outs = []
            for workers in (1, 1, 4):
                cfg = tmp_path / f"{strategy}-{workers}-{len(outs)}.ini"
                cfg.write_text(textwrap.dedent(DET_CFG.format(strategy=strategy, workers=workers)))
                out = tmp_path / cfg.stem
                assert main(["run", "--config", str(cfg), "--out", str(out), "--centralized"]) == 0
                outs.append(out)
            for f in ("rounds.csv", "centralized.csv"):
                ref = _without_timing(outs[0] / f)
                assert len(ref) == 1 + 5
                for other in outs[1:]:
                    assert _without_timing(other / f) == ref, f"{strategy} {f} differs in {other.name}"


def test_9_partitioner_statistics():
    with criterion(9, "Dirichlet(0.1) shards more skewed than IID: 2000 scenes, 9 clients, 20 seeds", 10.0):
        def mean_tv(shards, g):
            return float(np.mean([0.5 * np.abs(region_histogram(s.scenes, 4) - g).sum() for s in shards]))

        tv_dir, tv_iid = [], []
        for seed in range(20):
            scenes = generate_dataset(2000, regions=4, seed=seed)
            g = region_histogram(scenes, 4)
            tv_dir.append(mean_tv(partition(scenes, 9, "region_dirichlet", alpha=0.1, seed=seed), g))
            tv_iid.append(mean_tv(partition(scenes, 9, "iid", seed=seed), g))
            assert tv_dir[-1] > tv_iid[-1], f"seed {seed}: {tv_dir[-1]:.3f} <= {tv_iid[-1]:.3f}"
        assert np.mean(tv_dir) > np.mean(tv_iid)
