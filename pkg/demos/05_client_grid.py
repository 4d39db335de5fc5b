"""
Client-count grid and training time
===================================

5, 7 and 9 clients with 7 global rounds each, under FedAvg and FedAvgM,
with per-client work held fixed so the wall-clock cost grows with the
number of clients. The same grid is available from the command line as
``fedsim grid --config configs/grid.ini``.
"""

from dataclasses import replace

from fedsim import DataConfig, ExperimentConfig, run_experiment

SCENES_PER_CLIENT = 1000

print(f"{'clients':>7s} {'strategy':>8s} {'final IoU':>9s} {'seconds':>8s}")
for n in (5, 7, 9):
    data = DataConfig(n_scenes=int(round(SCENES_PER_CLIENT * n / 0.9)))
    for strategy in ("fedavg", "fedavgm"):
        cfg = ExperimentConfig(n_clients=n, rounds=7, strategy=strategy, data=data, seed=0)
        res = run_experiment(cfg)
        print(f"{n:7d} {strategy:>8s} {res.final_metric:9.4f} {res.total_wall_seconds:8.2f}")
