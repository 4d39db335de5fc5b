"""
FedAvg and FedAvgM on hand-made client updates
===============================================

The server only ever sees flat parameter vectors and sample counts.
"""

import numpy as np

from fedsim import ClientUpdate, FedAvgMState, fedavg_step, fedavgm_step, pseudo_gradient

# %%
# Two clients: one with 1 sample at [2, 0], one with 3 samples at [0, 4].
# FedAvg weights them 1/4 and 3/4.
global_params = np.zeros(2)
updates = [ClientUpdate(0, [2.0, 0.0], 1), ClientUpdate(1, [0.0, 4.0], 3)]
print("pseudo-gradient :", pseudo_gradient(global_params, updates).delta)
print("FedAvg          :", fedavg_step(global_params, updates))

# %%
# FedAvgM keeps a velocity. With beta = 0.9 the first round only moves a
# tenth of the way, and the velocity builds up over later rounds.
state = FedAvgMState.zeros(2, beta=0.9, server_lr=1.0)
w = global_params
for t in range(1, 6):
    w, state = fedavgm_step(w, [ClientUpdate(0, w - 1.0, 10)], state)
    print(f"round {t}: velocity {state.velocity.round(4)}  global {w.round(4)}")

# %%
# beta = 0 switches momentum off and recovers FedAvg exactly.
w0, _ = fedavgm_step(global_params, updates, FedAvgMState.zeros(2, beta=0.0))
print("FedAvgM(beta=0) :", w0)
