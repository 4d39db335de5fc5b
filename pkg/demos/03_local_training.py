"""
Client-side training
====================

Mini-batch SGD on one shard, and a finite-difference check of the gradient.
"""

import numpy as np

from fedsim import ModelSpec, Shard, TrainConfig, generate_dataset, local_train
from fedsim.metrics import evaluate_model
from fedsim.models import init_params, loss_and_grad

spec = ModelSpec("box_regressor", d_in=8, hidden=16)
scenes = generate_dataset(2400, seed=1)
shard, test = Shard(0, scenes[:2000]), scenes[2000:]

params = init_params(spec, seed=1)
print("param count:", spec.param_count)
print("IoU before :", round(evaluate_model(spec, params, test).mean_iou, 4))

# %%
for epoch_block in range(4):
    upd = local_train(spec, params, shard, TrainConfig(local_epochs=5, batch_size=32, lr=0.05, seed=epoch_block))
    params = upd.params
    print(f"after {5 * (epoch_block + 1):2d} epochs: train loss {upd.local_loss:.5f}, "
          f"test IoU {evaluate_model(spec, params, test).mean_iou:.4f}")

# %%
# Central differences agree with the analytic gradient.
batch = scenes[:32]
_, grad = loss_and_grad(spec, params, batch)
h = 1e-6
fd = np.array([(loss_and_grad(spec, params + h * e, batch)[0] - loss_and_grad(spec, params - h * e, batch)[0]) / (2 * h)
               for e in np.eye(spec.param_count)])
print("relative gradient error:", np.linalg.norm(grad - fd) / np.linalg.norm(fd))
