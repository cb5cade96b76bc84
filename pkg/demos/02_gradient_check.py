"""Compare hand-derived reverse-mode gradients with central differences.

Everything in the model runs on a small tape-based autodiff engine, so this
is the quickest way to convince yourself the backward pass is right.
"""

import numpy as np

from multigccf.graphs import build_graphs
from multigccf.model import ModelConfig, MultiGCCF
from multigccf.numerics import Tape
from multigccf.synthetic import block_dataset

ds = block_dataset(num_users=20, num_items=30, num_blocks=2, p_in=0.5, seed=0).dataset
graphs = build_graphs(ds, sizes=(3, 2), num_sets=2, target_avg_degree=3, seed=0)
cfg = ModelConfig(input_dim=4, layer1_dim=3, output_dim=3, sample_sizes=(3, 2), fusion="attention", dropout_rate=0.0)
model = MultiGCCF(cfg, graphs, seed=0)
batch = np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8]])


def loss_value():
    return model.loss(batch, set_index=0, training=False, tape=Tape(record=False))


model.params.zero_grad()
model.loss(batch, set_index=0, training=False)
eps = 1e-6
for p in model.params:
    flat = p.value.reshape(-1)
    idx = int(np.argmax(np.abs(p.grad.reshape(-1))))
    old = flat[idx]
    flat[idx] = old + eps
    up = loss_value()
    flat[idx] = old - eps
    down = loss_value()
    flat[idx] = old
    numeric = (up - down) / (2 * eps)
    analytic = p.grad.reshape(-1)[idx]
    print(f"{p.name:>12}: analytic {analytic:+.6e}  numeric {numeric:+.6e}")
