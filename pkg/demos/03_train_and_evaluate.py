"""Train the full model on planted-community data and score it on held-out pairs."""

import sys

from multigccf.graphs import build_graphs
from multigccf.model import ModelConfig, MultiGCCF
from multigccf.synthetic import block_dataset
from multigccf.trainer import TrainConfig, train

ds = block_dataset(seed=0).dataset
graphs = build_graphs(ds, seed=0)
model = MultiGCCF(ModelConfig(input_dim=64, layer1_dim=32, output_dim=16), graphs, seed=0)

# One CSV line per epoch goes to stdout.
model, state, report = train(ds, model, TrainConfig(max_epochs=30, seed=0), log=sys.stdout, cutoffs=(10, 20))
print(f"best epoch {state.best_epoch}, stopped early: {state.stopped_early}")
print(report.to_csv())
