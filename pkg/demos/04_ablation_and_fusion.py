"""Switch encoder branches and fusion modes on and off and compare Recall@20.

On this tiny, clean dataset the bipartite encoder alone is already close to
the best achievable score, so differences between variants are small and
mostly seed noise. Treat the table as a smoke test, not a benchmark.
"""

from dataclasses import replace

from multigccf.experiments import ABLATION_LADDER
from multigccf.graphs import build_graphs
from multigccf.model import BPRMF, BPRMFConfig, FUSION_MODES, ModelConfig, MultiGCCF
from multigccf.synthetic import block_dataset
from multigccf.trainer import TrainConfig, train

ds = block_dataset(seed=0).dataset
graphs = build_graphs(ds, seed=0)
base = ModelConfig(input_dim=64, layer1_dim=32, output_dim=16)
tc = TrainConfig(max_epochs=20, seed=0)

for name, (mge, skip) in ABLATION_LADDER.items():
    model = MultiGCCF(replace(base, use_mge=mge, use_skip=skip), graphs, seed=0)
    print(f"{name:>12}: Recall@20 {train(ds, model, tc)[2].recall[20]:.4f}")

for fusion in FUSION_MODES:
    model = MultiGCCF(replace(base, fusion=fusion), graphs, seed=0)
    print(f"fusion={fusion:>9}: Recall@20 {train(ds, model, tc)[2].recall[20]:.4f}")

bprmf = BPRMF(BPRMFConfig(dim=16), ds.num_users, ds.num_items, seed=0)
print(f"{'bprmf':>12}: Recall@20 {train(ds, bprmf, tc)[2].recall[20]:.4f}")
