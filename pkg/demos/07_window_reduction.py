"""
How much waveform is needed?
============================

Cut every record to a shorter window, retrain, and score on the held-out
events. Far stations see the wave late, so short windows lose information.
"""

from topo_ensemble.data import SyntheticSpec, generate_synthetic
from topo_ensemble.graphgen import select_family
from topo_ensemble.persistence import compute_diagram
from topo_ensemble.pipeline import ModelConfig, TrainConfig, window_reduction

data = generate_synthetic(SyntheticSpec(n_sensors=8, n_events=40, noise_std=0.0, sample_rate=10, seed=0))
D = data.distance_matrix()
graphs = select_family(D, compute_diagram(D), "g0").graphs[-2:]

config = ModelConfig(task="tser", conv_channels=(8, 16), gcn_hidden=32, gcn_out=32, head_hidden=32)
cfg = TrainConfig.for_task("tser", epochs=60, optimizer="adam", learning_rate=1e-3, batch_size=8)
rows = window_reduction(data, config, cfg, graphs, windows=[4, 6, 8, 10], seeds=[0, 1, 2],
                        out_csv="window_reduction.csv")
for r in rows:
    print(f"{r['window_s']:4.0f} s  MAE {r['mae']:.3f}  " + "#" * int(100 * r["mae"]))
