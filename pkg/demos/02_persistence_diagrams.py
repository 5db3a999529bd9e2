"""
Persistence diagrams of a sensor layout
=======================================

The Vietoris-Rips filtration grows balls around every sensor. Connected
components (H0) merge as the radius grows and loops (H1) open and close.
"""

import numpy as np

from topo_ensemble.data import SyntheticSpec, place_sensors
from topo_ensemble.geodesy import build_distance_matrix
from topo_ensemble.persistence import barcode, betti_at, brute_force_diagram, compute_diagram

# twelve sensors arranged on a ring leave a hole in the middle
rng = np.random.default_rng(0)
coords = place_sensors(SyntheticSpec(n_sensors=12, geometry="ring"), rng)
D = build_distance_matrix(coords)

dgm = compute_diagram(D)
for pair in dgm.pairs:
    print(pair.dim, round(pair.birth), pair.death if not pair.is_finite else round(pair.death))

# the ring shows up as one long H1 bar
(loop,) = sorted(dgm.in_dim(1), key=lambda p: -p.lifespan)[:1]
print("loop lives from", round(loop.birth), "to", round(loop.death), "m")

# Betti numbers at a scale inside the loop's lifetime
eps = 0.5 * (loop.birth + loop.death)
print("beta0 =", betti_at(dgm, eps, 0), " beta1 =", betti_at(dgm, eps, 1))

# a text barcode
scale = 40 / max(p.death for p in dgm.pairs if p.is_finite)
for b, d in barcode(dgm):
    end = 40 if np.isinf(d) else int(d * scale)
    print(f"{' ' * int(b * scale)}{'-' * max(1, end - int(b * scale))}")

# the naive boundary-matrix reduction agrees
print(sorted(dgm.pairs) == sorted(brute_force_diagram(D).pairs))
