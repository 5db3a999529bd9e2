"""
Geodesic distances between sensors
==================================

Sensor positions are latitude/longitude pairs on the WGS-84 ellipsoid.
Distances come from Vincenty's inverse formula.
"""

import numpy as np

from topo_ensemble.geodesy import (GeoCoordinate, NonConvergence, build_distance_matrix, haversine_distance,
                                   vincenty_distance)

# one degree of longitude along the equator
print(vincenty_distance((0, 0), (0, 1)))          # 111319.49 m

# a few stations in central Italy
stations = {
    "AQU": GeoCoordinate(42.354, 13.405),
    "CAMP": GeoCoordinate(42.536, 13.409),
    "FIAM": GeoCoordinate(42.268, 13.117),
    "GIUL": GeoCoordinate(41.558, 13.254),
}
D = build_distance_matrix(list(stations.values()))
print(np.round(D / 1000, 2))                        # km

# the matrix is exactly symmetric, with a zero diagonal
assert (D == D.T).all() and not D.diagonal().any()

# the ellipsoid matters: a sphere is off by about a hundred metres here
a, b = stations["AQU"], stations["GIUL"]
print(vincenty_distance(a, b) - haversine_distance(a, b))

# nearly antipodal pairs do not converge; ask for the spherical fallback explicitly
try:
    vincenty_distance((0, 0), (0.5, 179.7))
except NonConvergence as err:
    print("no convergence:", err)
print(vincenty_distance((0, 0), (0.5, 179.7), fallback=True))
