"""Regenerate encode_median_golden.json step by step: PROJ for the projection, mpmath for the encoding.

Not run by the test suite.
"""

import json
from pathlib import Path

import mpmath
from pyproj import Transformer

mpmath.mp.dps = 50

# the median point centers to (0, 0), which is then read as a Lambert-93 pair
to_geo = Transformer.from_crs("EPSG:2154", "EPSG:4326", always_xy=True)
lon, lat = to_geo.transform(489353.59 - 489353.59, 6587552.20 - 6587552.20)

lam_min, lam_max, scales = mpmath.mpf("0.01"), mpmath.mpf("0.00001"), 16
g = lam_max / lam_min
raw = []
for s in range(scales):
    alpha = lam_min * g ** (mpmath.mpf(s) / (scales - 1))
    u, v = mpmath.mpf(lon) / alpha, mpmath.mpf(lat) / alpha
    raw += [mpmath.sin(u), mpmath.cos(u), mpmath.sin(v), mpmath.cos(v)]
norm = sum(abs(x) for x in raw)
values = [float(x / norm) for x in raw]

out = Path(__file__).with_name("encode_median_golden.json")
out.write_text(json.dumps({
    "input": {"easting": 489353.59, "northing": 6587552.20},
    "grid": {"lambda_min": 0.01, "lambda_max": 0.00001, "num_scales": 16, "norm_kind": "l1"},
    "position_deg": [lon, lat],
    "encoding": values,
}, indent=2) + "\n")
