# Encoding a segmentation mask as a truncated, normalized signed distance map.
#
# Run:  python3 demos/01_sdf_encoding.py

import numpy as np

from scoreseg import SdfConfig, brute_force_sdf, decode_mask, encode_sdf
from scoreseg.sdf import boundary_pixels


def show(a, fmt="{:+.2f}"):
    for row in a:
        print(" ".join(fmt.format(v) for v in row))
    print()


# A small blob: two overlapping rectangles.
mask = np.zeros((9, 11), dtype=np.uint8)
mask[2:7, 2:6] = 1
mask[4:8, 5:9] = 1
show(mask, "{:d}")

# Boundary pixels are foreground pixels with at least one 4-neighbour outside
# the object (the grid edge counts as outside).
print(len(boundary_pixels(mask)), "boundary pixels")

# Distances are measured to the nearest boundary pixel, clipped at delta and
# divided by it, so values lie in [-1, 1]: negative inside, zero on the
# boundary, positive outside.
sdf = encode_sdf(mask, SdfConfig(delta=3.0))
show(sdf)

# The fast transform agrees bit for bit with the quadratic reference.
print("matches brute force:", encode_sdf(mask, SdfConfig(3.0)).tobytes() == brute_force_sdf(mask, SdfConfig(3.0)).tobytes())

# Thresholding at zero gives the mask back exactly.
print("round trip exact:", np.array_equal(decode_mask(sdf, 0.0), mask))

# A larger delta keeps more of the distance information before clipping.
for delta in (1.0, 2.0, 5.0):
    s = encode_sdf(mask, SdfConfig(delta))
    print(f"delta={delta}: {np.mean(np.abs(s) == 1):.0%} of pixels saturated")
