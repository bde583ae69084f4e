"""Turning an instance into a grayscale feature image.

Run with ``python demos/03_feature_images.py``.  Writes ``instance.pgm`` to
the current directory.
"""

import numpy as np

from edgecache.encoder import apply_assignment_update, encode, partition, residual_shares
from edgecache.netmodel import generate_instance, generate_topology
from edgecache.solver import solve_exact

inst = generate_instance(3, generate_topology(1), 12)
img = encode(inst)

# One row per flow; columns are [AR probabilities | EC shares | link shares].
print("image shape:", img.shape)
print("first row:", np.round(img.pixels[0], 2))

with open("instance.pgm", "wb") as fh:
    fh.write(img.to_pgm())
print("wrote instance.pgm")

# A classifier sees five rows at a time, so longer images are cut into
# sub-images and the last one is padded.
parts = partition(img)
print("sub-images:", [p.shape for p in parts], " padded rows in last:",
      sum(parts[-1].padded))

# Once some flows are placed, the remaining flows are re-encoded against the
# capacity that is left over.
small = generate_instance(3, generate_topology(1), 5)
sol = solve_exact(small).solution
x, y = sol.x.copy(), sol.routing.y.copy()
x[2:] = 0  # only flows 0 and 1 are placed so far
y[2:] = 0
q, r, ecs_full, links_full = residual_shares(small, x, y)
print("residual EC shares of flow 2:", np.round(q[2], 3))
update = apply_assignment_update(small, x, y)
print("excluded ECs:", sorted(update.excluded_ecs), " excluded links:",
      sorted(update.excluded_links))
