"""A first look at a caching network and what a placement costs.

Run with ``python demos/01_network_and_cost.py``.
"""

import numpy as np

from edgecache import cost
from edgecache.netmodel import generate_instance, generate_topology, utilization

# The default topology: 7 access routers (ARs), 6 edge clouds (ECs), 20 links.
topo = generate_topology(1)
print("nodes:", topo.num_nodes, " ARs:", topo.num_ars, " ECs:", topo.num_ecs,
      " links:", topo.num_links)

# Hop counts from every AR to every EC, found by breadth-first search.
print("hop counts (AR x EC):")
print(topo.hop_matrix)

# Five flows with random sizes, bandwidths and AR attachment probabilities.
inst = generate_instance(3, topo, 5)
print("storage demand s (MB):", np.round(inst.s, 1))
print("bandwidth demand b (Mbps):", np.round(inst.b, 1))
print("EC storage w (MB):", np.round(inst.w, 1))
print("storage shares s_k / w_e of flow 0:", np.round(utilization(inst).q[0], 3))

# Put every flow on its nearest EC and route every AR to it.
x = np.zeros((5, topo.num_ecs), dtype=int)
x[np.arange(5), topo.hop_matrix.argmin(axis=1)[inst.p.argmax(axis=1)]] = 1
sol = cost.evaluate(inst, x)
print("caching cost:", round(cost.caching_cost(inst, x, allow_partial=True), 3))
print("transmission cost:", round(cost.transmission_cost(inst, sol.z), 3))
print("total cost J:", round(sol.objective, 3), " feasible:", sol.feasible)
for v in sol.violations:
    print("  violation:", v)

# The penalty score adds a large term for any overloaded EC or link.
print("penalty score S:", round(sol.penalty_score, 3))
