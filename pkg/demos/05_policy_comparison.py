"""Comparing the exact solver, the learned policies and a greedy baseline.

Run with ``python demos/05_policy_comparison.py``.  Takes a couple of minutes.
"""

from edgecache import evalkit, policies
from edgecache.cnn import TrainConfig, train_ensemble
from edgecache.netmodel import generate_topology

topo = generate_topology(1)
split = evalkit.build_dataset(0, topo, split=(128, 16, 16))
models = [r.model for r in train_ensemble(split.train, TrainConfig(epochs=20, seed=0))]

# One instance, every policy.
inst = split.test.instances[0]
for name in policies.POLICIES:
    out = policies.run_policy(name, inst, models)
    print(f"{name:10s} J={out.objective:8.3f} feasible={out.feasible} "
          f"time={out.elapsed:.3f}s placement={out.x.argmax(axis=1).tolist()}")

# HCLS records every move it made on the way down.
out = policies.run_policy("cnn_hcls", inst, models)
for m in out.moves:
    print(f"  flow {m.flow}: EC {m.from_ec} -> EC {m.to_ec}, "
          f"S {m.score_before:.3f} -> {m.score_after:.3f}")

# The full table: mean cost, feasibility and classification scores for
# 5 and 10 flows, 8 test instances each.
reports = evalkit.run_comparison(0, topo, models, flows_list=(5, 10), count=8)
print(evalkit.render_table(reports))
