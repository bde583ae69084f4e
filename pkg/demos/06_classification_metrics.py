"""Macro and micro averaged scores for placement predictions.

Run with ``python demos/06_classification_metrics.py``.
"""

import numpy as np

from edgecache import evalkit

eye = np.eye(4, dtype=int)
truth = eye[[[0, 1, 2], [0, 0, 3], [1, 1, 2]]]
pred = eye[[[0, 1, 1], [0, 2, 3], [1, 1, 2]]]

counts = evalkit.confusion(pred, truth)
print("per-EC TP:", counts.tp.tolist(), " FP:", counts.fp.tolist(),
      " FN:", counts.fn.tolist(), " TN:", counts.tn.tolist())

m = evalkit.macro_micro(counts)
print("macro:", {k: str(v) for k, v in m.macro.items()})
print("micro:", {k: str(v) for k, v in m.micro.items()})

# Every flow gets exactly one predicted and one true EC, so each mistake is
# one false positive and one false negative.  Micro precision, recall and F1
# therefore coincide, and macro accuracy equals micro accuracy.
assert m.micro["precision"] == m.micro["recall"] == m.micro["f1"]
assert m.macro["accuracy"] == m.micro["accuracy"]
print("ECs with an undefined ratio (counted as 0):", m.undefined_ecs)
