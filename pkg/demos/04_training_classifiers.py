"""Training one small CNN per flow on solved instances.

Run with ``python demos/04_training_classifiers.py``.  Takes about a minute.
"""

import numpy as np

from edgecache import evalkit
from edgecache.cnn import TrainConfig, predict_matrix, train_ensemble
from edgecache.netmodel import generate_topology

topo = generate_topology(1)

# Random five flow instances solved exactly give images and optimal labels.
split = evalkit.build_dataset(0, topo, split=(128, 32, 32))
print("train/validation/test:", len(split.train), len(split.validation), len(split.test))

# Five classifiers, one for each flow row of the image.
config = TrainConfig(epochs=20, seed=0)
results = train_ensemble(split.train, config, validation=split.validation)
for res in results:
    print(f"flow {res.flow_index}: train loss {res.train_loss[0]:.3f} -> "
          f"{res.train_loss[-1]:.3f}, validation {res.val_loss[-1]:.3f}")

# Each model returns a probability for every EC; stacked they form a K x E matrix.
models = [r.model for r in results]
o = predict_matrix(models, split.test.images[0]).real
print("probability matrix of the first test instance:")
print(np.round(o, 2))
print("predicted ECs:", o.argmax(axis=1).tolist(),
      " optimal ECs:", split.test.labels[0].argmax(axis=1).tolist())
