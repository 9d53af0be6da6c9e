"""Generate synthetic probability matrices and write them to disk."""
import tempfile
from pathlib import Path

import numpy as np

from fifaseg import SynthConfig, load_instances, save_instance, synth_instance, to_segmentwise

clean = synth_instance(SynthConfig(T=30, N=3, C=4, noise_temp=0.0, confusion_prob=0.0, seed=1))
labels, lengths = to_segmentwise(clean.gt)
print("segments:", list(zip(labels.tolist(), lengths.tolist())))
print("first rows of a noiseless instance:\n", clean.probs.probs[:3])

for temp in (0.5, 1.0, 2.0):
    inst = synth_instance(SynthConfig(T=1000, noise_temp=temp, confusion_prob=0.1, seed=0))
    p = inst.probs.probs
    wrong = np.mean(p.argmax(axis=1) != inst.gt)
    print("temp %.1f: mean p(gt) %.3f, argmax errors %.3f" % (temp, p[np.arange(1000), inst.gt].mean(), wrong))

with tempfile.TemporaryDirectory() as d:
    for seed in range(3):
        save_instance(d, synth_instance(SynthConfig(seed=seed)))
    print("files:", sorted(p.name for p in Path(d).iterdir()))
    print("reloaded", len(load_instances(d)), "instances")
