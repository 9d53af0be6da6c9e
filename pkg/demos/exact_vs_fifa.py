"""Align one synthetic video with exact Viterbi decoding and with FIFA."""
import time

import numpy as np

from fifaseg import (FifaConfig, SynthConfig, estimate_length_model, fifa_align, init_lengths,
                     synth_instance, to_framewise, viterbi_align)
from fifaseg.metrics import mof

train = [synth_instance(SynthConfig(seed=10_000 + i)).gt for i in range(50)]
lm = estimate_length_model(train, "poisson", num_classes=10)
print("expected lengths per class:", np.round(lm.expected, 1))

inst = synth_instance(SynthConfig(T=200, N=5, C=10, seed=3))
print("transcript:", inst.transcript.tolist())

t0 = time.perf_counter()
exact = viterbi_align(inst.probs, inst.transcript, lm)
print("exact lengths", exact.lengths.tolist(), "log p = %.2f" % exact.log_prob,
      "(%.1f ms)" % (1e3 * (time.perf_counter() - t0)))

# FIFA starts from the model lengths and moves them by gradient descent
init = init_lengths("model", inst.transcript, lm, inst.probs.T)
res, trace = fifa_align(inst.probs, inst.transcript, init, lm.with_family("laplace"), FifaConfig(steps=50))
print("init lengths ", np.round(init, 1).tolist())
print("fifa lengths ", res.lengths.tolist(), "(%.1f ms)" % (1e3 * res.elapsed))
print("energy %.2f -> %.2f over %d steps" % (trace.totals()[0], trace.totals()[-1], len(trace) - 1))

for name, lengths in [("exact", exact.lengths), ("fifa", res.lengths)]:
    print(name, "MoF %.3f" % mof(to_framewise(inst.transcript, lengths), inst.gt))
