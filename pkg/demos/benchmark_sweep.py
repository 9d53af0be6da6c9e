"""Steps sweep and head-to-head timing with the benchmark harness."""
import time

from fifaseg import (BenchScenario, ExactConfig, FifaConfig, LengthModel, SynthConfig,
                     fifa_align, init_lengths, run_bench, synth_instance, viterbi_align)

instances = [synth_instance(SynthConfig(seed=s)) for s in range(20)]
lm = LengthModel.uniform(10, 40.0)
rows = run_bench(BenchScenario("steps"), instances, lm)
print("%-8s %-6s %-8s %s" % ("method", "steps", "MoF", "ms"))
for row in rows:
    if row["row_type"] == "summary":
        print("%-8s %-6s %.4f   %.2f" % (row["method"], row["value"], row["mof"], 1e3 * row["seconds"]))

# one long video: exact cost grows with T * L, FIFA with T * steps
long = synth_instance(SynthConfig(T=10_000, N=10, seed=3))
lm = LengthModel.uniform(10, 1000.0)
t0 = time.perf_counter()
viterbi_align(long.probs, long.transcript, lm, ExactConfig(max_segment_len=2000))
exact = time.perf_counter() - t0
init = init_lengths("model", long.transcript, lm, 10_000)
t0 = time.perf_counter()
fifa_align(long.probs, long.transcript, init, lm.with_family("laplace"), FifaConfig(steps=50))
fifa = time.perf_counter() - t0
print("T=10000: exact %.3fs, fifa %.3fs, %.0fx faster" % (exact, fifa, exact / fifa))
