import time
from dataclasses import replace

import numpy as np

from mnartc import FitOptions, ScenarioSpec, fit, generate, run_experiment


def show(tag, agg, t):
    print(tag, "completed", agg["completed"], "failures", len(agg["failures"]),
          "rejection", agg.get("rejection_rate"), "coverage", agg.get("ci_coverage"),
          f"time {t:.1f}s", flush=True)


# criterion 6: null rejection rate
t0 = time.time()
null_spec = ScenarioSpec(family="gaussian", dims=(30, 30, 30), rank=3, c=0.6,
                         b0_star=1.0, b1_star=0.0, replicates=200, seed=0)
_, agg = run_experiment(null_spec, "testing", a2_size=500, alpha=0.05)
show("CRIT6 null", agg, time.time() - t0)

# criterion 7: power, both families
t0 = time.time()
alt_g = replace(null_spec, b1_star=2.0)
_, agg = run_experiment(alt_g, "testing", a2_size=500, alpha=0.05)
show("CRIT7 gaussian", agg, time.time() - t0)

t0 = time.time()
alt_b = ScenarioSpec(family="bernoulli", dims=(30, 30, 30), rank=3, c=0.6,
                     b0_star=1.0, b1_star=2.0, replicates=200, seed=0)
_, agg = run_experiment(alt_b, "testing", a2_size=500, alpha=0.05)
show("CRIT7 bernoulli", agg, time.time() - t0)

# criterion 9: observation-ratio table
table = ((-1.0, 0.36), (-0.5, 0.44), (0.0, 0.52), (0.5, 0.60),
         (1.0, 0.68), (1.5, 0.76), (2.0, 0.84))
t0 = time.time()
for i, (b0, expected) in enumerate(table):
    fractions = []
    for rep in range(10):
        spec = ScenarioSpec(family="gaussian", dims=(50, 50, 50), rank=3, c=0.6,
                            b0_star=b0, b1_star=2.0, seed=900 + 10 * i + rep)
        _, data = generate(spec)
        fractions.append(float(data.mask.mean()))
    m = float(np.mean(fractions))
    print(f"CRIT9 b0={b0:+.1f} expected {expected:.2f} realized {m:.4f} "
          f"err {abs(m - expected):.4f}", flush=True)
print(f"CRIT9 time {time.time()-t0:.1f}s", flush=True)

# criterion 5: completion benefit
t0 = time.time()
comp = ScenarioSpec(family="gaussian", dims=(30, 30, 30), rank=2, c=0.6,
                    b0_star=1.0, b1_star=2.0, replicates=50, seed=0)
_, agg = run_experiment(comp, "completion")
print("CRIT5 completed", agg["completed"], "rmse", agg["rmse_missing"]["mean"],
      "baseline", agg["baseline_rmse"]["mean"],
      f"time {time.time()-t0:.1f}s", flush=True)

# criterion 3: ascent + convergence on the three d=20 scenarios
scenarios = (
    ("gaussian", ScenarioSpec(family="gaussian", dims=(20, 20, 20), rank=3, c=0.6,
                              b0_star=1.0, b1_star=2.0, seed=0)),
    ("bernoulli", ScenarioSpec(family="bernoulli", dims=(20, 20, 20), rank=3, c=0.6,
                               b0_star=1.0, b1_star=2.0, seed=0)),
    ("poisson", ScenarioSpec(family="poisson", dims=(20, 20, 20), rank=3, c=0.4,
                             b0_star=0.5, b1_star=2.0, factor_law="log_uniform", seed=0)),
)
for name, base in scenarios:
    t0 = time.time()
    converged = 0
    monotone = True
    worst_drop = 0.0
    iters = []
    for s in range(50):
        _, data = generate(replace(base, seed=s))
        report = fit(data, base.rank, base.family, FitOptions(seed=s))
        converged += int(report.converged)
        iters.append(report.outer_iters)
        tr = np.asarray(report.objective_trace)
        drops = np.diff(tr) + 1e-10 * (1.0 + np.abs(tr[:-1]))
        if (drops < 0).any():
            monotone = False
            worst_drop = min(worst_drop, float(drops.min()))
    print(f"CRIT3 {name} converged {converged}/50 monotone {monotone} "
          f"worst_drop {worst_drop:.3e} median_iters {int(np.median(iters))} "
          f"time {time.time()-t0:.1f}s", flush=True)
print("PROBE A DONE", flush=True)
