"""Compare ROPE and bootstrapped LSA across reward-noise families.

A small version of the heavy-tail comparison: 100 replications per cell.

    python demos/02_rope_vs_lsa.py
"""

from ropeval.harness import ExperimentConfig, run_sweep

config = ExperimentConfig(env="random_mdp", n=10_000, replications=100, seed=3,
                          b_boot=100, timing=False,
                          sweep_method=("rope", "lsa"),
                          sweep_noise=("normal", "student_t", "cauchy"))
report = run_sweep(config)

print(f"{'method':6s} {'noise':15s} {'coverage':>9s} {'width':>9s} {'median err':>11s}")
for row in report.summary():
    print(f"{row['method']:6s} {row['noise']:15s} {row['coverage_rate']:9.3f} "
          f"{row['mean_width']:9.4f} {row['median_abs_err']:11.4f}")
