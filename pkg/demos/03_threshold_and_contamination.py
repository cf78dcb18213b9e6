"""How the threshold constant C interacts with outliers on the FrozenLake grid.

Small C clips more. That protects against the Uniform[0, 100] outliers but
also clips the genuine goal reward, whose TD errors are of order one. The
resulting bias shows up as collapsing coverage at C=0.1 while the error
stays small.

    python demos/03_threshold_and_contamination.py
"""

from ropeval.harness import ExperimentConfig, build_environment, run_cell

base = ExperimentConfig(env="gridworld", noise="none", n=10_000, replications=50,
                        seed=11, b_boot=100, timing=False, rate_c=0.05)
env = build_environment(base)
print(f"start-tile value {env.truth:.4f}")

for rate in ("zero", "c_sqrt_inv_n"):
    print(f"\ncontamination: {rate}")
    for c_tau in (0.1, 0.5, 2.0):
        row = run_cell(base.point(rate=rate, c_tau=c_tau), env).summary()[0]
        print(f"  ROPE C={c_tau:<4}  coverage {row['coverage_rate']:.2f}  median err {row['median_abs_err']:.4f}")
    row = run_cell(base.point(rate=rate, method="lsa"), env).summary()[0]
    print(f"  LSA          coverage {row['coverage_rate']:.2f}  median err {row['median_abs_err']:.4f}")
