# %% [markdown]
# RMSE against the bounds over SNR (small Monte Carlo run; pass the trial
# count as the first argument, 200 reproduces the acceptance setting).

# %%
import sys

from misoloc import ScenarioConfig
from misoloc.harness import SweepSpec, run_sweep

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 20
spec = SweepSpec("snr_db", [-10, 0, 10, 20], trials=trials, methods=("joint", "sp-grid"),
                 base=ScenarioConfig(lmr_db_per_path=(5.0,)), seed=3)
res = run_sweep(spec)

# %%
print(f"{trials} trials per point, {res.wall_time_s:.0f} s")
print("SNR   quantity  bound[m]   joint RMSE  sp-grid RMSE")
for q in ("p", "s1"):
    for rj, rg in zip(res.rows_for("joint", q), res.rows_for("sp-grid", q)):
        print(f"{rj['value']:>4g}  {q:8s}  {rj['bound']:.4f}    {rj['rmse']:.4f}      {rg['rmse']:.4f}"
              f"  (sp-grid ok {rg['trials_ok']}/{trials})")
