"""
Shrinking the calibration region
================================

A small sweep with the bench harness: GRAPPA, RAKI and SPARK at r=4 while the
ACS block shrinks from 40 to 12 lines. RAKI has to learn the whole
interpolation from the ACS and suffers first; SPARK only learns GRAPPA's
residual. The CSV and per-case images land in ``demo_out/acs_sweep``.

The full sweep trains SPARK four times (about 12 minutes on one core).
"""

# %%
import sys

from sparkrecon.bench import config_from_dict, run_experiment
from sparkrecon.bench.harness import ratio_table

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = config_from_dict({
    "n": 128, "n_c": 8, "sigma": 5e-4, "seed": 1,
    "r": [4], "acs": [12, 16, 24, 40],
    "methods": ["grappa", "raki", "spark:grappa"],
    "spark": {"epochs": epochs},
    "precision": "f32",
})
result = run_experiment(cfg, "demo_out/acs_sweep")
print(result.csv_path.read_text())

# %% [markdown]
# RMSE relative to GRAPPA on the same case: below one means better.

# %%
for method, r, acs, seed, ratio in ratio_table(result.rows):
    if method != "grappa":
        print(f"{method:>13} acs={acs:>2}  {ratio:.3f}")
