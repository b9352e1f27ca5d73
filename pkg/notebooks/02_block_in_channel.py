# %% [markdown]
# # Block in a channel: what sparse velocity data buy
#
# Two runs on the reduced channel case, identical except for the weight on 200
# sparse velocity observations at t = 30 s. Afterwards the data-guided network's
# momentum is scaled by alpha to see how flat the residual loss is along that
# direction compared with the data loss.
# The full pair takes around ten minutes on one core.

# %%
from pathlib import Path

import numpy as np

from swe_fvpinn.cli import _context
from swe_fvpinn.config import build_case, load_config
from swe_fvpinn.diagnostics import alpha_sweep, evaluate_model, velocity_l2
from swe_fvpinn.training import sample_times, train_standard

CASES = Path(__file__).resolve().parents[1] / "cases"

# %%
results = {}
for w in (0.0, 10.0):
    case = build_case(load_config(CASES / "bic_reduced.toml", [f"training.weights.data={w}"]))
    params, _ = train_standard(case)
    T = case.train.T
    ref = case.teacher(7, 0.5).at(T)
    err = velocity_l2(evaluate_model(case.net, params, case.mesh, T), ref, case.mesh)
    results[w] = (case, params, err)
    print(f"data weight {w:5.1f}: velocity L2 at t = {T:.0f} s = {err:.4f}")

print("ratio", results[0.0][2] / results[10.0][2])

# %%
case, params, _ = results[10.0]
times = sample_times(10, case.train.t0, case.train.T, np.random.default_rng(7))
curve = alpha_sweep(case.net, params, _context(case), np.linspace(0, 1.5, 7), times, case.train.weights)
for a, f, d in zip(curve.alpha, curve.loss_fvm, curve.loss_data):
    print(f"alpha {a:4.2f}  fvm {f:.3e}  data {d:.3e}")
