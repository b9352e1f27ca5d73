# %% [markdown]
# # Dam break on a thin strip
#
# Forward finite volumes first, then a physics-only network trained on the
# same residual. Both are compared with the analytic wet-bed solution at t = 1 s.
# EPOCHS = 5000 takes about seven minutes on one core; a few hundred steps only give the rough shape.

# %%
from pathlib import Path


from swe_fvpinn.config import build_case, dam_break_spec, load_config
from swe_fvpinn.diagnostics import evaluate_model, l2_error
from swe_fvpinn.reference import stoker_dambreak
from swe_fvpinn.training import train_standard

CASES = Path(__file__).resolve().parents[1] / "cases"
EPOCHS = 5000

# %%
cfg = load_config(CASES / "dambreak.toml", [f"training.adam.epochs={EPOCHS}"])
case = build_case(cfg)
x = case.mesh.cell_centroid[:, 0]
h_exact, u_exact = stoker_dambreak(dam_break_spec(cfg), x, 1.0)

# %% [markdown]
# Teacher error at two resolutions. Halving the cell size should shrink the error.

# %%
for n in (100, 200):
    c = build_case(load_config(CASES / "dambreak.toml", [f"mesh.n_cells={n}"]), with_data=False)
    traj = c.teacher(2, 0.5)
    xc = c.mesh.cell_centroid[:, 0]
    h_ref, _ = stoker_dambreak(dam_break_spec(cfg), xc, 1.0)
    h = traj.at(1.0)[:, 0] + c.mesh.cell_hs
    print(f"{n} cells: L2(h) = {l2_error(h, h_ref, c.mesh.cell_area):.4f}  ({traj.n_steps} steps)")

# %%
params, history = train_standard(case)
print("final loss", history.rows[-1][2])

# %%
pred = evaluate_model(case.net, params, case.mesh, 1.0)
h_net = pred[:, 0] + case.mesh.cell_hs
print(f"network L2(h) at t = 1 s: {l2_error(h_net, h_exact, case.mesh.cell_area):.4f}")

# %%
try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    plt.plot(x, h_exact, "k-", label="exact")
    plt.plot(x, h_net, "r.", ms=3, label="network")
    plt.xlabel("x (m)")
    plt.ylabel("h (m)")
    plt.legend()
    plt.show()
