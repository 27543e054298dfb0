# %% [markdown]
# The single-path cost as a pseudospectrum, in the channel and position domains.

# %%
import numpy as np
from scipy import ndimage

from misoloc import ScenarioConfig, build_beamformer, derive_channel_params, noise_variance_from_snr, synthesize
from misoloc.estimator import GridSpec, singlepath_spectrum
from misoloc.locmap import equivalent_to_scatterer, position_cost
from misoloc.scenario import SPEED_OF_LIGHT, equivalent_position

cfg = ScenarioConfig()
rng = np.random.default_rng(1)
paths = derive_channel_params(cfg, rng)
tx = build_beamformer(cfg)
obs = synthesize(cfg, paths, tx, noise_variance_from_snr(cfg), rng)

# %%
grid = GridSpec.fine()
sp = singlepath_spectrum(obs.Y, tx, grid)
norm = sp.cost / np.vdot(obs.Y, obs.Y).real
print("deepest basins (theta deg, range m, normalized cost):")
for c, i, j in sp.minima[:4]:
    print(f"  {np.degrees(grid.thetas[i]):7.1f} {grid.ranges[j]:6.1f}  {norm[i, j]:.3f}")
print("true pairs:")
for p in paths:
    print(f"  {np.degrees(p.theta):7.1f} {p.tau * SPEED_OF_LIGHT:6.1f}")

# %% [markdown]
# The same cost over the plane (world frame).  The LOS basin sits at the MS;
# the NLOS basin sits at the equivalent position s^e, on the BS-scatterer
# line at the full path length, not at the scatterer.

# %%
xs = np.linspace(-2, 24, 53) + 0.25  # keep clear of the BS, where the cost is undefined
ys = np.linspace(-6, 26, 65)
surf = np.array([[position_cost(cfg.to_local([x, y]), obs.Y, tx) for x in xs] for y in ys])
is_min = surf == ndimage.minimum_filter(surf, size=5, mode="nearest")
found = sorted((surf[i, j], xs[j], ys[i]) for i, j in np.argwhere(is_min))[:3]
print("deepest minima of the position-domain cost (world x, y):")
for c, x, y in found:
    print(f"  ({x:5.2f}, {y:5.2f})  normalized cost {c / np.vdot(obs.Y, obs.Y).real:.3f}")

se = equivalent_position(paths[1].tau, paths[1].theta)
p = equivalent_position(paths[0].tau, paths[0].theta)
print("MS", cfg.to_world(p), "equivalent NLOS position", cfg.to_world(se).round(2))
print("scatterer recovered from s^e:", cfg.to_world(equivalent_to_scatterer(se, p)).round(6))
