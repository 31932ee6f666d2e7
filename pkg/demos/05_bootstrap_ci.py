"""Bootstrap versus sandwich confidence intervals under two-step fitting.

When GEV margins are estimated before the dependence fit, the sandwich
variance of the second step ignores the first step's noise and its
intervals come out too short. The block bootstrap refits both steps per
resample and keeps honest width. One panel, one comparison; a few
minutes.
"""

import numpy as np

from stmaxstab import (Anisotropy, BlockPlan, ConstantRange,
                       DependenceConfig, DependenceModel, GridPanel,
                       TwoStepPipeline, basic_ci, block_bootstrap,
                       derived_rng, make_grid, sandwich, simulate_br_panel)

TRUE_RHO = 2.0
TRUE = DependenceConfig(alpha=1.0, range_model=ConstantRange(rho=TRUE_RHO),
                        aniso=Anisotropy())
T, B = 60, 100

ids, lon, lat = make_grid(5, 5)
coords = np.column_stack([lon, lat])
z = simulate_br_panel(TRUE, coords, T=T, seed=derived_rng(51, 0))
y = 8.0 + 1.5 * (z ** 0.08 - 1.0) / 0.08   # same GEV at every site
panel = GridPanel(site_ids=ids, lon=lon, lat=lat, t=np.arange(1, T + 1),
                  year=np.repeat(np.arange(T // 12 + 1) + 1, 12)[:T],
                  month=np.tile(np.arange(1, 13), T // 12 + 1)[:T],
                  enso=np.zeros(T), values=y, scale="data")

model = DependenceModel(template=DependenceConfig(
    alpha=1.0, range_model=ConstantRange(rho=1.0), aniso=Anisotropy()),
    free=("rho", "alpha"))
pipe = TwoStepPipeline(model=model, margins="two_step")
fit = pipe.fit(panel)
rho_hat = fit.constrained_values()[0]

# sandwich interval on the log scale (theta[0] is log rho)
se0 = sandwich(fit).se()[0]
s_lo, s_hi = np.exp(fit.theta[0] - 1.96 * se0), np.exp(
    fit.theta[0] + 1.96 * se0)

run = block_bootstrap(panel, pipe, BlockPlan.iid(T), B=B, seed=53,
                      base=fit)
ci = basic_ci(rho_hat, run.values[:, 0], param="rho", transform="log")

print(f"true rho {TRUE_RHO}, estimate {rho_hat:.3f} "
      f"({run.B_effective} bootstrap replicates)")
print(f"  sandwich 95% interval: [{s_lo:.3f}, {s_hi:.3f}]  "
      f"width {s_hi - s_lo:.3f}")
print(f"  bootstrap 95% interval: [{ci.lo:.3f}, {ci.hi:.3f}]  "
      f"width {ci.hi - ci.lo:.3f}")
print(f"  bias-corrected estimate: {ci.bias_corrected:.3f}")
print("\nexpect the bootstrap interval to be noticeably wider; over many "
      "panels the sandwich one undercovers badly while the bootstrap one "
      "stays near nominal")
