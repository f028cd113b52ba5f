"""The stream-mixture loss model and its Monte Carlo validation.

A stream's cross-entropy is E + A/N^alpha + B_j; mixing J streams whose
residuals have pairwise correlation rho contracts the capacity term by
(1 + (J-1) rho) / J. The simulator draws the construction directly and the
measured excesses land on the closed forms.

Run: python demos/04_loss_model.py
"""

import numpy as np

from vps import ScalingParams, SimSpec, fit_params, simulate_ce_grid, vps_loss

CAP = 1e-3
params = ScalingParams(
    irreducible_entropy=0.0,
    capacity_coeff=CAP,
    capacity_exponent=1.0,
    model_size=1.0,
    correlation=0.0,
    biases=(0.0,) * 8,
)
spec = SimSpec(vocab_size=64, samples=200_000, seed=1, params=params)

print("Predicted vs measured capacity excess (200k samples):")
grid = simulate_ce_grid(spec, [1, 2, 4, 8], [0.0, 0.5, 1.0], dtype=np.float32)
print(f"  {'rho':>4} {'J':>2} {'predicted':>12} {'measured':>12} {'stderr':>9}")
for rho in (0.0, 0.5, 1.0):
    for J in (1, 2, 4, 8):
        res = grid[(rho, J)]
        pred = CAP * (1 + (J - 1) * rho) / J
        print(f"  {rho:>4} {J:>2} {pred:>12.3e} {res.mixture_excess:>12.3e} "
              f"{res.mixture_excess_stderr:>9.1e}")
print("  rho=1 rows are flat: perfectly correlated streams add nothing.")
print("  rho=0 rows shrink like 1/J: independent evidence compounds.")

print("\nSecond moment of the per-stream relative error (target 2A/N^alpha):")
res = grid[(0.5, 8)]
print(f"  measured {res.delta_sq_mean:.4e} vs target {2 * CAP:.4e} "
      f"(stderr {res.delta_sq_stderr:.1e})")

print("\nFitting the measured sweep back (the sweep is affine in 1/J, so the")
print("entropy offset must be pinned to identify correlation and capacity):")
js = [1, 2, 4, 8]
losses = [grid[(0.5, J)].mixture_excess for J in js]
fit = fit_params(js, losses, mode="streams", fixed={"irreducible_entropy": 0.0})
print(f"  fitted correlation {fit.params.correlation:.3f} (true 0.5), "
      f"capacity term {fit.params.capacity_term:.3e} (true {CAP:.1e})")
print("  closed-form check at J=8:",
      f"{vps_loss(ScalingParams(0.0, CAP, 1.0, 1.0, 0.5, (0.0,) * 8), 8):.3e}")
