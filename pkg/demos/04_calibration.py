"""From the Parratt oracle to a complete quantum-optical parameter set.

The pipeline fits the five guided modes to the bare rocking curve, reads
the field amplitudes at the iron layers, and fits the single coupling scale
to one Parratt spectrum. The result is then compared with Parratt on an
angle-detuning grid around the third mode. Takes about ten seconds.

Run:  python3 demos/04_calibration.py [out.json]
"""
import sys

import numpy as np

from nucav import calibrate, io, parratt, qomodel
from nucav.domain import load_stack

stack = load_stack("eit_cavity")
res = calibrate.calibrate_pipeline(stack)
rep = res.mode_report
print(f"status {res.status}; mode fit rms {rep.residual_rms:.4f}, multimodal: {rep.multimodal}")
ref, ref_cs = io.load_params("eit_params")
for j in range(res.params.n_modes):
    p = res.params
    print(
        f"  mode {j + 1}: theta0 {p.theta0[j] * 1e3:.4f} ({ref.theta0[j] * 1e3:.4f})"
        f"  kappa {p.kappa[j]:9.3g} ({ref.kappa[j]:9.3g})  kappa_R {p.kappa_r[j]:9.3g} ({ref.kappa_r[j]:9.3g})"
    )
print(f"coupling scale {res.scale_fit.scale:.1f} gamma (tabulated {ref_cs.scale:.2f})")

theta = np.linspace(3.3e-3, 3.7e-3, 41)
delta = np.linspace(-50, 50, 201)
diff = qomodel.grid(res.params, res.couplings, theta, delta).reflectance - parratt.grid(stack, theta, delta).reflectance
outer = np.abs(delta) >= 5
print(f"grid RMS difference: {np.sqrt(np.mean(diff[:, outer] ** 2)):.4f} for |Delta| >= 5, "
      f"{np.sqrt(np.mean(diff[:, ~outer] ** 2)):.4f} near resonance")

if len(sys.argv) > 1:
    io.save_params(sys.argv[1], res.params, res.couplings)
    print(f"parameters written to {sys.argv[1]}")
