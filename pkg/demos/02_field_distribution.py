"""Field inside the cavity when the third guided mode is driven.

At theta ~ 3.5 mrad the third mode forms a standing wave with three
antinodes in the guiding layer. The EIT cavity places its first iron layer
in a node and the second in an antinode; the non-EIT cavity swaps the
roles. The complex field at the layer centres is what sets the nuclear
couplings in the quantum-optical model.

Run:  python3 demos/02_field_distribution.py
"""
import numpy as np
from scipy.signal import find_peaks

from nucav import calibrate, io, parratt
from nucav.domain import load_stack

for stack_name, params_name in (("eit_cavity", "eit_params"), ("non_eit_cavity", "non_eit_params")):
    stack = load_stack(stack_name)
    mp, cs = io.load_params(params_name)
    fm = parratt.field_map(stack.bare(), mp.theta0[2], depth_step=0.05)
    inside = (fm.depth > 3.0) & (fm.depth < stack.interfaces[-2])
    peaks, _ = find_peaks(fm.intensity[inside], prominence=0.2 * fm.intensity[inside].max())
    print(f"{stack_name}: third mode at {mp.theta0[2] * 1e3:.5f} mrad")
    print(f"  antinodes at depth {np.round(fm.depth[inside][peaks], 1).tolist()} nm")
    for i in stack.resonant_layer_ids:
        z = stack.layer_center(i)
        print(f"  Fe layer at {z:.1f} nm: |E|^2 = {abs(parratt.field_at(stack.bare(), mp.theta0[2], z)[()]) ** 2:.2f}")

    fa = calibrate.extract_field_amps(stack, mp)
    print("  field amplitudes at the layer centres, computed vs tabulated")
    for j in range(mp.n_modes):
        row = "  ".join(f"{a.real:+.3f}{a.imag:+.3f}i ({b.real:+.3f}{b.imag:+.3f}i)" for a, b in zip(fa[j], cs.field_amps[j]))
        print(f"    mode {j + 1}: {row}")
    print()
