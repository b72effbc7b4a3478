"""Electromagnetically induced transparency from two iron layers.

With the tabulated couplings the two cavities differ only in where the iron
layers sit. In the EIT cavity layer 1 barely couples to the driven mode but
is coupled to layer 2 through the other modes; the resulting control field
Omega_C opens a transparency window near resonance. The non-EIT cavity
shows a plain broadened Lorentzian.

Run:  python3 demos/03_eit_spectra.py
"""
import numpy as np

from nucav import io, qomodel

delta = np.linspace(-40, 40, 81)
for name in ("eit_params", "non_eit_params"):
    mp, cs = io.load_params(name)
    t3 = mp.theta0[2]
    c = qomodel.eit_coefficients(mp, cs, t3)
    print(f"{name}: theta = {t3 * 1e3:.5f} mrad")
    print(f"  |Omega1| = {abs(c.omega1):.3g}, |Omega2| = {abs(c.omega2):.3g}")
    print(f"  Lamb shifts {c.dls1:+.2f}, {c.dls2:+.2f};  widths {c.gam1:.2f}, {c.gam2:.2f} (gamma)")
    print(f"  |Omega_C| = {np.sqrt(abs(c.omega_c2)):.2f} gamma")
    r2 = np.abs(qomodel.reflection(mp, cs, t3, delta)) ** 2
    for d, v in zip(delta[::4], r2[::4]):
        print(f"   {d:+6.1f}  {'#' * int(round(40 * v)):<40s} {v:.3f}")
    print()
