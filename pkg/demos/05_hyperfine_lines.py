"""Magnetic hyperfine splitting: six Moessbauer lines in one cavity mode.

A magnetized iron layer splits the resonance into six M1 transitions. With
a beam that drives all polarization types, the general linear-response
solver shows all six lines at their hyperfine energies.

Run:  python3 demos/05_hyperfine_lines.py
"""
import numpy as np
from scipy.signal import find_peaks

from nucav import qomodel
from nucav.domain import PolarizationConfig, transition_table
from nucav.qomodel import CouplingSet, ModeParams

trans = transition_table(delta_g=25.0, delta_e=15.0)
mp = ModeParams([3.5e-3], [1e5], [3e4], -1.0)
cs = CouplingSet(np.array([[100.0 + 0j]]))
delta = np.linspace(-60, 60, 2401)

_, R = qomodel.general_solver(mp, cs, 3.5e-3, delta, pol=PolarizationConfig.isotropic(), transitions=trans)
signal = np.abs(np.abs(R) ** 2 - abs(qomodel.empty_cavity(mp, 3.5e-3)) ** 2)
peaks, _ = find_peaks(signal, prominence=0.05 * signal.max())

print("transition  energy  polarization  found at")
for t, p in zip(trans, delta[peaks]):
    print(f"    {t.mu}      {t.delta_E:+6.1f}   {t.polarization:<7s}      {p:+6.2f}")

_, R_pi = qomodel.general_solver(mp, cs, 3.5e-3, delta, pol=PolarizationConfig.unmagnetized(), transitions=trans)
sig_pi = np.abs(np.abs(R_pi) ** 2 - abs(qomodel.empty_cavity(mp, 3.5e-3)) ** 2)
pk, _ = find_peaks(sig_pi, prominence=0.05 * sig_pi.max())
print(f"\na pure pi beam drives only the two pi lines: {delta[pk].tolist()}")
