"""Semiclassical reflectivity of stratified media (Parratt recursion).

This is the reference engine: exact s-polarised reflection from the layer
stack, including the nuclear resonant contribution to the refractive index of
the 57Fe layers. It also provides the in-cavity field needed to derive the
quantum-optical coupling constants.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .domain import (
    DEFAULT_UNITS,
    CavityStack,
    InputError,
    Layer,
    NumericalError,
    Spectrum,
    UnitSystem,
    params_hash,
)

__all__ = [
    "layer_index",
    "wavevectors",
    "reflectivity",
    "FieldMap",
    "field_map",
    "field_at",
    "curve",
    "spectrum",
    "grid",
]


def layer_index(layer: Layer, delta=0.0):
    """Complex refractive index of `layer` at detuning `delta` (gamma units).

    The electronic part is ``1 - delta + i beta``. A resonant layer adds one
    Lorentzian per hyperfine line,
    ``-chi0 * s_mu * (g/2) / (Delta - dE_mu + i g/2)``, which raises Im(n)
    on resonance.
    """
    n = layer.n_electronic
    nuc = layer.nuclear
    if nuc is None or nuc.strength == 0:
        return np.full(np.shape(delta), n) if np.ndim(delta) else n
    if nuc.strength < 0:
        raise InputError("nuclear strength must be non-negative")
    offsets, weights = nuc.lines()
    half = 0.5 * nuc.linewidth
    d = np.asarray(delta, dtype=float)[..., None]
    res = -(weights * half / (d - offsets + 1j * half)).sum(axis=-1)
    out = n + nuc.strength * res
    return out if np.ndim(delta) else complex(out)


def wavevectors(stack: CavityStack, theta, delta=0.0, units: UnitSystem = DEFAULT_UNITS):
    """Normal wavevector components kz (1/nm) for every layer.

    Returns an array of shape ``broadcast(theta, delta).shape + (n_layers,)``.
    The root with Im(kz) >= 0 is taken, so waves decay into absorbing media.
    """
    theta = np.asarray(theta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    shape = np.broadcast_shapes(theta.shape, delta.shape)
    s2 = np.broadcast_to(np.sin(theta) ** 2, shape)[..., None]
    n = np.stack(
        [np.broadcast_to(layer_index(l, delta), shape) for l in stack.layers], axis=-1
    )
    with np.errstate(over="ignore", invalid="ignore"):
        kz = units.k0 * np.sqrt(s2 + n * n - 1.0 + 0j)
    kz = np.where(kz.imag < 0, -kz, kz)
    # ambient vacuum: kz = k0 sin(theta), real
    kz[..., 0] = units.k0 * np.sqrt(s2[..., 0])
    if not np.all(np.isfinite(kz)):
        raise NumericalError("non-finite wavevector; check optical constants")
    return kz


def _check_theta(theta):
    t = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t <= 0) or np.any(t >= np.pi / 2):
        raise InputError("grazing angle must lie in (0, pi/2)")


def _local_reflection(stack: CavityStack, kz):
    """Reflection ratios X_i = up / down at the lower interface of each layer.

    X_0 (ambient, lower interface = surface) is the total reflection
    coefficient; the substrate entry stays 0.
    """
    n = len(stack.layers)
    d = [l.thickness for l in stack.layers]
    X = np.zeros(kz.shape, dtype=complex)
    # substrate carries no upward wave
    for i in range(n - 2, -1, -1):
        ki, kj = kz[..., i], kz[..., i + 1]
        f = (ki - kj) / (ki + kj)
        if i + 1 < n - 1:
            ph = np.exp(2j * kj * d[i + 1])
            below = X[..., i + 1] * ph
        else:
            below = 0.0
        X[..., i] = (f + below) / (1.0 + f * below)
    return X


def reflectivity(stack: CavityStack, theta, delta=0.0, units: UnitSystem = DEFAULT_UNITS):
    """Complex reflection amplitude of the stack.

    `theta` (rad) and `delta` (gamma) broadcast against each other.
    """
    _check_theta(theta)
    kz = wavevectors(stack, theta, delta, units)
    R = _local_reflection(stack, kz)[..., 0]
    return R if R.ndim else complex(R)


@dataclass(frozen=True)
class FieldMap:
    """Total field inside and above the stack for unit incident amplitude.

    ``up``/``down`` hold, per layer, the amplitudes of the downward
    (``exp(+i kz z)``) and upward travelling waves at the top of the layer;
    for the ambient medium the reference plane is the surface z = 0.
    """

    depth: np.ndarray
    amplitude: np.ndarray
    down: np.ndarray
    up: np.ndarray
    kz: np.ndarray
    interfaces: np.ndarray
    reflection: complex

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2


def _amplitudes(stack: CavityStack, kz):
    """Down/up amplitude pairs per layer from the reflection ratios."""
    n = len(stack.layers)
    X = _local_reflection(stack, kz)
    A = np.zeros(n, dtype=complex)
    B = np.zeros(n, dtype=complex)
    A[0], B[0] = 1.0, X[0]
    for i in range(n - 1):
        if i == 0:
            E = A[0] + B[0]
        else:
            p = np.exp(1j * kz[i] * stack.layers[i].thickness)
            E = A[i] * p + B[i] / p
        # ratio at the top of layer i+1; continuity of E fixes the split
        x = X[i + 1]
        if i + 1 < n - 1:
            x = x * np.exp(2j * kz[i + 1] * stack.layers[i + 1].thickness)
        A[i + 1] = E / (1.0 + x)
        B[i + 1] = x * A[i + 1]
    return A, B


def _evaluate(stack: CavityStack, kz, A, B, z):
    z = np.asarray(z, dtype=float)
    zi = stack.interfaces
    # layer index for each depth: 0 above the surface, n-1 in the substrate
    idx = np.searchsorted(zi, z, side="right")
    top = np.where(idx == 0, 0.0, zi[np.maximum(idx - 1, 0)])
    dz = z - top
    k = kz[idx]
    return A[idx] * np.exp(1j * k * dz) + B[idx] * np.exp(-1j * k * dz)


def field_map(
    stack: CavityStack,
    theta: float,
    delta: float = 0.0,
    depth_step: float = 0.1,
    above: float = 5.0,
    below: float = 5.0,
    units: UnitSystem = DEFAULT_UNITS,
) -> FieldMap:
    """Sample the total field on a depth grid (nm, positive into the stack).

    The grid covers `above` nm of vacuum and `below` nm of substrate.
    """
    _check_theta(theta)
    if not depth_step > 0:
        raise InputError("depth_step must be positive")
    kz = wavevectors(stack, float(theta), float(delta), units)
    A, B = _amplitudes(stack, kz)
    zi = stack.interfaces
    z = np.arange(-above, zi[-1] + below + 0.5 * depth_step, depth_step)
    amp = _evaluate(stack, kz, A, B, z)
    return FieldMap(z, amp, A, B, kz, zi, complex(B[0]))


def field_at(stack: CavityStack, theta: float, z, delta: float = 0.0, units: UnitSystem = DEFAULT_UNITS):
    """Complex total field at the depths `z` (nm) for unit incident amplitude."""
    _check_theta(theta)
    kz = wavevectors(stack, float(theta), float(delta), units)
    A, B = _amplitudes(stack, kz)
    return _evaluate(stack, kz, A, B, z)


# ---------------------------------------------------------------------------
# grid wrappers


def _workers():
    try:
        return max(1, int(os.environ.get("NUCAV_THREADS", "1")))
    except ValueError:
        return 1


def _grid_values(stack, theta, delta, units, workers):
    if theta.size == 0 or delta.size == 0:
        raise InputError("empty grid")
    workers = _workers() if workers is None else workers
    if workers <= 1 or theta.size < 2:
        return reflectivity(stack, theta[:, None], delta[None, :], units)
    chunks = np.array_split(np.arange(theta.size), min(workers, theta.size))
    with ThreadPoolExecutor(workers) as ex:
        parts = list(ex.map(lambda c: reflectivity(stack, theta[c, None], delta[None, :], units), chunks))
    return np.concatenate(parts, axis=0)


def _spectrum(stack, theta, delta, units, workers, kind):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    vals = _grid_values(stack, theta, delta, units, workers)
    h = params_hash({"stack": stack.to_dict(), "units": [units.gamma_ev, units.omega0_ev]})
    return Spectrum(theta, delta, vals, engine="parratt", params_hash=h, meta={"kind": kind, "stack": stack.name})


def curve(stack: CavityStack, theta_grid, delta: float = 0.0, units: UnitSystem = DEFAULT_UNITS, workers=None) -> Spectrum:
    """Reflection versus angle at fixed detuning."""
    return _spectrum(stack, theta_grid, [delta], units, workers, "curve")


def spectrum(stack: CavityStack, theta: float, delta_grid, units: UnitSystem = DEFAULT_UNITS, workers=None) -> Spectrum:
    """Reflection versus detuning at fixed angle."""
    return _spectrum(stack, [theta], delta_grid, units, workers, "spectrum")


def grid(stack: CavityStack, theta_grid, delta_grid, units: UnitSystem = DEFAULT_UNITS, workers=None) -> Spectrum:
    """Reflection on the product grid theta x delta."""
    return _spectrum(stack, theta_grid, delta_grid, units, workers, "grid")
