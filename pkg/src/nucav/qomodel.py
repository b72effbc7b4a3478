"""Quantum-optical model of Mossbauer nuclei in a multimode thin-film cavity.

After adiabatic elimination of the cavity modes and restriction to linear
response, the nuclear coherences of L resonant layers obey a small linear
system whose coefficients are sums over the guided modes j of

    Omega_j = sqrt(2 kappa_R_j) / (kappa_j + i Delta_C_j)     (drive)
    zeta_j + i dLS_j = conj(1 / (kappa_j + i Delta_C_j))      (decay, shift)

Couplings are always the collective products ``g[j, l] * sqrt(N_l)`` and are
held in a :class:`CouplingSet`. Energies are in units of gamma.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .domain import (
    DEFAULT_UNITS,
    InputError,
    NumericalError,
    PolarizationConfig,
    Spectrum,
    Transition,
    collapsed_transition,
    params_hash,
)

SINGULAR_TOL = 1e-12
TWO_THIRDS = 2.0 / 3.0


# ---------------------------------------------------------------------------
# parameters


def envelope_fresnel(theta, delta: float, beta: float):
    """Fresnel reflection coefficient of a semi-infinite mirror material."""
    n = complex(1.0 - delta, beta)
    s = np.sin(np.asarray(theta, dtype=float))
    root = np.sqrt(s * s + n * n - 1.0 + 0j)
    root = np.where(root.imag < 0, -root, root)
    out = (s - root) / (s + root)
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class Envelope:
    """Total-reflection envelope of the top mirror material."""

    delta: float
    beta: float

    def __call__(self, theta):
        return envelope_fresnel(theta, self.delta, self.beta)


PT_ENVELOPE = Envelope(1.603365e-5, 2.56353e-6)


@dataclass(frozen=True)
class ModeParams:
    """Empty-cavity parameters of J guided modes.

    theta0 in rad, kappa and kappa_r in gamma, omega (photon energy) in gamma.
    ``r`` replaces the bare surface amplitude -1.
    """

    theta0: np.ndarray
    kappa: np.ndarray
    kappa_r: np.ndarray
    r: complex = -1.0
    envelope: Optional[Envelope] = None
    omega: float = DEFAULT_UNITS.omega

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        k = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        kr = np.atleast_1d(np.asarray(self.kappa_r, dtype=float))
        if t.size == 0:
            raise InputError("at least one cavity mode is required")
        if not (t.shape == k.shape == kr.shape):
            raise InputError("theta0, kappa and kappa_r must have equal length")
        if np.any(k <= 0) or np.any(kr <= 0):
            raise InputError("kappa and kappa_r must be positive")
        if np.any(np.diff(t) <= 0):
            raise InputError("theta0 must be strictly increasing")
        if not 0.8 <= abs(self.r) <= 1.2:
            raise InputError(f"|r| = {abs(self.r):.3f} outside the sanity band [0.8, 1.2]")
        object.__setattr__(self, "theta0", t)
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "kappa_r", kr)
        object.__setattr__(self, "r", complex(self.r))

    @property
    def n_modes(self) -> int:
        return self.theta0.size

    @property
    def criticality(self) -> np.ndarray:
        """2 kappa_R / kappa per mode; 1 is critical coupling."""
        return 2.0 * self.kappa_r / self.kappa

    def detunings(self, theta):
        """Cavity detunings Delta_C, shape ``theta.shape + (J,)``."""
        theta = np.asarray(theta, dtype=float)[..., None]
        return cavity_detuning(theta, self.theta0, self.omega)

    def to_dict(self) -> dict:
        d = {
            "modes": [
                {"theta0_mrad": t * 1e3, "kappa_gamma": k, "kappaR_gamma": kr}
                for t, k, kr in zip(self.theta0.tolist(), self.kappa.tolist(), self.kappa_r.tolist())
            ],
            "r": [self.r.real, self.r.imag],
            "omega_gamma": self.omega,
        }
        if self.envelope is not None:
            d["envelope"] = {"delta": self.envelope.delta, "beta": self.envelope.beta}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModeParams":
        try:
            modes = d["modes"]
            env = d.get("envelope")
            r = d.get("r", [-1.0, 0.0])
            return cls(
                theta0=[m["theta0_mrad"] * 1e-3 for m in modes],
                kappa=[m["kappa_gamma"] for m in modes],
                kappa_r=[m["kappaR_gamma"] for m in modes],
                r=complex(r[0], r[1]),
                envelope=None if env is None else Envelope(float(env["delta"]), float(env["beta"])),
                omega=float(d.get("omega_gamma", DEFAULT_UNITS.omega)),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise InputError(f"malformed mode parameters: {exc!r}") from exc


@dataclass(frozen=True)
class CouplingSet:
    """Collective couplings g[j, l] * sqrt(N_l), modes x layers.

    When built from field amplitudes, ``g = field_amps * scale``.
    """

    g: np.ndarray
    field_amps: Optional[np.ndarray] = None
    scale: Optional[float] = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=complex)
        if g.ndim != 2 or 0 in g.shape:
            raise InputError("coupling matrix must be 2-D (modes x layers) and non-empty")
        object.__setattr__(self, "g", g)
        if self.field_amps is not None:
            fa = np.asarray(self.field_amps, dtype=complex)
            if fa.shape != g.shape or self.scale is None:
                raise InputError("field amplitudes need matching shape and a scale")
            object.__setattr__(self, "field_amps", fa)

    @classmethod
    def from_field_amps(cls, field_amps, scale: float) -> "CouplingSet":
        fa = np.asarray(field_amps, dtype=complex)
        return cls(fa * scale, fa, float(scale))

    @property
    def n_modes(self) -> int:
        return self.g.shape[0]

    @property
    def n_layers(self) -> int:
        return self.g.shape[1]

    def G2(self, mode: int = 0) -> float:
        """sum_l |g[mode, l]|^2 N_l."""
        return float(np.sum(np.abs(self.g[mode]) ** 2))

    def scaled_layer(self, layer: int, factor: float) -> "CouplingSet":
        """Couplings after multiplying the number of nuclei in `layer` by `factor`."""
        g = self.g.copy()
        g[:, layer] *= np.sqrt(factor)
        return CouplingSet(g)

    def to_dict(self) -> dict:
        pairs = lambda m: [[[z.real, z.imag] for z in row] for row in m]
        if self.field_amps is not None:
            return {"field_amps": pairs(self.field_amps), "scale_gamma": self.scale}
        return {"matrix": pairs(self.g)}

    @classmethod
    def from_dict(cls, d: dict) -> "CouplingSet":
        try:
            cplx = lambda m: np.array([[complex(a, b) for a, b in row] for row in m])
            if "field_amps" in d:
                return cls.from_field_amps(cplx(d["field_amps"]), float(d["scale_gamma"]))
            return cls(cplx(d["matrix"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed couplings: {exc!r}") from exc


# ---------------------------------------------------------------------------
# cavity


def cavity_detuning(theta, theta0, omega: float = DEFAULT_UNITS.omega):
    """Detuning of a guided mode from the drive, controlled by the angle."""
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta)
    s0 = np.sin(theta0)
    # sqrt(c^2 + s0^2) - 1 without cancellation
    x = s0 * s0 - np.sin(theta) ** 2
    out = omega * x / (np.sqrt(c * c + s0 * s0) + 1.0)
    return out if np.ndim(out) else float(out)


def mode_response(mp: ModeParams, theta, detunings=None):
    """Per-mode factors ``1/(kappa + i Delta_C)`` and ``sqrt(2 kappa_R)``.

    `detunings` overrides the angle-derived Delta_C (shape ``(..., J)``).
    """
    dc = mp.detunings(theta) if detunings is None else np.asarray(detunings, dtype=float)
    inv = 1.0 / (mp.kappa + 1j * dc)
    return inv, np.sqrt(2.0 * mp.kappa_r)


def collective_rates(mp: ModeParams, theta, detunings=None):
    """(zeta_S, delta_LS) per mode: real and imaginary parts of 1/(kappa + i Delta_C)."""
    inv, _ = mode_response(mp, theta, detunings)
    return inv.real, inv.imag


def empty_cavity(mp: ModeParams, theta, detunings=None, heuristics: bool = True):
    """Reflection of the cavity without nuclear resonances.

    With ``heuristics`` the surface amplitude ``r`` and the mirror envelope of
    `mp` are applied; otherwise the bare ``-1 + sum_j 2 kappa_R / (kappa + i Delta_C)``.
    """
    inv, _ = mode_response(mp, theta, detunings)
    modes = (2.0 * mp.kappa_r * inv).sum(axis=-1)
    if not heuristics:
        return -1.0 + modes
    out = mp.r + modes
    if mp.envelope is not None:
        out = out * mp.envelope(theta)
    return out


def _nuclear_scale(mp, theta, nuclear_envelope):
    if nuclear_envelope and mp.envelope is not None:
        return mp.envelope(theta)
    return 1.0


def _check_couplings(mp: ModeParams, cs: CouplingSet):
    if cs.n_modes != mp.n_modes:
        raise InputError(f"couplings cover {cs.n_modes} modes, cavity has {mp.n_modes}")


# ---------------------------------------------------------------------------
# closed forms


def single_layer_multimode_rn(mp: ModeParams, cs: CouplingSet, theta, delta, gamma: float = 1.0, detunings=None):
    """Nuclear reflection of one unmagnetized layer coupled to J modes.

    A single Lorentzian whose shift and width collect the Lamb shift and
    superradiant decay contributed by every mode.
    """
    if cs.n_layers != 1:
        raise InputError("single_layer_multimode_rn needs exactly one layer")
    _check_couplings(mp, cs)
    theta, delta = np.broadcast_arrays(np.asarray(theta, float), np.asarray(delta, float))
    inv, sq = mode_response(mp, theta, detunings)
    g = cs.g[:, 0]
    drive = (sq * g * inv).sum(axis=-1)
    emit = (sq * g.conj() * inv).sum(axis=-1)
    coll = (np.abs(g) ** 2 * (1j * inv.real - inv.imag)).sum(axis=-1)
    out = -1j * TWO_THIRDS * drive * emit / (delta + 0.5j * gamma + TWO_THIRDS * coll)
    return out if out.ndim else complex(out)


def multilayer_singlemode_r(
    mp: ModeParams, cs: CouplingSet, theta, delta, gamma: float = 1.0, detunings=None, nuclear_envelope: bool = True
):
    """Total reflection for one mode and any number of unmagnetized layers.

    The layers act as one ensemble with G^2 = sum_l |g_l|^2 N_l.
    """
    if mp.n_modes != 1:
        raise InputError("multilayer_singlemode_r needs exactly one mode")
    _check_couplings(mp, cs)
    theta, delta = np.broadcast_arrays(np.asarray(theta, float), np.asarray(delta, float))
    inv, _ = mode_response(mp, theta, detunings)
    inv = inv[..., 0]
    G2 = TWO_THIRDS * cs.G2(0)
    kr = mp.kappa_r[0]
    nuc = -1j * 2.0 * kr * inv**2 * G2 / (delta + 0.5j * gamma + G2 * (1j * inv.real - inv.imag))
    out = empty_cavity(mp, theta, detunings) + _nuclear_scale(mp, theta, nuclear_envelope) * nuc
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class EITCoefficients:
    """Effective two-layer parameters (gamma units).

    omega1/omega2 drives, dls1/dls2 Lamb shifts, d12 coherent inter-layer
    coupling, gam1/gam2 superradiant widths, g12 cross damping, omega_c2 the
    squared control coupling and r1/r2 output couplings.
    """

    omega1: complex
    omega2: complex
    dls1: float
    dls2: float
    d12: complex
    gam1: float
    gam2: float
    g12: complex
    omega_c2: complex
    r1: complex
    r2: complex

    def swapped(self) -> "EITCoefficients":
        """Same physics with the layer labels exchanged."""
        return EITCoefficients(
            self.omega2, self.omega1, self.dls2, self.dls1, np.conj(self.d12),
            self.gam2, self.gam1, np.conj(self.g12), self.omega_c2, self.r2, self.r1,
        )


def eit_coefficients(mp: ModeParams, cs: CouplingSet, theta, detunings=None) -> EITCoefficients:
    """Coefficients of the two-layer effective Hamiltonian and Lindbladian."""
    if cs.n_layers != 2:
        raise InputError("eit_coefficients needs exactly two layers")
    _check_couplings(mp, cs)
    inv, sq = mode_response(mp, theta, detunings)
    zeta, dls = inv.real, inv.imag
    g1, g2 = cs.g[:, 0], cs.g[:, 1]
    rt = np.sqrt(TWO_THIRDS)
    sum_j = lambda x: x.sum(axis=-1)
    om1 = sum_j(sq * inv * rt * g1)
    om2 = sum_j(sq * inv * rt * g2)
    cross = TWO_THIRDS * g1 * g2.conj()
    d12 = sum_j(dls * cross)
    g12 = sum_j(zeta * cross)
    return EITCoefficients(
        omega1=om1,
        omega2=om2,
        dls1=sum_j(dls * TWO_THIRDS * np.abs(g1) ** 2),
        dls2=sum_j(dls * TWO_THIRDS * np.abs(g2) ** 2),
        d12=d12,
        gam1=sum_j(zeta * TWO_THIRDS * np.abs(g1) ** 2),
        gam2=sum_j(zeta * TWO_THIRDS * np.abs(g2) ** 2),
        g12=g12,
        omega_c2=(d12 - 1j * g12) * (np.conj(d12) - 1j * np.conj(g12)),
        r1=sum_j(-1j * sq * inv * rt * g1.conj()),
        r2=sum_j(-1j * sq * inv * rt * g2.conj()),
    )


def eit_coherences(c: EITCoefficients, delta, gamma: float = 1.0):
    """Steady-state coherences (rho_1G, rho_2G) of the two layers."""
    delta = np.asarray(delta, dtype=float)
    D1 = delta - c.dls1 + 1j * (0.5 * gamma + c.gam1)
    D2 = delta - c.dls2 + 1j * (0.5 * gamma + c.gam2)
    den = D1 * D2 - c.omega_c2
    if np.any(np.abs(den) < SINGULAR_TOL):
        raise NumericalError("two-layer system is singular at the requested detuning")
    rho1 = (D2 * c.omega1 - (-c.d12 + 1j * c.g12) * c.omega2) / den
    rho2 = (D1 * c.omega2 - (-np.conj(c.d12) + 1j * np.conj(c.g12)) * c.omega1) / den
    return rho1, rho2


def eit_reflection_full(
    mp: ModeParams, cs: CouplingSet, theta, delta, gamma: float = 1.0, detunings=None, nuclear_envelope: bool = True
):
    """Reflection of the two-layer cavity including both layer contributions."""
    c = eit_coefficients(mp, cs, theta, detunings)
    rho1, rho2 = eit_coherences(c, delta, gamma)
    out = empty_cavity(mp, theta, detunings) + _nuclear_scale(mp, theta, nuclear_envelope) * (c.r1 * rho1 + c.r2 * rho2)
    return out if np.ndim(out) else complex(out)


def eit_reflection_approx(
    mp: ModeParams, cs: CouplingSet, theta, delta, gamma: float = 1.0, detunings=None, nuclear_envelope: bool = True
):
    """EIT-form reflection for a layer 1 sitting in a node of the driven mode.

    Keeps only the second layer's output channel and neglects the collective
    shift and width of layer 1.
    """
    c = eit_coefficients(mp, cs, theta, detunings)
    delta = np.asarray(delta, dtype=float)
    probe = delta + 0.5j * gamma
    den = probe * (delta - c.dls2 + 1j * (0.5 * gamma + c.gam2)) - c.omega_c2
    nuc = c.r2 * c.omega2 * probe / den
    out = empty_cavity(mp, theta, detunings) + _nuclear_scale(mp, theta, nuclear_envelope) * nuc
    return out if np.ndim(out) else complex(out)


# ---------------------------------------------------------------------------
# general linear response


@dataclass(frozen=True)
class LinearResponseSystem:
    """Steady-state equations ``0 = (drift + i Delta) x + drive``.

    ``states`` labels each coherence <E_mu^{l}|rho|G> as (layer, mu).
    ``drift`` holds everything but the common detuning Delta.
    """

    states: tuple
    drive: np.ndarray
    drift: np.ndarray
    output: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.states)

    def matrix(self, delta):
        delta = np.asarray(delta, dtype=float)
        return self.drift + 1j * delta[..., None, None] * np.eye(self.dim)

    def solve(self, delta):
        """Coherence vectors, shape ``delta.shape + (dim,)``."""
        M = self.matrix(delta)
        smin = np.linalg.svd(M, compute_uv=False)[..., -1]
        if np.any(smin < SINGULAR_TOL):
            raise NumericalError("linear-response system is singular (degenerate parameters)")
        b = np.broadcast_to(-self.drive, M.shape[:-1])
        return np.linalg.solve(M, b[..., None])[..., 0]


def build_linear_system(
    mp: ModeParams,
    cs: CouplingSet,
    theta: float,
    pol: PolarizationConfig | None = None,
    transitions: Sequence[Transition] | None = None,
    gamma: float = 1.0,
    detunings=None,
) -> LinearResponseSystem:
    """Assemble the (layers x transitions) coherence equations at angle `theta`.

    Defaults to one collapsed transition per layer (unmagnetized).
    """
    _check_couplings(mp, cs)
    if transitions is None:
        transitions = [collapsed_transition()]
        pol = PolarizationConfig.collapsed() if pol is None else pol
    transitions = list(transitions)
    if pol is None:
        raise InputError("a polarization config is required for explicit transitions")
    if len(pol) != len(transitions):
        raise InputError(f"polarization config has {len(pol)} entries for {len(transitions)} transitions")
    if np.ndim(theta):
        raise InputError("build_linear_system takes a scalar angle")

    inv, sq = mode_response(mp, theta, detunings)
    L, T = cs.n_layers, len(transitions)
    c = np.array([t.cg for t in transitions])
    dE = np.array([t.delta_E for t in transitions])
    # state index a = l * T + mu
    gs = cs.g / np.sqrt(2.0)  # g sqrt(N/2)
    cw = np.kron(np.ones(L), c)
    drive = -1j * np.kron(np.ones(L), pol.in_overlap * c) * np.repeat((sq * inv) @ gs, T)
    # zeta_j + i dLS_j is exactly inv_j
    K = np.einsum("j,jl,jk->lk", inv, gs, gs.conj())
    drift = -np.kron(K, pol.pair_overlap) * np.outer(cw, cw)
    drift = drift + np.diag(-1j * np.tile(dE, L) - 0.5 * gamma)
    output = -1j * np.kron(np.ones(L), pol.out_overlap * c) * np.repeat((sq * inv) @ gs.conj(), T)
    states = tuple((l, t.mu) for l in range(L) for t in transitions)
    return LinearResponseSystem(states, drive, drift, output)


def general_solver(
    mp: ModeParams,
    cs: CouplingSet,
    theta: float,
    delta,
    pol: PolarizationConfig | None = None,
    transitions: Sequence[Transition] | None = None,
    gamma: float = 1.0,
    detunings=None,
    nuclear_envelope: bool = True,
):
    """Solve the linear-response system for any number of layers and modes.

    Returns
    -------
    coherences : ndarray, shape ``delta.shape + (L*T,)``
    R : complex ndarray, shape ``delta.shape``
    """
    sys_ = build_linear_system(mp, cs, theta, pol, transitions, gamma, detunings)
    x = sys_.solve(delta)
    R = empty_cavity(mp, theta, detunings) + _nuclear_scale(mp, theta, nuclear_envelope) * (x @ sys_.output)
    return x, (R if np.ndim(R) else complex(R))


# ---------------------------------------------------------------------------
# grid wrappers


def reflection(mp: ModeParams, cs: CouplingSet | None, theta: float, delta, method: str = "general", **kw):
    """Total reflection at one angle over detunings `delta`."""
    delta = np.asarray(delta, dtype=float)
    if cs is None or not np.any(cs.g):
        return np.broadcast_to(empty_cavity(mp, theta), delta.shape).astype(complex)
    if method == "closed-form":
        if cs.n_layers == 2:
            return np.asarray(eit_reflection_full(mp, cs, theta, delta, **kw))
        if mp.n_modes == 1:
            return np.asarray(multilayer_singlemode_r(mp, cs, theta, delta, **kw))
        if cs.n_layers == 1:
            return empty_cavity(mp, theta) + single_layer_multimode_rn(mp, cs, theta, delta)
        raise InputError("no closed form for this layer/mode combination")
    if method != "general":
        raise InputError(f"unknown method {method!r}")
    return np.asarray(general_solver(mp, cs, theta, delta, **kw)[1])


def _spectrum(mp, cs, theta, delta, method, kind, **kw):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if theta.size == 0 or delta.size == 0:
        raise InputError("empty grid")
    vals = np.empty((theta.size, delta.size), dtype=complex)
    for i, t in enumerate(theta):
        vals[i] = reflection(mp, cs, t, delta, method, **kw)
    h = params_hash({"modes": mp.to_dict(), "couplings": None if cs is None else cs.to_dict()})
    engine = "qo-closed-form" if method == "closed-form" else "qo-general"
    return Spectrum(theta, delta, vals, engine=engine, params_hash=h, meta={"kind": kind})


def curve(mp: ModeParams, cs: CouplingSet | None, theta_grid, delta: float = 0.0, method: str = "general", **kw) -> Spectrum:
    """Reflection versus angle at fixed detuning."""
    theta = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    if theta.size == 0:
        raise InputError("empty grid")
    if cs is None or not np.any(cs.g):
        vals = np.asarray(empty_cavity(mp, theta), dtype=complex)[:, None]
        h = params_hash({"modes": mp.to_dict(), "couplings": None})
        return Spectrum(theta, [delta], vals, engine="qo-general", params_hash=h, meta={"kind": "curve"})
    return _spectrum(mp, cs, theta, [delta], method, "curve", **kw)


def spectrum(mp: ModeParams, cs: CouplingSet | None, theta: float, delta_grid, method: str = "general", **kw) -> Spectrum:
    """Reflection versus detuning at fixed angle."""
    return _spectrum(mp, cs, [theta], delta_grid, method, "spectrum", **kw)


def grid(mp: ModeParams, cs: CouplingSet | None, theta_grid, delta_grid, method: str = "general", **kw) -> Spectrum:
    """Reflection on the product grid theta x delta."""
    return _spectrum(mp, cs, theta_grid, delta_grid, method, "grid", **kw)
