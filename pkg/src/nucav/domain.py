"""Core value types shared by the Parratt and quantum-optical engines.

All energies (detunings, decay rates, hyperfine splittings) are expressed in
units of the natural nuclear linewidth gamma. Angles are in radians,
thicknesses in nm.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

HC_EV_NM = 1239.841984  # h*c in eV*nm


class NucavError(Exception):
    """Base class for all package errors."""


class InputError(NucavError, ValueError):
    """Invalid or unparsable input (stack/parameter files, arguments)."""


class NumericalError(NucavError, ArithmeticError):
    """Numerical failure: singular systems, non-finite wavevectors."""


@dataclass(frozen=True)
class UnitSystem:
    """Energy scale of the Mossbauer transition.

    ``gamma_ev`` is the natural linewidth, the canonical internal energy unit;
    ``omega0_ev`` the transition energy.
    """

    gamma_ev: float = 4.7e-9
    omega0_ev: float = 14.4e3

    def __post_init__(self):
        if not (self.gamma_ev > 0 and self.omega0_ev > 0):
            raise InputError("gamma_ev and omega0_ev must be positive")

    @property
    def omega(self) -> float:
        """Photon energy in units of gamma."""
        return self.omega0_ev / self.gamma_ev

    @property
    def wavelength_nm(self) -> float:
        return HC_EV_NM / self.omega0_ev

    @property
    def k0(self) -> float:
        """Vacuum wavenumber in 1/nm."""
        return 2.0 * math.pi / self.wavelength_nm


DEFAULT_UNITS = UnitSystem()


def ev_to_gamma(x, units: UnitSystem = DEFAULT_UNITS):
    """Convert an energy in eV to units of the nuclear linewidth."""
    return np.asarray(x, dtype=float) / units.gamma_ev if np.ndim(x) else x / units.gamma_ev


# ---------------------------------------------------------------------------
# hyperfine transitions

POLARIZATIONS = ("sigma-", "pi", "sigma+")

# (ground factor, excited factor, CG coefficient, polarization)
_M1_TABLE = (
    (-0.5, -1.5, 1.0, "sigma-"),
    (-0.5, -0.5, math.sqrt(2.0 / 3.0), "pi"),
    (-0.5, +0.5, math.sqrt(1.0 / 3.0), "sigma+"),
    (+0.5, -0.5, math.sqrt(1.0 / 3.0), "sigma-"),
    (+0.5, +0.5, math.sqrt(2.0 / 3.0), "pi"),
    (+0.5, +1.5, 1.0, "sigma+"),
)


@dataclass(frozen=True)
class Transition:
    mu: int
    delta_E: float
    cg: float
    polarization: str

    @property
    def ground(self) -> int:
        """Index (1 or 2) of the hyperfine ground state."""
        return 1 if self.mu <= 3 else 2


def transition_table(delta_g: float = 0.0, delta_e: float = 0.0) -> list[Transition]:
    """The six M1 transitions of 57Fe for the given hyperfine splittings.

    Parameters
    ----------
    delta_g, delta_e : float
        Ground and excited state splittings in units of gamma.

    Returns
    -------
    list of Transition, ordered mu = 1..6.
    """
    return [
        Transition(mu, fg * delta_g + fe * delta_e, cg, pol)
        for mu, (fg, fe, cg, pol) in enumerate(_M1_TABLE, start=1)
    ]


def collapsed_transition() -> Transition:
    """Single effective transition of an unmagnetized layer.

    The symmetric superposition of the two pi transitions (mu = 2, 5) acts as
    one transition whose coefficient is the norm sqrt(2 * 2/3).
    """
    return Transition(0, 0.0, math.sqrt(4.0 / 3.0), "pi")


@dataclass(frozen=True)
class PolarizationConfig:
    """Polarization overlaps between transitions and in/out beams.

    Attributes
    ----------
    in_overlap : (T,) complex
        d_mu^* . a_in
    out_overlap : (T,) complex
        a_out^* . d_mu
    pair_overlap : (T, T) complex
        d_mu^* . d_nu
    """

    in_overlap: np.ndarray
    out_overlap: np.ndarray
    pair_overlap: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.in_overlap, dtype=complex)
        b = np.asarray(self.out_overlap, dtype=complex)
        p = np.asarray(self.pair_overlap, dtype=complex)
        if a.ndim != 1 or b.shape != a.shape or p.shape != (a.size, a.size):
            raise InputError("inconsistent polarization overlap shapes")
        if not np.allclose(p, p.conj().T, atol=1e-12):
            raise InputError("pair_overlap must be Hermitian")
        if not np.allclose(np.diag(p), 1.0, atol=1e-12):
            raise InputError("pair_overlap must have unit diagonal")
        object.__setattr__(self, "in_overlap", a)
        object.__setattr__(self, "out_overlap", b)
        object.__setattr__(self, "pair_overlap", p)

    def __len__(self):
        return self.in_overlap.size

    @classmethod
    def from_beam(cls, in_pol, out_pol=None, transitions: Sequence[Transition] | None = None):
        """Overlaps for beams given in the spherical basis (sigma-, pi, sigma+).

        The dipole unit vectors of transitions with equal polarization type
        coincide; distinct types are orthogonal.
        """
        transitions = transition_table() if transitions is None else list(transitions)
        a_in = np.asarray(in_pol, dtype=complex)
        a_out = a_in if out_pol is None else np.asarray(out_pol, dtype=complex)
        if a_in.shape != (3,) or a_out.shape != (3,):
            raise InputError("beam polarizations need three spherical components")
        idx = np.array([POLARIZATIONS.index(t.polarization) for t in transitions])
        pair = (idx[:, None] == idx[None, :]).astype(complex)
        return cls(a_in[idx], a_out[idx].conj(), pair)

    @classmethod
    def unmagnetized(cls):
        """Linear beam driving only the pi transitions mu = 2, 5."""
        return cls.from_beam([0.0, 1.0, 0.0])

    @classmethod
    def isotropic(cls):
        """Beam with equal weight on all three polarization types."""
        return cls.from_beam(np.full(3, 1.0 / math.sqrt(3.0)))

    @classmethod
    def collapsed(cls):
        """Overlaps matching :func:`collapsed_transition`."""
        return cls(np.ones(1), np.ones(1), np.ones((1, 1)))


# ---------------------------------------------------------------------------
# cavity stack


@dataclass(frozen=True)
class NuclearSpec:
    """Resonant part of a layer's refractive index.

    ``strength`` is the dimensionless amplitude chi0 of the resonant index:
    on resonance an unmagnetized layer gains ``i * strength`` in n.
    ``weights`` optionally gives the polarization weight of each of the six
    transitions; by default every polarization type counts equally.
    """

    strength: float
    delta_g: float = 0.0
    delta_e: float = 0.0
    magnetized: bool = False
    linewidth: float = 1.0
    weights: Optional[tuple] = None

    def __post_init__(self):
        if not self.strength >= 0:
            raise InputError(f"nuclear strength must be >= 0, got {self.strength}")
        if not self.magnetized and (self.delta_g != 0 or self.delta_e != 0):
            raise InputError("hyperfine splittings require magnetized=True")
        if self.weights is not None and len(self.weights) != 6:
            raise InputError("weights must list six transitions")

    def lines(self):
        """(offsets, relative strengths) of the resonance lines.

        Strengths are c_mu^2 * w_mu normalised so that they sum to one for any
        unit beam polarization.
        """
        trans = transition_table(self.delta_g, self.delta_e)
        if self.weights is None:
            w = np.full(6, 1.0 / 3.0)
        else:
            w = np.asarray(self.weights, dtype=float)
        cg2 = np.array([t.cg**2 for t in trans])
        offsets = np.array([t.delta_E for t in trans])
        return offsets, 0.75 * cg2 * w


@dataclass(frozen=True)
class Layer:
    material: str
    thickness: Optional[float]  # nm; None for a semi-infinite medium
    delta: float = 0.0
    beta: float = 0.0
    nuclear: Optional[NuclearSpec] = None

    def __post_init__(self):
        if not self.beta >= 0:
            raise InputError(f"{self.material}: beta must be >= 0")
        if self.thickness is not None and not (self.thickness > 0 and math.isfinite(self.thickness)):
            raise InputError(f"{self.material}: thickness must be positive and finite")
        if not math.isfinite(self.delta):
            raise InputError(f"{self.material}: delta must be finite")

    @property
    def semi_infinite(self) -> bool:
        return self.thickness is None

    @property
    def n_electronic(self) -> complex:
        return complex(1.0 - self.delta, self.beta)


def vacuum() -> Layer:
    return Layer("vacuum", None)


@dataclass(frozen=True)
class CavityStack:
    """Layers ordered from the top (vacuum) to the bottom (substrate)."""

    layers: tuple
    name: str = ""

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if len(layers) < 2:
            raise InputError("a stack needs at least an ambient and a substrate medium")
        if not (layers[0].semi_infinite and layers[-1].semi_infinite):
            raise InputError("first and last layers must be semi-infinite")
        if any(l.semi_infinite for l in layers[1:-1]):
            raise InputError("only the outermost layers may be semi-infinite")
        if layers[0].delta != 0 or layers[0].beta != 0:
            raise InputError("the ambient medium must be vacuum")
        if layers[0].nuclear is not None or layers[-1].nuclear is not None:
            raise InputError("resonant nuclei must sit in a finite layer")

    @property
    def resonant_layer_ids(self) -> tuple:
        return tuple(i for i, l in enumerate(self.layers) if l.nuclear is not None)

    @property
    def interfaces(self) -> np.ndarray:
        """Depths (nm) of the interfaces below the ambient medium."""
        d = [l.thickness for l in self.layers[1:-1]]
        return np.concatenate([[0.0], np.cumsum(d)])

    def layer_center(self, i: int) -> float:
        z = self.interfaces
        if not 0 < i < len(self.layers) - 1:
            raise InputError(f"layer {i} has no finite center")
        return 0.5 * (z[i - 1] + z[i])

    def bare(self) -> "CavityStack":
        """Copy with all nuclear resonances switched off."""
        return self.with_strength(0.0)

    def with_strength(self, strength: float, ids=None) -> "CavityStack":
        ids = self.resonant_layer_ids if ids is None else ids
        layers = list(self.layers)
        for i in ids:
            layers[i] = replace(layers[i], nuclear=replace(layers[i].nuclear, strength=strength))
        return replace(self, layers=tuple(layers))

    def to_dict(self) -> dict:
        out = []
        for l in self.layers:
            d = {"material": l.material, "thickness_nm": l.thickness, "delta": l.delta, "beta": l.beta}
            if l.nuclear is not None:
                nuc = l.nuclear
                d["nuclear"] = {
                    "strength": nuc.strength,
                    "delta_g": nuc.delta_g,
                    "delta_e": nuc.delta_e,
                    "magnetized": nuc.magnetized,
                }
                if nuc.weights is not None:
                    d["nuclear"]["weights"] = list(nuc.weights)
            out.append(d)
        return {"name": self.name, "layers": out}

    @classmethod
    def from_dict(cls, data: dict) -> "CavityStack":
        try:
            layers = []
            for d in data["layers"]:
                nuc = d.get("nuclear")
                if nuc is not None:
                    w = nuc.get("weights")
                    nuc = NuclearSpec(
                        strength=float(nuc["strength"]),
                        delta_g=float(nuc.get("delta_g", 0.0)),
                        delta_e=float(nuc.get("delta_e", 0.0)),
                        magnetized=bool(nuc.get("magnetized", False)),
                        weights=None if w is None else tuple(float(x) for x in w),
                    )
                t = d.get("thickness_nm")
                layers.append(
                    Layer(
                        material=str(d["material"]),
                        thickness=None if t is None else float(t),
                        delta=float(d.get("delta", 0.0)),
                        beta=float(d.get("beta", 0.0)),
                        nuclear=nuc,
                    )
                )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed stack definition: {exc!r}") from exc
        return cls(tuple(layers), name=str(data.get("name", "")))


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class Spectrum:
    """Complex reflection coefficient sampled on an angle and/or detuning grid.

    ``values`` has shape ``(len(theta), len(delta))``.
    """

    theta: np.ndarray
    delta: np.ndarray
    values: np.ndarray
    engine: str
    params_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        de = np.atleast_1d(np.asarray(self.delta, dtype=float))
        v = np.asarray(self.values, dtype=complex).reshape(th.size, de.size)
        for name, g in (("theta", th), ("delta", de)):
            if g.size > 1 and not (np.all(np.diff(g) > 0) or np.all(np.diff(g) < 0)):
                raise InputError(f"{name} grid must be strictly monotonic")
        if not np.all(np.isfinite(v)):
            raise NumericalError("spectrum contains non-finite values")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "delta", de)
        object.__setattr__(self, "values", v)

    @property
    def reflectance(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def curve(self) -> np.ndarray:
        """Values as a 1-D array along the single non-trivial axis."""
        return self.values.ravel()


def params_hash(obj) -> str:
    """Short stable hash of a JSON-serialisable parameter description."""
    blob = json.dumps(obj, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# fixtures

FIXTURES = ("eit_cavity", "non_eit_cavity")


def _data_path(name: str):
    return resources.files("nucav").joinpath("data").joinpath(name)


def load_stack(source: Union[str, Path, dict]) -> CavityStack:
    """Load a stack from a JSON file, a dict, or a shipped fixture name."""
    if isinstance(source, dict):
        return CavityStack.from_dict(source)
    if isinstance(source, str) and source in FIXTURES:
        text = _data_path(f"{source}.json").read_text()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise InputError(f"cannot read stack file {source}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"stack file is not valid JSON: {exc}") from exc
    return CavityStack.from_dict(data)
