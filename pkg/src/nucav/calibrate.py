"""Derive quantum-optical parameters from the Parratt oracle.

Three stages, composed by :func:`calibrate_pipeline`:

1. :func:`fit_modes` fits the empty-cavity multimode reflection to the bare
   oracle rocking curve |R|(theta).
2. :func:`extract_field_amps` reads the bare-cavity field at the centre of
   each resonant layer at every fitted mode angle.
3. :func:`fit_scale` fits the single global coupling scale so that the
   model spectrum matches the oracle spectrum at one angle.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import least_squares
from scipy.signal import find_peaks, peak_widths

from . import parratt, qomodel
from .domain import DEFAULT_UNITS, CavityStack, InputError, NucavError, Spectrum, UnitSystem
from .qomodel import CouplingSet, Envelope, ModeParams, cavity_detuning

log = logging.getLogger(__name__)

__all__ = [
    "FitError",
    "FitConfig",
    "FitReport",
    "ScaleFit",
    "PipelineResult",
    "detect_minima",
    "oracle_curve",
    "fit_modes",
    "extract_field_amps",
    "fit_scale",
    "calibrate_strength",
    "calibrate_pipeline",
]


class FitError(NucavError):
    """A fit could not be set up or did not converge."""


@dataclass(frozen=True)
class FitConfig:
    """Settings for the rocking-curve fit.

    Attributes
    ----------
    theta_range : (lo, hi) in rad
        Window of the least-squares objective.
    n_modes : int
    samples : int
        Oracle samples inside the window.
    loss : {"abs", "complex"}
        Fit |R| or the complex R (the latter with a free global phase).
    initializer : {"branches", "minima"}
        "minima" starts every mode at critical coupling; "branches" also
        tries the under- and overcritical seed of each mode and keeps the
        best fit.
    max_iter : int
        Budget of residual evaluations per local fit.
    tolerance : float
        ftol/xtol/gtol of the optimizer.
    restarts : int
        Extra fits from seeds with theta0 perturbed by up to
        ``perturbation``; disagreement flags multimodality.
    seed_margin : float
        Minima must lie this far (relative) below the envelope.
    seed_extent : float
        The oracle curve used for seeding extends to ``hi * seed_extent`` so
        a mode just above the window can still be seeded.
    """

    theta_range: tuple = (0.0, 5e-3)
    n_modes: int = 5
    samples: int = 2000
    loss: str = "abs"
    initializer: str = "branches"
    max_iter: int = 400
    tolerance: float = 1e-10
    restarts: int = 4
    perturbation: float = 0.05
    seed: int = 0
    seed_margin: float = 0.05
    seed_extent: float = 1.15

    def __post_init__(self):
        lo, hi = self.theta_range
        if not (0 <= lo < hi < np.pi / 2):
            raise InputError("theta_range must satisfy 0 <= lo < hi < pi/2")
        if self.n_modes < 1:
            raise InputError("n_modes must be >= 1")
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")
        if self.loss not in ("abs", "complex"):
            raise InputError(f"unknown loss {self.loss!r}")
        if self.initializer not in ("branches", "minima"):
            raise InputError(f"unknown initializer {self.initializer!r}")
        if self.samples < 10 or self.max_iter < 1 or self.restarts < 0:
            raise InputError("samples >= 10, max_iter >= 1 and restarts >= 0 required")
        object.__setattr__(self, "theta_range", (float(lo), float(hi)))

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "theta_range_mrad" in d:
            known["theta_range"] = tuple(x * 1e-3 for x in d["theta_range_mrad"])
        unknown = set(d) - set(cls.__dataclass_fields__) - {"theta_range_mrad"}
        if unknown:
            raise InputError(f"unknown fit settings: {sorted(unknown)}")
        return cls(**known)


@dataclass
class FitReport:
    """Outcome of :func:`fit_modes`.

    ``params`` is None only when no fit could be attempted.
    """

    params: Optional[ModeParams]
    residual_rms: float
    converged: bool
    iterations: int
    criticality: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multimodal: bool = False
    restart_theta0: list = field(default_factory=list)
    global_phase: float = 0.0
    message: str = ""
    elapsed_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "params": None if self.params is None else self.params.to_dict(),
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "iterations": self.iterations,
            "criticality": np.asarray(self.criticality).tolist(),
            "multimodal": self.multimodal,
            "restart_theta0_mrad": [[t * 1e3 for t in ts] for ts in self.restart_theta0],
            "global_phase": self.global_phase,
            "message": self.message,
        }


# ---------------------------------------------------------------------------
# rocking-curve fit


def oracle_curve(stack: CavityStack, cfg: FitConfig, units: UnitSystem = DEFAULT_UNITS) -> Spectrum:
    """Bare-cavity Parratt curve sampled for :func:`fit_modes`.

    ``cfg.samples`` points cover the window; the grid continues with the same
    spacing up to ``hi * seed_extent``.
    """
    lo, hi = cfg.theta_range
    step = (hi - lo) / (cfg.samples - 1)
    start = lo if lo > 0 else step
    theta = np.arange(start, hi * cfg.seed_extent + 0.5 * step, step)
    return parratt.curve(stack.bare(), theta, 0.0, units)


def top_envelope(stack: CavityStack) -> Envelope:
    """Envelope from the mirror material right below the surface."""
    top = stack.layers[1]
    return Envelope(top.delta, top.beta)


def detect_minima(theta, absR, envelope=None, margin: float = 0.05):
    """Resonance seeds: local minima of the smoothed |R| below the envelope.

    Returns
    -------
    idx : int array of minimum positions
    kappa_width : array
        Full width at half prominence of each dip (rad).
    depth : array
        |R_min| / |envelope| at each minimum.
    """
    theta = np.asarray(theta, dtype=float)
    a = uniform_filter1d(np.asarray(absR, dtype=float), size=3, mode="nearest")
    env = np.ones_like(a) if envelope is None else np.abs(envelope(theta))
    idx, _ = find_peaks(-a)
    idx = idx[a[idx] < (1.0 - margin) * env[idx]]
    if idx.size == 0:
        return idx, np.zeros(0), np.zeros(0)
    w, _, left, right = peak_widths(-a, idx, rel_height=0.5)
    grid = np.arange(theta.size)
    width = np.interp(right, grid, theta) - np.interp(left, grid, theta)
    return idx, width, np.clip(a[idx] / env[idx], 0.0, 0.95)


class _CurveModel:
    """Vectorised empty-cavity model over a packed parameter vector.

    x = [theta0 (mrad) x J, log kappa x J, log kappa_R x J, Re r, Im r (, phase)].
    """

    def __init__(self, theta, target, env_vals, n_modes, omega, loss):
        self.theta = theta
        self.target = target
        self.env = env_vals
        self.J = n_modes
        self.omega = omega
        self.loss = loss

    def unpack(self, x):
        J = self.J
        return x[:J] * 1e-3, np.exp(x[J : 2 * J]), np.exp(x[2 * J : 3 * J]), complex(x[3 * J], x[3 * J + 1])

    def evaluate(self, x):
        t0, k, kr, r = self.unpack(x)
        dc = cavity_detuning(self.theta[:, None], t0, self.omega)
        out = self.env * (r + (2.0 * kr / (k + 1j * dc)).sum(axis=1))
        if self.loss == "complex":
            out = out * np.exp(1j * x[-1])
        return out

    def residual(self, x):
        m = self.evaluate(x)
        if self.loss == "abs":
            return np.abs(m) - np.abs(self.target)
        d = m - self.target
        return np.concatenate([d.real, d.imag])

    def pack(self, t0, k, kr, r, phase=0.0):
        x = np.concatenate([np.asarray(t0) * 1e3, np.log(k), np.log(kr), [r.real, r.imag]])
        return np.append(x, phase) if self.loss == "complex" else x


    def bounds(self, theta_max):
        J = self.J
        lo = np.concatenate([np.full(J, 1e-6), np.zeros(2 * J), [-1.5, -1.5]])
        hi = np.concatenate([np.full(J, theta_max * 1e3), np.full(2 * J, 45.0), [1.5, 1.5]])
        if self.loss == "complex":
            lo, hi = np.append(lo, -np.inf), np.append(hi, np.inf)
        return lo, hi

    def seed_phase(self, x):
        """Global phase aligning the model at `x` with the target."""
        x = np.append(x[: 3 * self.J + 2], 0.0)
        return float(np.angle(np.sum(self.target * np.conj(self.evaluate(x)))))


def _local_fit(model: _CurveModel, x0, cfg: FitConfig, bounds):
    if model.loss == "complex":
        x0 = np.append(x0[:-1], model.seed_phase(x0))
    x0 = np.clip(x0, bounds[0], bounds[1])
    return least_squares(
        model.residual,
        x0,
        bounds=bounds,
        method="trf",
        x_scale="jac",
        max_nfev=cfg.max_iter,
        ftol=cfg.tolerance,
        xtol=cfg.tolerance,
        gtol=cfg.tolerance,
    )


def _valid(model: _CurveModel, x) -> bool:
    t0, k, kr, r = model.unpack(x)
    return bool(np.all(np.diff(t0) > 0) and np.all(t0 > 0) and 0.8 <= abs(r) <= 1.2)


def fit_modes(curve: Spectrum, cfg: FitConfig = FitConfig(), envelope: Optional[Envelope] = None,
              omega: float = DEFAULT_UNITS.omega) -> FitReport:
    """Fit J guided modes plus the complex surface amplitude to an oracle curve.

    Parameters
    ----------
    curve : Spectrum
        Complex oracle reflection versus angle (single detuning column).
    cfg : FitConfig
    envelope : Envelope, optional
        Fixed mirror envelope (usually :func:`top_envelope` of the stack).
    omega : float
        Photon energy in gamma.

    Returns
    -------
    FitReport
        ``converged`` is False if the optimizer ran out of budget; the
        parameters of the best attempt are still reported.

    Raises
    ------
    FitError
        If fewer than ``cfg.n_modes`` minima are found.
    """
    t_start = time.perf_counter()
    theta = curve.theta
    values = curve.values[:, 0]
    lo, hi = cfg.theta_range
    win = (theta >= lo) & (theta <= hi)
    if win.sum() < 3 * cfg.n_modes + 2:
        raise FitError("oracle curve has too few samples inside the fit window")

    idx, width, depth = detect_minima(theta, np.abs(values), envelope, cfg.seed_margin)
    if idx.size < cfg.n_modes:
        raise FitError(f"found {idx.size} resonance minima, {cfg.n_modes} modes requested")
    idx, width, depth = idx[: cfg.n_modes], width[: cfg.n_modes], depth[: cfg.n_modes]
    t0 = theta[idx]
    k0 = np.maximum(omega * t0 * 0.5 * width, 1e-6 * omega * t0 * t0)

    env_vals = np.ones(win.sum()) if envelope is None else envelope(theta[win])
    model = _CurveModel(theta[win], values[win], env_vals, cfg.n_modes, omega, cfg.loss)

    bounds = model.bounds(max(theta[-1], hi) * 1.5)
    signs = [(0,) * cfg.n_modes]
    if cfg.initializer == "branches":
        signs = list(itertools.product((-1, 1), repeat=cfg.n_modes))

    best = None
    for sg in signs:
        kr0 = 0.5 * k0 * (1.0 + np.asarray(sg) * depth)
        x0 = model.pack(t0, k0, np.maximum(kr0, 1e-3 * k0), complex(-1.0, 0.0))
        sol = _local_fit(model, x0, cfg, bounds)
        if _valid(model, sol.x) and (best is None or sol.cost < best[0].cost):
            best = (sol, sg)
    if best is None:
        return FitReport(None, float("nan"), False, 0, message="no start produced valid parameters")
    sol, sg = best

    # restarts from perturbed angles
    rng = np.random.default_rng(cfg.seed)
    ref = np.sort(model.unpack(sol.x)[0])
    sets, multimodal = [ref], False
    for _ in range(cfg.restarts):
        tp = np.sort(t0 * (1.0 + rng.uniform(-cfg.perturbation, cfg.perturbation, t0.size)))
        kr0 = 0.5 * k0 * (1.0 + np.asarray(sg) * depth)
        alt = _local_fit(model, model.pack(tp, k0, np.maximum(kr0, 1e-3 * k0), complex(-1.0, 0.0)), cfg, bounds)
        ts = np.sort(model.unpack(alt.x)[0])
        sets.append(ts)
        if not np.allclose(ts, ref, rtol=1e-3, atol=0):
            multimodal = True
        if _valid(model, alt.x) and alt.cost < sol.cost * (1 - 1e-9):
            sol = alt

    t, k, kr, r = model.unpack(sol.x)
    params = ModeParams(t, k, kr, r, envelope, omega)
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    converged = bool(sol.status > 0)
    msg = sol.message if converged else f"no convergence within {cfg.max_iter} evaluations"
    if multimodal:
        msg += "; perturbed restarts reached different angle sets"
    log.info("fit_modes: rms=%.3g converged=%s multimodal=%s", rms, converged, multimodal)
    return FitReport(
        params=params,
        residual_rms=rms,
        converged=converged,
        iterations=int(sol.nfev),
        criticality=params.criticality,
        multimodal=multimodal,
        restart_theta0=[s.tolist() for s in sets],
        global_phase=float(sol.x[-1]) if cfg.loss == "complex" else 0.0,
        message=msg,
        elapsed_s=time.perf_counter() - t_start,
    )


# ---------------------------------------------------------------------------
# couplings


def extract_field_amps(stack: CavityStack, mp: ModeParams, units: UnitSystem = DEFAULT_UNITS) -> np.ndarray:
    """Bare-cavity field at each resonant layer centre for every mode angle.

    Returns a complex (modes x layers) matrix for unit incident intensity.
    Nuclear strengths play no role.
    """
    ids = stack.resonant_layer_ids
    if not ids:
        raise InputError("stack has no resonant layers")
    if np.any(mp.theta0 <= 0) or np.any(mp.theta0 >= np.pi / 2):
        raise InputError("mode angles outside (0, pi/2)")
    bare = stack.bare()
    z = [bare.layer_center(i) for i in ids]
    return np.array([parratt.field_at(bare, t, z, units=units) for t in mp.theta0])


@dataclass(frozen=True)
class ScaleFit:
    """Result of :func:`fit_scale`; ``scale`` is the collective g*sqrt(N) in gamma."""

    scale: float
    residual_rms: float
    couplings: CouplingSet
    theta: float
    strength: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "scale_gamma": self.scale,
            "residual_rms": self.residual_rms,
            "theta_mrad": self.theta * 1e3,
            "strength": self.strength,
        }


def _scale_model(mp, field_amps, theta, delta, model_kw):
    def reflectance(s):
        cs = CouplingSet.from_field_amps(field_amps, s)
        return np.abs(qomodel.reflection(mp, cs, theta, delta, **model_kw)) ** 2

    return reflectance


def fit_scale(
    oracle: Spectrum,
    mp: ModeParams,
    field_amps,
    theta: Optional[float] = None,
    bounds=(1.0, 1e5),
    scan: int = 61,
    exclude: float = 0.0,
    **model_kw,
) -> ScaleFit:
    """Fit the global coupling scale s = g~ sqrt(N) to an oracle spectrum.

    Minimises sum ||R_model(Delta; s)|^2 - |R_oracle(Delta)|^2|^2 with a
    logarithmic scan over `bounds` followed by a bounded local refinement.

    Parameters
    ----------
    oracle : Spectrum
        Oracle reflection versus detuning at one angle.
    theta : float, optional
        Angle of the model; defaults to the oracle's angle.
    exclude : float
        Detunings with |Delta| < exclude are left out of the objective.
    model_kw
        Forwarded to :func:`nucav.qomodel.reflection`.

    Raises
    ------
    FitError
        If the objective does not depend on s (no nuclear signal).
    """
    if oracle.theta.size != 1:
        raise InputError("fit_scale needs a spectrum at a single angle")
    theta = float(oracle.theta[0]) if theta is None else float(theta)
    keep = np.abs(oracle.delta) >= exclude
    delta = oracle.delta[keep]
    target = oracle.reflectance[0, keep]
    fa = np.asarray(field_amps, dtype=complex)
    if not np.any(fa):
        raise FitError("flat objective: all field amplitudes vanish (decoupled geometry)")
    if np.ptp(target) < 1e-12:
        raise FitError("flat objective: oracle shows no nuclear signal (strength zero?)")

    refl = _scale_model(mp, fa, theta, delta, model_kw)
    res = lambda p: refl(np.exp(p[0])) - target
    grid = np.linspace(np.log(bounds[0]), np.log(bounds[1]), scan)
    costs = np.array([np.sum(res([p]) ** 2) for p in grid])
    if np.ptp(costs) <= 1e-12 * (1.0 + costs.max()):
        raise FitError("flat objective: model spectrum independent of the coupling scale")
    p0 = grid[int(np.argmin(costs))]
    sol = least_squares(res, [p0], bounds=([np.log(bounds[0])], [np.log(bounds[1])]), xtol=1e-12, ftol=1e-12)
    s = float(np.exp(sol.x[0]))
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return ScaleFit(s, rms, CouplingSet.from_field_amps(fa, s), theta)


def calibrate_strength(
    stack: CavityStack,
    mp: ModeParams,
    field_amps,
    target_scale: float,
    theta: Optional[float] = None,
    delta=None,
    max_iter: int = 30,
    rtol: float = 1e-6,
    units: UnitSystem = DEFAULT_UNITS,
    **fit_kw,
):
    """Resonant strength chi0 of the oracle for which the fitted scale equals `target_scale`.

    In the perturbative regime the fitted scale grows like sqrt(chi0), so the
    fixed-point update ``chi0 <- chi0 * (target / s)^2`` converges quickly when
    started from the stack's own strength.

    Returns
    -------
    (chi0, ScaleFit)
    """
    if not target_scale > 0:
        raise InputError("target_scale must be positive")
    ids = stack.resonant_layer_ids
    if not ids:
        raise InputError("stack has no resonant layers")
    theta = float(mp.theta0[min(2, mp.n_modes - 1)]) if theta is None else float(theta)
    delta = np.linspace(-50, 50, 201) if delta is None else np.asarray(delta, dtype=float)
    chi0 = stack.layers[ids[0]].nuclear.strength or 1e-4
    for it in range(max_iter):
        oracle = parratt.spectrum(stack.with_strength(chi0), theta, delta, units)
        sf = fit_scale(oracle, mp, field_amps, theta, **fit_kw)
        ratio = target_scale / sf.scale
        log.debug("calibrate_strength: iter %d chi0=%.6g s=%.6g", it, chi0, sf.scale)
        if abs(ratio - 1.0) < rtol:
            return chi0, replace(sf, strength=chi0)
        chi0 *= ratio**2
    raise FitError(f"strength calibration did not reach scale {target_scale} in {max_iter} steps")


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    """Everything :func:`calibrate_pipeline` produced.

    ``status`` is "ok", "no resonant layers" or "fit not converged".
    """

    status: str
    mode_report: FitReport
    params: Optional[ModeParams] = None
    couplings: Optional[CouplingSet] = None
    scale_fit: Optional[ScaleFit] = None
    stack: Optional[CavityStack] = None

    def parameter_file(self) -> dict:
        """qomodel parameter file (see :func:`nucav.io.save_params`)."""
        if self.params is None:
            raise FitError(f"no parameters available (status: {self.status})")
        d = self.params.to_dict()
        if self.couplings is not None:
            d["couplings"] = self.couplings.to_dict()
        return d

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "mode_fit": self.mode_report.to_dict(),
            "scale_fit": None if self.scale_fit is None else self.scale_fit.to_dict(),
        }


def calibrate_pipeline(
    stack: CavityStack,
    cfg: FitConfig = FitConfig(),
    theta: Optional[float] = None,
    delta=None,
    target_scale: Optional[float] = None,
    exclude: float = 5.0,
    units: UnitSystem = DEFAULT_UNITS,
    **model_kw,
) -> PipelineResult:
    """Mode fit, field amplitudes and coupling scale in one go.

    Parameters
    ----------
    theta : float, optional
        Angle of the scale fit; defaults to the third fitted mode (or the
        last one if fewer).
    delta : array, optional
        Detuning grid of the scale fit, default -50..50 gamma.
    target_scale : float, optional
        If given, the oracle's resonant strength is first calibrated so that
        it corresponds to this coupling scale.
    exclude : float
        Half-width (gamma) of the band around Delta = 0 left out of the scale
        fit. There the nuclei are no small perturbation of the cavity field
        and the model is not expected to hold.

    Errors from each stage are re-raised with the stage name prepended.
    """
    try:
        report = fit_modes(oracle_curve(stack, cfg, units), cfg, top_envelope(stack), units.omega)
    except NucavError as exc:
        raise type(exc)(f"fit_modes: {exc}") from exc
    if report.params is None or not report.converged:
        return PipelineResult("fit not converged", report, report.params)
    mp = report.params
    if not stack.resonant_layer_ids:
        return PipelineResult("no resonant layers", report, mp)

    try:
        fa = extract_field_amps(stack, mp, units)
    except NucavError as exc:
        raise type(exc)(f"extract_field_amps: {exc}") from exc

    theta = float(mp.theta0[min(2, mp.n_modes - 1)]) if theta is None else float(theta)
    delta = np.linspace(-50, 50, 201) if delta is None else np.asarray(delta, dtype=float)
    try:
        if target_scale is not None:
            chi0, sf = calibrate_strength(stack, mp, fa, target_scale, theta, delta, units=units, exclude=exclude, **model_kw)
            stack = stack.with_strength(chi0)
        else:
            oracle = parratt.spectrum(stack, theta, delta, units)
            sf = fit_scale(oracle, mp, fa, theta, exclude=exclude, **model_kw)
    except NucavError as exc:
        raise type(exc)(f"fit_scale: {exc}") from exc
    return PipelineResult("ok", report, mp, sf.couplings, sf, stack)
