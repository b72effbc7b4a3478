"""Thin-film x-ray cavities with resonant Mossbauer nuclei.

Two engines compute the complex reflection coefficient of a grazing-incidence
cavity: :mod:`nucav.parratt` (exact semiclassical recursion) and
:mod:`nucav.qomodel` (quantum-optical multimode/multilayer model).
:mod:`nucav.calibrate` derives the quantum-optical parameters from the former.
"""
from .domain import (
    DEFAULT_UNITS,
    CavityStack,
    InputError,
    Layer,
    NucavError,
    NuclearSpec,
    NumericalError,
    PolarizationConfig,
    Spectrum,
    Transition,
    UnitSystem,
    ev_to_gamma,
    load_stack,
    transition_table,
)

__version__ = "0.1.0"
