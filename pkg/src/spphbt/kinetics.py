"""Three-level emitter kinetics and the closed-form intensity correlation.

The emitter is modelled as a ground state (1), a radiating excited state (2)
and a non-radiative shelving state (3), connected by four Poisson rates
k12, k21, k23, k31 in ns^-1.  Under continuous pumping the normalised
two-time intensity correlation of a single emitter is a difference of two
exponentials,

    g2(tau) = 1 - (beta * exp(-gamma1*|tau|) - (beta - 1) * exp(-gamma2*|tau|)),

which dips to zero at tau = 0 and, for beta > 1, overshoots 1 on the
shelving timescale.  For N independent emitters plus uncorrelated background
the contrast scales as rho^2 / N, with rho the per-detector signal fraction.

The shape parameters used throughout this package are the conventional
closed forms

    gamma1 = k12 + k21
    gamma2 = k31 + k12*k23 / (k12 + k21)
    beta   = 1 + k12*k23 / (k31 * (k12 + k21))

which are first-order approximations valid for slow shelving
(k23, k31 << k12 + k21).  `exact_decay_params` computes the exact
eigen-decomposition of the same rate matrix for comparison; see that
function for when the two disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import (
    DegenerateRates,
    IntegrationFailure,
    InvalidInversion,
    SingularSystem,
)

__all__ = [
    "RateSet",
    "DerivedParams",
    "EnsembleConfig",
    "Populations",
    "derived_params",
    "exact_decay_params",
    "exact_invert_rates",
    "g2_model",
    "g2_zero",
    "quantum_yield",
    "invert_rates",
    "steady_state",
    "steady_emission_rate",
    "conditional_intensity",
]

_ROUNDTRIP_TOL = 1e-12


@dataclass(frozen=True)
class RateSet:
    """Transition rates of the three-level system, all in ns^-1.

    k12: pump rate ground -> excited (proportional to excitation power)
    k21: radiative decay excited -> ground
    k23: shelving excited -> dark state
    k31: deshelving dark state -> ground
    """

    k12: float
    k21: float
    k23: float
    k31: float

    def __post_init__(self) -> None:
        for name in ("k12", "k21", "k23", "k31"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
        if self.k21 <= 0.0:
            raise ValueError("k21 must be > 0: the excited state must decay radiatively")

    @classmethod
    def from_lifetimes(cls, tau12: float, tau21: float, tau23: float, tau31: float) -> "RateSet":
        """Build from characteristic times in ns; an infinite time means rate zero."""
        def inv(t: float) -> float:
            if t <= 0.0:
                raise ValueError(f"lifetimes must be > 0, got {t!r}")
            return 0.0 if math.isinf(t) else 1.0 / t
        return cls(inv(tau12), inv(tau21), inv(tau23), inv(tau31))

    @property
    def lifetimes(self) -> tuple[float, float, float, float]:
        """(tau12, tau21, tau23, tau31) in ns; zero rate maps to inf."""
        return tuple(math.inf if k == 0.0 else 1.0 / k
                     for k in (self.k12, self.k21, self.k23, self.k31))


@dataclass(frozen=True)
class DerivedParams:
    """Shape parameters of the two-exponential correlation model.

    gamma1: antibunching recovery rate (ns^-1), > 0
    gamma2: bunching decay rate (ns^-1), >= 0
    beta:   bunching amplitude, >= 1 (beta = 1 means no shelving)
    """

    gamma1: float
    gamma2: float
    beta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma1) and self.gamma1 > 0.0):
            raise ValueError(f"gamma1 must be finite and > 0, got {self.gamma1!r}")
        if not (math.isfinite(self.gamma2) and self.gamma2 >= 0.0):
            raise ValueError(f"gamma2 must be finite and >= 0, got {self.gamma2!r}")
        if not (math.isfinite(self.beta) and self.beta >= 1.0):
            raise ValueError(f"beta must be finite and >= 1, got {self.beta!r}")


@dataclass(frozen=True)
class EnsembleConfig:
    """How many emitters contribute and how clean the detected signal is.

    rho is the per-detector signal fraction s/(s+b); rho = 1 means no
    background.
    """

    n_emitters: int = 1
    rho: float = 1.0

    def __post_init__(self) -> None:
        if not isinstance(self.n_emitters, (int, np.integer)) or self.n_emitters < 1:
            raise ValueError(f"n_emitters must be an integer >= 1, got {self.n_emitters!r}")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must lie in [0, 1], got {self.rho!r}")


@dataclass(frozen=True)
class Populations:
    """Occupation probabilities of the three levels; must sum to one."""

    p1: float
    p2: float
    p3: float

    def __post_init__(self) -> None:
        for name in ("p1", "p2", "p3"):
            v = getattr(self, name)
            if not (-1e-12 <= v <= 1.0 + 1e-12):
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if abs(self.p1 + self.p2 + self.p3 - 1.0) > 1e-9:
            raise ValueError("populations must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])


def derived_params(rates: RateSet) -> DerivedParams:
    """Map rates to the (gamma1, gamma2, beta) shape parameters.

    Raises DegenerateRates when k12 + k21 = 0 or when shelving occurs but
    deshelving does not (k31 = 0 with k12*k23 > 0), where beta diverges.
    """
    g1 = rates.k12 + rates.k21
    if g1 <= 0.0:
        raise DegenerateRates("k12 + k21 must be > 0")
    shelf_flux = rates.k12 * rates.k23
    if rates.k31 == 0.0:
        if shelf_flux > 0.0:
            raise DegenerateRates(
                "k31 = 0 with active shelving: bunching amplitude diverges")
        return DerivedParams(gamma1=g1, gamma2=0.0, beta=1.0)
    g2 = rates.k31 + shelf_flux / g1
    beta = 1.0 + shelf_flux / (rates.k31 * g1)
    return DerivedParams(gamma1=g1, gamma2=g2, beta=beta)


def g2_model(tau, params: DerivedParams, config: EnsembleConfig = EnsembleConfig()):
    """Closed-form correlation model; accepts scalar or array lag in ns.

    g2(tau) = 1 - (beta e^{-gamma1|tau|} - (beta-1) e^{-gamma2|tau|}) * rho^2 / N
    """
    t = np.abs(np.asarray(tau, dtype=float))
    contrast = config.rho ** 2 / config.n_emitters
    shape = (params.beta * np.exp(-params.gamma1 * t)
             - (params.beta - 1.0) * np.exp(-params.gamma2 * t))
    out = 1.0 - shape * contrast
    return out if out.ndim else float(out)


def g2_zero(config: EnsembleConfig) -> float:
    """Zero-lag value 1 - rho^2 / N, independent of the rates."""
    return 1.0 - config.rho ** 2 / config.n_emitters


def quantum_yield(rates: RateSet) -> float:
    """Probability that an excitation decays radiatively, k21/(k21 + k23)."""
    tot = rates.k21 + rates.k23
    if tot <= 0.0:
        raise DegenerateRates("k21 + k23 must be > 0")
    return rates.k21 / tot


def invert_rates(params: DerivedParams, k12: float) -> RateSet:
    """Recover the rate set from shape parameters, given the pump rate k12.

    The pump rate is not identifiable from the correlation shape alone
    (it is fixed by excitation power), so it must be supplied.  Inverts the
    closed-form maps exactly:

        k21 = gamma1 - k12
        k31 = gamma2 / beta
        k23 = gamma1 * gamma2 * (beta - 1) / (beta * k12)

    Raises InvalidInversion when k12 is outside (0, gamma1) or the shape
    parameters are unphysical.
    """
    if not (math.isfinite(k12) and 0.0 < k12 < params.gamma1):
        raise InvalidInversion(
            f"k12 must lie in (0, gamma1={params.gamma1!r}), got {k12!r}")
    if params.gamma2 < 0.0 or params.beta < 1.0:
        raise InvalidInversion("gamma2 >= 0 and beta >= 1 required")
    k21 = params.gamma1 - k12
    k31 = params.gamma2 / params.beta
    k23 = params.gamma1 * params.gamma2 * (params.beta - 1.0) / (params.beta * k12)
    return RateSet(k12=k12, k21=k21, k23=k23, k31=k31)


def _rate_matrix(rates: RateSet) -> np.ndarray:
    """Generator Q of the master equation dp/dt = Q p, columns sum to zero."""
    k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
    return np.array([
        [-k12, k21, k31],
        [k12, -(k21 + k23), 0.0],
        [0.0, k23, -k31],
    ])


def steady_state(rates: RateSet) -> Populations:
    """Stationary occupation of the three levels under continuous pumping.

    Raises SingularSystem when no unique stationary distribution exists,
    e.g. population leaks irreversibly into the shelf (k23 > 0, k31 = 0).
    """
    if rates.k23 > 0.0 and rates.k31 == 0.0:
        raise SingularSystem("k31 = 0 with k23 > 0: all population ends up shelved")
    if rates.k23 == 0.0 and rates.k31 == 0.0:
        # shelf unreachable from {1, 2}: effective two-level system
        p2 = rates.k12 / (rates.k12 + rates.k21)
        return Populations(p1=1.0 - p2, p2=p2, p3=0.0)
    a = _rate_matrix(rates)
    a[2, :] = 1.0  # replace the redundant row with normalisation
    try:
        p = np.linalg.solve(a, np.array([0.0, 0.0, 1.0]))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"stationary solve failed: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise SingularSystem("stationary solve produced non-finite populations")
    p = np.clip(p, 0.0, 1.0)
    return Populations(p1=float(p[0]), p2=float(p[1]), p3=float(p[2]))


def steady_emission_rate(rates: RateSet) -> float:
    """Mean radiative photon rate per emitter, k21 * p2, in ns^-1."""
    return rates.k21 * steady_state(rates).p2


def conditional_intensity(rates: RateSet, tau_grid) -> np.ndarray:
    """Exact single-emitter g2 by integrating the rate equations.

    Starting from the ground state (the state just after a detection), the
    re-excitation probability p2(tau) normalised by its stationary value is
    the exact correlation function.  Serves as the numerical oracle for the
    closed-form model.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1:
        raise ValueError("tau_grid must be one-dimensional")
    if tau.size == 0:
        return np.empty(0)
    if np.any(tau < 0.0) or np.any(np.diff(tau) < 0.0):
        raise ValueError("tau_grid must be sorted and non-negative")
    p2_ss = steady_state(rates).p2
    if p2_ss <= 0.0:
        raise SingularSystem("stationary excited population is zero")
    if tau[-1] == 0.0:
        return np.zeros_like(tau)
    q = _rate_matrix(rates)
    sol = solve_ivp(
        lambda _t, y: q @ y,
        t_span=(0.0, float(tau[-1])),
        y0=np.array([1.0, 0.0, 0.0]),
        t_eval=tau,
        method="DOP853",
        rtol=1e-10,
        atol=1e-13,
    )
    if not sol.success:
        raise IntegrationFailure(f"rate equation integration failed: {sol.message}")
    return sol.y[1] / p2_ss


def exact_decay_params(rates: RateSet) -> DerivedParams:
    """Exact eigen-decomposition of the correlation into two exponentials.

    The exact g2 of the three-level chain is itself of the model form with

        gamma_fast + gamma_slow = k12 + k21 + k23 + k31
        gamma_fast * gamma_slow = k31 (k12 + k21 + k23) + k12 k23
        beta = (k12 / p2_ss - gamma_slow) / (gamma_fast - gamma_slow)

    These coincide with `derived_params` only in the slow-shelving limit
    k23, k31 << k12 + k21; outside it (including both presets shipped with
    this package) they differ at the tens-of-percent level.  Use this
    function to quantify that bias or to invert fits without it.

    Raises DegenerateRates when the relaxation is oscillatory (complex
    eigenvalues) and cannot be written as two real exponentials.
    """
    s = rates.k12 + rates.k21 + rates.k23 + rates.k31
    p = rates.k31 * (rates.k12 + rates.k21 + rates.k23) + rates.k12 * rates.k23
    disc = s * s - 4.0 * p
    if disc < 0.0:
        raise DegenerateRates("oscillatory relaxation: no real two-exponential form")
    root = math.sqrt(disc)
    g_fast = (s + root) / 2.0
    g_slow = (s - root) / 2.0
    if g_fast <= 0.0:
        raise DegenerateRates("relaxation rates must be positive")
    p2_ss = steady_state(rates).p2
    if p2_ss <= 0.0:
        raise SingularSystem("stationary excited population is zero")
    slope0 = rates.k12 / p2_ss  # dg2/dtau at 0+
    if g_fast == g_slow:
        raise DegenerateRates("degenerate eigenvalues: amplitude split undefined")
    beta = (slope0 - g_slow) / (g_fast - g_slow)
    if beta < 1.0:
        if beta >= 1.0 - 1e-9:
            beta = 1.0  # roundoff at the no-shelving boundary
        elif beta <= 0.0:
            # mirrored labeling: swapping the eigenvalues maps the amplitude
            # to 1 - beta >= 1 and leaves the curve (and inversion) unchanged
            g_fast, g_slow, beta = g_slow, g_fast, 1.0 - beta
        else:
            raise DegenerateRates(
                "exact amplitudes fall outside the model family (0 < beta < 1)")
    return DerivedParams(gamma1=g_fast, gamma2=g_slow, beta=beta)


def exact_invert_rates(params: DerivedParams, k12: float) -> RateSet:
    """Invert `exact_decay_params` in closed form, given the pump rate k12.

    Exact counterpart of `invert_rates`; satisfies
    exact_invert_rates(exact_decay_params(r), r.k12) == r identically.
    """
    if not (math.isfinite(k12) and k12 > 0.0):
        raise InvalidInversion(f"k12 must be finite and > 0, got {k12!r}")
    s = params.gamma1 + params.gamma2
    p = params.gamma1 * params.gamma2
    slope0 = params.beta * params.gamma1 + (1.0 - params.beta) * params.gamma2
    if slope0 <= 0.0:
        raise InvalidInversion("shape parameters imply non-positive zero-lag slope")
    k31 = p / slope0
    k21_plus_k23 = s - k12 - k31
    if k21_plus_k23 <= 0.0:
        raise InvalidInversion("k21 + k23 would be non-positive")
    k23 = (p - k31 * (k12 + k21_plus_k23)) / k12
    k21 = k21_plus_k23 - k23
    if k23 < -1e-12 or k21 <= 0.0:
        raise InvalidInversion("recovered rates are unphysical")
    return RateSet(k12=k12, k21=k21, k23=max(k23, 0.0), k31=k31)
