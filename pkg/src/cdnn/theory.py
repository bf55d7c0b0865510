"""Executable identities behind residual-based effect estimation.

The central facts, all checkable numerically against an exact oracle:

* mixture identity: the marginal outcome mean satisfies
  g0(x) = e0(x) f(1,x) + (1-e0(x)) f(0,x);
* residual decomposition: h(t,x) = f(t,x) - g0(x) factors as
  theta0(x) * (t - e0(x)), so h(1,x) - h(0,x) = theta0(x);
* the score psi = (y - g - theta*(t-e)) * (t-e) has conditional mean zero at
  the truth and is locally orthogonal: its Gateaux derivative along any
  nuisance perturbation [delta_g, delta_e] vanishes at the truth.

The Gateaux derivative is estimated two ways: a closed form whose expectation
factors are exact oracle quantities (and therefore vanish identically), and a
Monte-Carlo central difference in the perturbation scale using common random
numbers. A deliberately non-orthogonal score is included as a negative
control so the checker's power is itself testable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, IdentityViolationError, InvalidPerturbationError

CONSISTENCY_TOL = 1e-12
PROPENSITY_GUARD = 1e-3


@dataclass(frozen=True)
class NuisanceOracle:
    """Exact nuisance functions of a known data-generating process.

    g0: marginal outcome mean given x; e0: propensity; theta0: per-x effect;
    f(t, x): arm-conditional outcome mean; noise_sigma: outcome noise scale.
    """

    g0: Callable
    e0: Callable
    theta0: Callable
    f: Callable
    noise_sigma: float = 0.0

    def check_consistency(self, probes, tol=CONSISTENCY_TOL):
        """Assert the mixture and effect identities at every probe point."""
        for x in probes:
            e = self.e0(x)
            if not 0.0 < e < 1.0:
                raise IdentityViolationError(f"propensity {e} outside (0,1) at {x}")
            gap_theta = abs((self.f(1, x) - self.f(0, x)) - self.theta0(x))
            gap_mix = abs(marginal_outcome(self, x) - self.g0(x))
            if gap_theta > tol or gap_mix > tol:
                raise IdentityViolationError(
                    f"oracle inconsistent at {x}: effect gap {gap_theta:.3e}, "
                    f"mixture gap {gap_mix:.3e}"
                )
        return True

    def sample_observations(self, x, n, rng):
        """Draw (T, Y) from the process at a fixed covariate point."""
        e = self.e0(x)
        t = (rng.random(n) < e).astype(float)
        y = np.where(t == 1.0, self.f(1, x), self.f(0, x))
        if self.noise_sigma > 0:
            y = y + self.noise_sigma * rng.standard_normal(n)
        return t, y


@dataclass(frozen=True)
class ScoreInput:
    """One observation (y, t, x) fed to the score function."""

    y: float
    t: int
    x: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.y):
            raise ConfigError("non-finite outcome")
        if self.t not in (0, 1):
            raise ConfigError("treatment must be 0 or 1")


@dataclass(frozen=True)
class NuisancePerturbation:
    """Directions (delta_g, delta_e) added to the true nuisances."""

    delta_g: Callable
    delta_e: Callable
    label: str = ""


class HForms(NamedTuple):
    direct: float
    factored: float


def marginal_outcome(oracle, x):
    """Propensity mixture of the arm means; equals g0(x)."""
    e = oracle.e0(x)
    return e * oracle.f(1, x) + (1.0 - e) * oracle.f(0, x)


def residualized_h(oracle, t, x, tol=CONSISTENCY_TOL):
    """h(t,x) computed both ways; raises if the two routes disagree.

    direct: f(t,x) - g0(x). factored: theta0(x) * (t - e0(x)).
    """
    direct = oracle.f(t, x) - oracle.g0(x)
    factored = oracle.theta0(x) * (t - oracle.e0(x))
    if abs(direct - factored) > tol:
        raise IdentityViolationError(
            f"residual decomposition violated at t={t}: {direct!r} vs {factored!r}"
        )
    return HForms(direct, factored)


def score_psi(w, theta, g, e):
    """Orthogonal score (y - g - theta*(t - e)) * (t - e)."""
    if not 0.0 < e < 1.0:
        raise ConfigError("propensity value must lie in (0, 1)")
    resid_t = w.t - e
    return (w.y - g - theta * resid_t) * resid_t


def _check_perturbed_propensity(e0x, delta_ex, taus):
    for tau in taus:
        e_tau = e0x + tau * delta_ex
        if not PROPENSITY_GUARD <= e_tau <= 1.0 - PROPENSITY_GUARD:
            raise InvalidPerturbationError(
                f"perturbed propensity {e_tau:.6f} leaves "
                f"[{PROPENSITY_GUARD}, {1 - PROPENSITY_GUARD}] at tau={tau}"
            )


def gateaux_derivative(
    oracle,
    perturbation,
    x,
    n_samples=100_000,
    method="finite_difference",
    step=1e-4,
    seed=0,
):
    """Directional derivative of the conditional mean score at the truth.

    Returns (estimate, mc_stderr). The finite_difference method draws
    n_samples observations at x once (common random numbers) and central-
    differences the Monte-Carlo mean of the score over the perturbation
    scale. The analytic method evaluates the closed form

        (g0 - g_hat + theta0*(e_hat - e0)) * E[T - e0 | x]
        + (e0 - e_hat) * (E[Y - g0 | x] - theta0 * E[T - e0 | x])

    with the conditional expectations taken exactly from the oracle, where
    they vanish; its stderr is 0.
    """
    if n_samples < 10_000:
        raise ConfigError("need n_samples >= 10000")
    if method not in ("finite_difference", "analytic"):
        raise ConfigError(f"unknown method {method!r}")
    x = np.asarray(x, dtype=float)
    g0x = oracle.g0(x)
    e0x = oracle.e0(x)
    theta0x = oracle.theta0(x)
    dg = perturbation.delta_g(x)
    de = perturbation.delta_e(x)
    _check_perturbed_propensity(e0x, de, (-step, step, 1.0))

    if method == "analytic":
        exp_t_resid = oracle.e0(x) - e0x
        exp_y_resid = marginal_outcome(oracle, x) - g0x
        estimate = (-dg + theta0x * de) * exp_t_resid + (-de) * (
            exp_y_resid - theta0x * exp_t_resid
        )
        return estimate + 0.0, 0.0  # +0.0 normalizes a signed zero

    rng = np.random.default_rng(seed)
    t, y = oracle.sample_observations(x, n_samples, rng)

    def psi_at(tau):
        resid_t = t - (e0x + tau * de)
        return (y - (g0x + tau * dg) - theta0x * resid_t) * resid_t

    per_sample = (psi_at(step) - psi_at(-step)) / (2.0 * step)
    estimate = float(np.mean(per_sample))
    stderr = float(np.std(per_sample, ddof=1) / np.sqrt(n_samples))
    return estimate, stderr


def non_orthogonal_control(oracle, perturbation, x, n_samples=100_000, step=1e-4, seed=0):
    """Same machinery applied to the naive score (y - g - theta*t) * t.

    That score is first-order sensitive to outcome-model perturbations: for a
    constant shift delta_g = c the derivative is -c * e0(x). Returns
    (estimate, mc_stderr) so callers can test rejection of zero.
    """
    if n_samples < 10_000:
        raise ConfigError("need n_samples >= 10000")
    x = np.asarray(x, dtype=float)
    g0x = oracle.g0(x)
    e0x = oracle.e0(x)
    theta0x = oracle.theta0(x)
    dg = perturbation.delta_g(x)
    de = perturbation.delta_e(x)
    _check_perturbed_propensity(e0x, de, (-step, step, 1.0))

    rng = np.random.default_rng(seed)
    t, y = oracle.sample_observations(x, n_samples, rng)

    def psi_naive_at(tau):
        return (y - (g0x + tau * dg) - theta0x * t) * t

    per_sample = (psi_naive_at(step) - psi_naive_at(-step)) / (2.0 * step)
    estimate = float(np.mean(per_sample))
    stderr = float(np.std(per_sample, ddof=1) / np.sqrt(n_samples))
    return estimate, stderr


def constant_perturbation(c_g, c_e=0.0):
    return NuisancePerturbation(
        delta_g=lambda x: c_g,
        delta_e=lambda x: c_e,
        label=f"const(dg={c_g}, de={c_e})",
    )


def coordinate_perturbation(scale_g, coord=0, scale_e=0.0):
    def dg(x):
        return scale_g * float(np.atleast_1d(x)[coord])

    def de(x):
        return scale_e * float(np.atleast_1d(x)[coord])

    return NuisancePerturbation(dg, de, label=f"linear(x{coord}; {scale_g}, {scale_e})")


def radial_perturbation(scale_g, scale_e=0.0):
    def bump(x):
        return float(np.exp(-0.5 * np.sum(np.square(x))))

    return NuisancePerturbation(
        delta_g=lambda x: scale_g * bump(x),
        delta_e=lambda x: scale_e * bump(x),
        label=f"radial({scale_g}, {scale_e})",
    )


def standard_perturbations(d=1):
    """The ten-direction family used by the orthogonality check suites.

    Spans constants, single-coordinate linear maps, radial bumps, and mixed
    directions; three of the directions carry a constant outcome shift with
    |c| >= 0.5 so the negative control has something to reject.
    """
    second = min(1, d - 1)
    return [
        constant_perturbation(1.0),
        constant_perturbation(0.0, 0.08),
        coordinate_perturbation(1.0, coord=0),
        coordinate_perturbation(0.0, coord=0, scale_e=0.02),
        radial_perturbation(1.0),
        radial_perturbation(0.0, 0.05),
        constant_perturbation(-0.5, 0.05),
        coordinate_perturbation(0.5, coord=second),
        NuisancePerturbation(
            delta_g=lambda x: 1.0 + 0.5 * float(np.atleast_1d(x)[0]),
            delta_e=lambda x: -0.03 * float(np.exp(-np.sum(np.square(x)))),
            label="mixed(affine g, radial e)",
        ),
        constant_perturbation(0.7, -0.05),
    ]
