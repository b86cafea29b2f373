"""Path simulation of the four state diffusions under either measure,
first-variation paths, and the pathwise weights behind the Monte Carlo
sensitivity estimators.

Schemes
-------
exact_gaussian   OU: exact Gaussian transitions.
exact_cir        CIR: exact noncentral-chi-square transitions, sampled as
                 c * ((Z + sqrt(nc))^2 + 2 Gamma((d-1)/2)).
reciprocal_cir   3/2: the reciprocal state 1/X is itself a square-root
                 diffusion, simulated exactly and inverted.
log_euler        quadratic drift: Euler on ln X.
euler            generic Euler-Maruyama; the only scheme whose recorded
                 increments are the true discrete Brownian driver, which the
                 likelihood-ratio and Malliavin weights require.

Randomness is counter-based: paths are partitioned into fixed blocks of
``PATH_BLOCK`` and block j draws from an independent Philox stream keyed by
(seed, stream, j).  A path's noise therefore depends only on (seed, its
index, n_steps) -- never on the total path count, worker count, or
scheduling -- and rerunning a recursion with bumped drift parameters on the
same policy replays identical noise (common random numbers).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import gammaincinv

from .models import Family, HatDynamics, PricingDynamics, POSITIVE_STATE

__all__ = [
    "SchemeKind",
    "SimScheme",
    "RngPolicy",
    "PathEnsemble",
    "McEstimate",
    "default_scheme",
    "sample_paths",
    "first_variation",
    "likelihood_ratio_weight",
    "malliavin_weight_estimate",
    "martingale_check",
    "dump_ensemble",
    "load_ensemble",
]

PATH_BLOCK = 8192
FLAGGED_FRACTION_LIMIT = 1e-3


class SchemeKind(str, Enum):
    EXACT_GAUSSIAN = "exact_gaussian"
    EXACT_CIR = "exact_cir"
    RECIPROCAL_CIR = "reciprocal_cir"
    LOG_EULER = "log_euler"
    EULER = "euler"


@dataclass(frozen=True)
class SimScheme:
    kind: SchemeKind
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be > 0")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps


_DEFAULT_KIND = {
    Family.OU: SchemeKind.EXACT_GAUSSIAN,
    Family.CIR: SchemeKind.EXACT_CIR,
    Family.THREE_HALVES: SchemeKind.RECIPROCAL_CIR,
    Family.QUADRATIC_DRIFT: SchemeKind.LOG_EULER,
}


def default_scheme(family: Family, T: float, n_steps: int | None = None) -> SimScheme:
    """Family's preferred scheme; n_steps defaults to 100 per unit time
    (the grid also carries the killing-integral quadrature)."""
    if n_steps is None:
        n_steps = max(int(round(100 * T)), 8)
    return SimScheme(_DEFAULT_KIND[family], T=T, n_steps=n_steps)


@dataclass(frozen=True)
class RngPolicy:
    """Master seed plus the block-stream derivation rule.

    Stream for (purpose, block) = Philox(SeedSequence(seed, spawn_key=
    (stream, block))).  ``crn=True`` forces fixed-consumption draws
    (inverse-CDF gammas) so parameter bumps stay on identical noise even
    when distribution shapes move with the parameter.
    """

    seed: int
    crn: bool = False

    def block_generator(self, stream: int, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(stream, block))
        return np.random.Generator(np.random.Philox(ss))


class _BlockNoise:
    """Per-block noise source drawing fixed-width rows so path identity is
    independent of the requested path count."""

    def __init__(self, rng: RngPolicy, block: int, m: int):
        self.gen_z = rng.block_generator(0, block)
        self.gen_g = rng.block_generator(1, block)
        self.crn = rng.crn
        self.m = m

    def normals(self) -> np.ndarray:
        return self.gen_z.standard_normal(PATH_BLOCK)[: self.m]

    def gammas(self, shape: float) -> np.ndarray:
        if shape <= 1e-12:
            # chi-square dof exactly 1: no gamma component
            return np.zeros(self.m)
        if self.crn:
            u = self.gen_g.random(PATH_BLOCK)[: self.m]
            return gammaincinv(shape, u)
        return self.gen_g.standard_gamma(shape, PATH_BLOCK)[: self.m]


@dataclass
class PathEnsemble:
    """Simulated paths under a named measure.

    states has shape (n_paths, n_steps+1).  brownian_increments holds the
    driving increments for Gaussian-driven schemes (sqrt(dt) * Z; for the
    exact OU scheme these are the normalized innovations, equal to the
    Brownian increments only in the fine-grid limit) and None for the
    chi-square-driven exact schemes, whose driver is not observable.
    integrated_killing is the per-path trapezoid of the killing field.
    """

    measure: str
    times: np.ndarray
    states: np.ndarray
    brownian_increments: np.ndarray | None
    integrated_killing: np.ndarray
    seed: int
    n_flagged: int = 0
    first_variation: np.ndarray | None = None
    log_first_variation: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]


@dataclass(frozen=True)
class McEstimate:
    """Point estimate with Gaussian standard error; the universal Monte
    Carlo return type."""

    mean: float
    std_error: float
    n_paths: int
    seed: int
    measure: str


def _mc(values: np.ndarray, seed: int, measure: str) -> McEstimate:
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(values.mean()), se, n, seed, measure)


def _evolve_block(dyn, scheme: SimScheme, x0: float, noise: _BlockNoise,
                  record_increments: bool):
    """One block of paths; returns (states, increments-or-None, flagged)."""
    m = noise.m
    n, dt = scheme.n_steps, scheme.dt
    states = np.empty((m, n + 1))
    states[:, 0] = x0
    x = np.full(m, float(x0))
    flagged = np.zeros(m, dtype=bool)
    incr = np.empty((m, n)) if record_increments else None
    kind = scheme.kind

    if kind is SchemeKind.EXACT_GAUSSIAN:
        a, c, sig = dyn.drift_speed, dyn.drift_level, dyn.sigma
        e = math.exp(-a * dt)
        mean_add = c * dt * _phi1(-a * dt)
        sd = sig * math.sqrt(dt * _phi1(-2.0 * a * dt))
        sqdt = math.sqrt(dt)
        for i in range(n):
            z = noise.normals()
            x = x * e + mean_add + sd * z
            states[:, i + 1] = x
            if incr is not None:
                incr[:, i] = sqdt * z
    elif kind is SchemeKind.EXACT_CIR:
        _exact_cir_block(dyn.drift_level, dyn.drift_speed, dyn.sigma, states, noise, dt)
    elif kind is SchemeKind.RECIPROCAL_CIR:
        # 1/X of the 3/2 diffusion is a square-root diffusion with level
        # speed+sigma^2 and speed equal to the 3/2 level.
        v = np.empty_like(states)
        v[:, 0] = 1.0 / x0
        _exact_cir_block(dyn.drift_speed + dyn.sigma**2, dyn.drift_level,
                         dyn.sigma, v, noise, dt)
        np.divide(1.0, v, out=states)
    elif kind is SchemeKind.LOG_EULER:
        b, a, sig = dyn.drift_level, dyn.drift_speed, dyn.sigma
        sqdt = math.sqrt(dt)
        lx = np.full(m, math.log(x0))
        for i in range(n):
            z = noise.normals()
            lx = lx + (b * np.exp(-lx) - a * np.exp(lx) - 0.5 * sig**2) * dt \
                + sig * sqdt * z
            states[:, i + 1] = np.exp(lx)
            if incr is not None:
                incr[:, i] = sqdt * z
        flagged |= ~np.isfinite(states[:, -1])
    elif kind is SchemeKind.EULER:
        sqdt = math.sqrt(dt)
        positive = dyn.family in POSITIVE_STATE
        floor = 1e-12
        for i in range(n):
            z = noise.normals()
            xe = np.maximum(x, floor) if positive else x
            x = x + dyn.drift(xe) * dt + dyn.vol(xe) * sqdt * z
            if positive:
                flagged |= x <= 0
                x = np.maximum(x, floor)
            states[:, i + 1] = x
            if incr is not None:
                incr[:, i] = sqdt * z
        flagged |= ~np.isfinite(x)
    else:
        raise ValueError(f"unknown scheme kind {kind}")
    return states, incr, flagged


def _exact_cir_block(level, speed, sig, states, noise: _BlockNoise, dt):
    """Exact square-root-diffusion transitions, filling states in place."""
    d = 4.0 * level / sig**2
    if d < 1.0 - 1e-9:
        raise ValueError(
            f"exact square-root transitions need 4*level/sigma^2 >= 1, got {d!r}"
        )
    shape = max((d - 1.0) / 2.0, 0.0)
    e = math.exp(-speed * dt)
    c = sig**2 * dt * _phi1(-speed * dt) / 4.0
    x = states[:, 0].copy()
    for i in range(states.shape[1] - 1):
        z = noise.normals()
        g = noise.gammas(shape)
        x = c * (np.square(z + np.sqrt(x * (e / c))) + 2.0 * g)
        states[:, i + 1] = x


def _phi1(z: float) -> float:
    """(e^z - 1)/z, stable near zero."""
    if abs(z) < 1e-8:
        return 1.0 + 0.5 * z
    return math.expm1(z) / z


def _iter_blocks(n_paths: int):
    for block in range(0, -(-n_paths // PATH_BLOCK)):
        yield block, min(PATH_BLOCK, n_paths - block * PATH_BLOCK)


def sample_paths(dyn, scheme: SimScheme, n_paths: int, rng: RngPolicy,
                 xi: float, killing=None, measure: str | None = None) -> PathEnsemble:
    """Simulate n_paths of the dynamics; record states, increments where the
    scheme has a Gaussian driver, and the trapezoid killing integral.

    Raises if more than FLAGGED_FRACTION_LIMIT of the paths violate the
    state space (non-finite, or non-positive where positivity is required).
    """
    if measure is None:
        measure = "P" if isinstance(dyn, PricingDynamics) else "P_hat"
    if killing is None and isinstance(dyn, PricingDynamics):
        killing = dyn.killing
    record_incr = scheme.kind not in (SchemeKind.EXACT_CIR, SchemeKind.RECIPROCAL_CIR)

    all_states, all_incr, all_kill, n_flagged = [], [], [], 0
    for block, m in _iter_blocks(n_paths):
        noise = _BlockNoise(rng, block, m)
        states, incr, flagged = _evolve_block(dyn, scheme, xi, noise, record_incr)
        n_flagged += int(flagged.sum())
        all_states.append(states)
        if incr is not None:
            all_incr.append(incr)
        if killing is not None:
            all_kill.append(np.trapezoid(killing(states), dx=scheme.dt, axis=1))
        else:
            all_kill.append(np.zeros(m))
    if n_flagged > FLAGGED_FRACTION_LIMIT * n_paths:
        raise RuntimeError(
            f"{n_flagged}/{n_paths} paths violated the state space "
            f"(limit {FLAGGED_FRACTION_LIMIT:.1%})"
        )
    times = np.linspace(0.0, scheme.T, scheme.n_steps + 1)
    return PathEnsemble(
        measure=measure,
        times=times,
        states=np.concatenate(all_states),
        brownian_increments=np.concatenate(all_incr) if all_incr else None,
        integrated_killing=np.concatenate(all_kill),
        seed=rng.seed,
        n_flagged=n_flagged,
    )


def first_variation(ensemble: PathEnsemble, drift_deriv, vol_deriv) -> PathEnsemble:
    """Fill the first-variation path Y_t = exp(int (b' - s'^2/2) ds
    + int s'(X) dB) on the simulation grid: trapezoid for the ds integral,
    left-point for the stochastic one.  Y_0 = 1 on every path.

    The log path is kept alongside (ensemble._log_first_variation) so that
    ratios Y_T/Y_s stay computable even where Y itself under/overflows.
    """
    if ensemble.brownian_increments is None:
        raise ValueError(
            "first variation needs the Brownian driver; use an Euler-type scheme"
        )
    x = ensemble.states
    dt = float(ensemble.times[1] - ensemble.times[0])
    bp = drift_deriv(x)
    sp = vol_deriv(x)
    ds_part = bp - 0.5 * np.square(sp)
    increments = 0.5 * dt * (ds_part[:, :-1] + ds_part[:, 1:]) \
        + sp[:, :-1] * ensemble.brownian_increments
    log_y = np.empty_like(x)
    log_y[:, 0] = 0.0
    np.cumsum(increments, axis=1, out=log_y[:, 1:])
    with np.errstate(under="ignore"):
        return replace(ensemble, first_variation=np.exp(log_y),
                       log_first_variation=log_y)


def likelihood_ratio_weight(ensemble: PathEnsemble, bbar, vol) -> np.ndarray:
    """Per-path left-point Ito sum of (bbar/vol)(X_s) dB_s.

    The mean of payoff(X_T) times this weight estimates the derivative of
    the expectation in a drift perturbation of size epsilon along bbar.
    """
    if ensemble.brownian_increments is None:
        raise ValueError(
            "likelihood-ratio weight needs the Brownian driver; use an Euler-type scheme"
        )
    xl = ensemble.states[:, :-1]
    return np.sum(bbar(xl) / vol(xl) * ensemble.brownian_increments, axis=1)


def malliavin_weight_estimate(ensemble: PathEnsemble, h_deriv, kbar) -> np.ndarray:
    """Per-path H_x(X_T) Y_T int_0^T kbar(X_s)/Y_s ds (trapezoid in time).

    Evaluated as int kbar(X_s) exp(ln Y_T - ln Y_s) ds: the ratio Y_T/Y_s is
    the well-behaved quantity (it equals D_sX_T / vol(X_s)) even on paths
    where Y itself underflows.  Paths whose ratio overflows are flagged by
    returning NaN there; callers decide how to treat them.
    """
    y = ensemble.first_variation
    if y is None:
        raise ValueError("ensemble has no first-variation path; call first_variation")
    log_y = ensemble.log_first_variation
    if log_y is None:
        log_y = np.log(y)
    dt = float(ensemble.times[1] - ensemble.times[0])
    with np.errstate(over="ignore", under="ignore"):
        ratio = kbar(ensemble.states) * np.exp(log_y[:, -1:] - log_y)
        integral = np.trapezoid(ratio, dx=dt, axis=1)
        out = h_deriv(ensemble.terminal) * integral
    out[~np.isfinite(integral)] = np.nan
    return out


def martingale_check(eig, ensemble: PathEnsemble, xi: float) -> McEstimate:
    """Monte Carlo mean of M_T = (phi(X_T)/phi(xi)) e^{lambda T - int q};
    the change-of-measure density, expected value 1."""
    T = float(ensemble.times[-1])
    log_m = (eig.log_phi(ensemble.terminal) - float(eig.log_phi(xi))
             + eig.lam * T - ensemble.integrated_killing)
    return _mc(np.exp(log_m), ensemble.seed, ensemble.measure)


_DUMP_MAGIC = "longsens-ensemble-v1"


def dump_ensemble(ensemble: PathEnsemble, path) -> None:
    """Debug dump: one JSON header line (seed, measure, grid, shape), then
    the row-major float64 state array.  Not a stability-guaranteed format."""
    header = {
        "magic": _DUMP_MAGIC,
        "seed": ensemble.seed,
        "measure": ensemble.measure,
        "times": ensemble.times.tolist(),
        "shape": list(ensemble.states.shape),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.ascontiguousarray(ensemble.states, dtype=np.float64).tobytes())


def load_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("magic") != _DUMP_MAGIC:
            raise ValueError("not a longsens ensemble dump")
        shape = tuple(header["shape"])
        states = np.frombuffer(fh.read(), dtype=np.float64).reshape(shape)
    times = np.asarray(header["times"])
    return PathEnsemble(
        measure=header["measure"],
        times=times,
        states=states,
        brownian_increments=None,
        integrated_killing=np.zeros(shape[0]),
        seed=header["seed"],
    )
