"""Command-line front-end: scenario loading, dispatch, CSV/JSON emission,
and the model-comparison sweep behind the published sensitivity curves.

Usage:
    longsens decompose   --scenario ou.json [--seed N] [--paths N] [--steps N]
                         [--out table.csv] [--format csv|json] [--no-plot]
    longsens sensitivity --scenario ou.json ...      (needs T_list)
    longsens compare     --scenario base.json ...    (needs nu_grid/mu_grid)
    longsens validate    --scenario ou.json ...

Exit codes: 0 ok, 1 input error, 2 numerical identity violation,
3 validation-suite failure.

Scenario files are JSON key-value documents:

    {"family": "ou", "b": 0.16, "k": 2.0, "sigma": 0.8, "mu": null,
     "r": 0.02, "omega": 1.0, "xi": 1.0,
     "nu": -2.0, "rho_bar": -0.5, "rho_sq": 0.25,
     "T": 5.0, "T_list": [2, 5, 10, 20],
     "n_paths": 200000, "n_steps": null, "seed": 12345,
     "out": null, "format": "csv",
     "nu_grid": [-5, -4, -3, -2, -1, -0.5], "mu_grid": [0.05, 0.1, 0.2]}

``family`` is one of black_scholes | ou | cir | three_halves |
quadratic_drift; ``mu`` is required for black_scholes only.  ``T`` drives
decompose/validate (decompose also accepts T_list for one row per horizon);
``T_list`` drives sensitivity; the grids drive compare.  The environment
variable LONGSENS_THREADS sets the default worker count for the Monte Carlo
loops (results are bit-identical for any value).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import report
from .eigen import (
    asymptotic_utility_sensitivity,
    black_scholes_sensitivity,
    eigenpair,
    generator_residual,
    hs_assemble,
    invariant_grid,
    lambda_sensitivity,
    remainder_closed_form,
    remainder_limit,
)
from .estimate import (
    convergence_study,
    cross_validate_estimators,
    estimate_pT,
    estimate_remainder,
)
from .models import (
    Family,
    MarketParams,
    ModelSpec,
    derive_pricing_dynamics,
    hat_dynamics,
    model_violations,
)
from .simulate import RngPolicy, default_scheme, martingale_check, sample_paths
from . import specialfn

__all__ = ["Scenario", "load_scenario", "main", "run_validation_suite"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_IDENTITY = 2
EXIT_VALIDATION = 3

STATE_FAMILIES = (Family.OU, Family.CIR, Family.THREE_HALVES, Family.QUADRATIC_DRIFT)


@dataclass
class Scenario:
    """A model + market + run-control bundle parsed from a scenario file."""

    spec: ModelSpec
    mkt: MarketParams
    T: float = 5.0
    T_list: list[float] = field(default_factory=list)
    n_paths: int = 200_000
    n_steps: int | None = None
    seed: int = 12345
    out: str | None = None
    format: str = "csv"
    nu_grid: list[float] = field(default_factory=list)
    mu_grid: list[float] = field(default_factory=list)

    def rng(self) -> RngPolicy:
        return RngPolicy(self.seed)


_SCENARIO_KEYS = {
    "family", "b", "k", "sigma", "mu", "r", "omega", "xi", "nu", "rho_bar",
    "rho_sq", "T", "T_list", "n_paths", "n_steps", "seed", "out", "format",
    "nu_grid", "mu_grid",
}


def load_scenario(path) -> Scenario:
    """Parse and sanity-check a scenario JSON file.  Raises ValueError with
    a readable message on any schema or domain problem."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValueError(f"scenario file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValueError(f"scenario file is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ValueError("scenario file must hold a JSON object")
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")

    def need(key):
        if key not in raw or raw[key] is None:
            raise ValueError(f"scenario key {key!r} is required")
        return raw[key]

    family = Family.parse(need("family"))
    spec = ModelSpec(
        family=family,
        b=float(raw.get("b", 0.0) or 0.0),
        k=float(raw.get("k", 0.0) or 0.0),
        sigma=float(need("sigma")),
        mu=float(raw["mu"]) if raw.get("mu") is not None else None,
    )
    mkt = MarketParams(
        r=float(need("r")),
        omega=float(need("omega")),
        xi=float(raw.get("xi", 0.0) or 0.0),
        nu=float(need("nu")),
        rho_bar=float(raw.get("rho_bar", 0.0) or 0.0),
        rho_sq=float(raw.get("rho_sq", 0.0) or 0.0),
    )
    scn = Scenario(spec=spec, mkt=mkt)
    if raw.get("T") is not None:
        scn.T = float(raw["T"])
    if raw.get("T_list"):
        scn.T_list = [float(t) for t in raw["T_list"]]
    if raw.get("n_paths") is not None:
        scn.n_paths = int(raw["n_paths"])
    if raw.get("n_steps") is not None:
        scn.n_steps = int(raw["n_steps"])
    if raw.get("seed") is not None:
        scn.seed = int(raw["seed"])
    if raw.get("out") is not None:
        scn.out = str(raw["out"])
    if raw.get("format") is not None:
        scn.format = str(raw["format"]).lower()
    if scn.format not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {scn.format!r}")
    if raw.get("nu_grid"):
        scn.nu_grid = [float(v) for v in raw["nu_grid"]]
    if raw.get("mu_grid"):
        scn.mu_grid = [float(v) for v in raw["mu_grid"]]
    violations = model_violations(spec, mkt)
    if violations:
        raise ValueError("invalid scenario: " + "; ".join(violations))
    return scn


def _emit(scn: Scenario, columns: list[str], rows: list[dict],
          summary: dict | None, no_plot: bool, figure_renderer=None) -> None:
    if scn.format == "json":
        text = report.render_json(columns, rows, summary)
    else:
        text = report.render_csv(columns, rows)
    if scn.out:
        report.write_text(scn.out, text)
        if figure_renderer is not None and not no_plot:
            figure_renderer(report.figure_path(scn.out))
    else:
        sys.stdout.write(text)


def _scheme(scn: Scenario, T: float):
    if scn.spec.family is Family.BLACK_SCHOLES:
        return None
    return default_scheme(scn.spec.family, T, scn.n_steps)


def cmd_decompose(scn: Scenario, no_plot: bool = False) -> int:
    """One row per horizon: eigenpair numbers, closed-form and Monte Carlo
    remainder, Monte Carlo p_T, and the assembled product.  Exit 2 when the
    assembly misses the Monte Carlo value by more than 4 standard errors."""
    horizons = scn.T_list or [scn.T]
    rows = []
    worst_z = 0.0
    if scn.spec.family is Family.BLACK_SCHOLES:
        dyn = derive_pricing_dynamics(scn.spec, scn.mkt)
        lam = dyn.q * dyn.theta_sq
        for T in horizons:
            p = math.exp(-lam * T)
            rows.append({
                "T": T, "lambda": lam, "eta": 0.0, "ell": 0.0, "alpha": 0.0,
                "delta": None, "phi_xi": 1.0, "f_closed": 1.0,
                "f_closed_kind": "exact", "f_mc": 1.0, "f_mc_se": 0.0,
                "p_T_mc": p, "p_T_mc_se": 0.0, "p_T_assembled": p, "hs_z": 0.0,
            })
    else:
        dyn = derive_pricing_dynamics(scn.spec, scn.mkt)
        eig = eigenpair(scn.spec, dyn)
        hat = hat_dynamics(scn.spec, eig)
        has_closed_f = scn.spec.family is not Family.QUADRATIC_DRIFT
        for T in horizons:
            scheme = _scheme(scn, T)
            p_mc = estimate_pT(scn.spec, scn.mkt, T, scn.rng(),
                               n_paths=scn.n_paths, scheme=scheme)
            f_mc = estimate_remainder(scn.spec, eig, hat, scn.mkt.xi, T,
                                      scn.rng(), n_paths=scn.n_paths,
                                      scheme=scheme)
            if has_closed_f:
                f_closed = remainder_closed_form(eig, hat, scn.mkt.xi, T)
                kind = "exact"
                assembled = hs_assemble(eig, scn.mkt.xi, T, f_closed).p_T
                se_for_z = p_mc.std_error
            else:
                f_closed = remainder_limit(eig, hat)
                kind = "limit"
                assembled = hs_assemble(eig, scn.mkt.xi, T, f_mc.mean).p_T
                phi_xi = float(eig.phi(scn.mkt.xi))
                se_for_z = math.hypot(
                    p_mc.std_error,
                    phi_xi * math.exp(-eig.lam * T) * f_mc.std_error)
            z = (assembled - p_mc.mean) / se_for_z if se_for_z > 0 else 0.0
            worst_z = max(worst_z, abs(z))
            rows.append({
                "T": T, "lambda": eig.lam, "eta": eig.eta, "ell": eig.ell,
                "alpha": eig.alpha, "delta": eig.delta,
                "phi_xi": float(eig.phi(scn.mkt.xi)),
                "f_closed": f_closed, "f_closed_kind": kind,
                "f_mc": f_mc.mean, "f_mc_se": f_mc.std_error,
                "p_T_mc": p_mc.mean, "p_T_mc_se": p_mc.std_error,
                "p_T_assembled": assembled, "hs_z": z,
            })
    columns = ["T", "lambda", "eta", "ell", "alpha", "delta", "phi_xi",
               "f_closed", "f_closed_kind", "f_mc", "f_mc_se",
               "p_T_mc", "p_T_mc_se", "p_T_assembled", "hs_z"]
    renderer = (lambda p: report.render_decompose_figure(rows, p)) if len(rows) > 1 else None
    _emit(scn, columns, rows, {"worst_hs_z": worst_z}, no_plot, renderer)
    if worst_z > 4.0:
        print(f"HS identity violated: |z|={worst_z:.2f} > 4", file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


def cmd_sensitivity(scn: Scenario, no_plot: bool = False) -> int:
    """Convergence table of (1/T) d ln p_T / d nu against -d lambda / d nu,
    plus the closed-form eigenvalue sensitivity and utility slope."""
    if len(scn.T_list) < 3:
        print("sensitivity needs T_list with at least 3 horizons", file=sys.stderr)
        return EXIT_INPUT
    table = convergence_study(scn.spec, scn.mkt, scn.T_list, scn.rng(),
                              n_paths=scn.n_paths, n_steps=scn.n_steps)
    if scn.spec.family is Family.BLACK_SCHOLES:
        _, _, slope = black_scholes_sensitivity(scn.spec.mu, scn.mkt,
                                                scn.spec.sigma, 1.0)
        dlam = table.dlambda_dnu
    else:
        rep = asymptotic_utility_sensitivity(scn.spec, scn.mkt)
        slope, dlam = rep.asymptotic_slope, rep.dlambda_dnu
    rows = [{
        "T": r.T, "value": r.value, "target": r.target, "residual": r.residual,
        "residual_times_T": r.residual * r.T, "std_error": r.std_error,
        "dlambda_dnu": dlam, "asymptotic_slope": slope, "fitted_c": table.fitted_c,
    } for r in table.rows]
    columns = ["T", "value", "target", "residual", "residual_times_T",
               "std_error", "dlambda_dnu", "asymptotic_slope", "fitted_c"]
    summary = {"dlambda_dnu": dlam, "asymptotic_slope": slope,
               "fitted_c": table.fitted_c,
               "noise_dominated": table.noise_dominated}
    _emit(scn, columns, rows, summary,
          no_plot, lambda p: report.render_sensitivity_figure(rows, p))
    if table.noise_dominated:
        print("warning: statistical noise exceeds the residual at the largest T",
              file=sys.stderr)
    return EXIT_OK


def _sweep_cell(fam: Family, b: float, k: float, sigma: float,
                mkt: MarketParams):
    """d lambda / d nu for one family at one grid point, or (None, reason)."""
    try:
        spec = ModelSpec(fam, b=b, k=k, sigma=sigma)
        return lambda_sensitivity(spec, mkt), None
    except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
        return None, f"{fam.value}: {exc}"


def cmd_compare(scn: Scenario, no_plot: bool = False) -> int:
    """Sweep d lambda / d nu for all four state families over nu_grid (model
    parameters fixed) and over mu_grid as the drift-level sweep (nu fixed).

    Grid points where a family's closed form is undefined are emitted as
    empty cells with the violated constraint in the reason column.
    """
    if not scn.nu_grid and not scn.mu_grid:
        print("compare needs a non-empty nu_grid and/or mu_grid", file=sys.stderr)
        return EXIT_INPUT
    fams = [f.value for f in STATE_FAMILIES]
    nu_rows, mu_rows = [], []
    for nu in scn.nu_grid:
        mkt = replace(scn.mkt, nu=nu)
        row: dict = {"sweep": "nu", "value": nu, "reason": None}
        reasons = []
        if not nu < 0:
            reasons.append(f"nu < 0 violated (nu={nu!r})")
            for f in fams:
                row[f] = None
        else:
            for fam in STATE_FAMILIES:
                cell, reason = _sweep_cell(fam, scn.spec.b, scn.spec.k,
                                           scn.spec.sigma, mkt)
                row[fam.value] = cell
                if reason:
                    reasons.append(reason)
        row["reason"] = "; ".join(reasons) if reasons else None
        nu_rows.append(row)
    for mu in scn.mu_grid:
        row = {"sweep": "mu", "value": mu, "reason": None}
        reasons = []
        for fam in STATE_FAMILIES:
            cell, reason = _sweep_cell(fam, mu, scn.spec.k, scn.spec.sigma,
                                       scn.mkt)
            row[fam.value] = cell
            if reason:
                reasons.append(reason)
        row["reason"] = "; ".join(reasons) if reasons else None
        mu_rows.append(row)
    rows = nu_rows + mu_rows
    columns = ["sweep", "value", *fams, "reason"]
    _emit(scn, columns, rows, None, no_plot,
          lambda p: report.render_compare_figure(nu_rows, mu_rows, fams, p))
    return EXIT_OK


def run_validation_suite(scn: Scenario, n_paths: int | None = None) -> dict:
    """The invariant suite behind ``longsens validate``: generator residuals,
    eigenvalue-sensitivity finite-difference agreement, martingale
    normalization, estimator cross-validation, special-function identities.

    Returns a JSON-ready report; each check carries pass/fail and a metric.
    """
    checks: dict[str, dict] = {}
    n_paths = n_paths if n_paths is not None else min(scn.n_paths, 40_000)
    T = scn.T

    def record(name, ok, **detail):
        checks[name] = {"pass": bool(ok), **detail}

    record("scenario_valid", not model_violations(scn.spec, scn.mkt))

    rng = np.random.default_rng(scn.seed)
    # special-function identities (model independent)
    worst = 0.0
    for _ in range(100):
        a = rng.uniform(-3, 3)
        b = rng.uniform(0.5, 6)
        z = rng.uniform(-5, 5)
        lhs = ((b - a) * specialfn.kummer_1f1(a - 1, b, z)
               + (2 * a - b + z) * specialfn.kummer_1f1(a, b, z)
               - a * specialfn.kummer_1f1(a + 1, b, z))
        scale = max(abs(specialfn.kummer_1f1(a, b, z)), 1.0)
        worst = max(worst, abs(lhs) / scale)
    record("kummer_contiguous_relation", worst < 1e-9, max_residual=worst, tol=1e-9)

    worst = max(abs(specialfn.log_gamma(x + 1.0) - specialfn.log_gamma(x) - math.log(x))
                for x in (0.3, 1.7, 9.2, 41.5))
    record("log_gamma_recurrence", worst < 1e-12, max_residual=worst, tol=1e-12)

    from scipy.integrate import quad as _quad
    eta_, ell_, m_, s2_ = 0.3, -0.2, 0.5, 0.4
    cf = specialfn.gaussian_quad_exp_moment(eta_, ell_, m_, s2_)
    oracle, _ = _quad(lambda x: math.exp(0.5 * eta_ * x * x + ell_ * x)
                      * math.exp(-((x - m_) ** 2) / (2 * s2_))
                      / math.sqrt(2 * math.pi * s2_), -30, 30)
    record("gaussian_moment_vs_quadrature", abs(cf / oracle - 1) < 1e-10,
           rel_error=abs(cf / oracle - 1), tol=1e-10)

    if scn.spec.family is Family.BLACK_SCHOLES:
        h = 1e-6
        lp = black_scholes_sensitivity(scn.spec.mu, replace(scn.mkt, nu=scn.mkt.nu + h),
                                       scn.spec.sigma, T)[0]
        lm = black_scholes_sensitivity(scn.spec.mu, replace(scn.mkt, nu=scn.mkt.nu - h),
                                       scn.spec.sigma, T)[0]
        analytic = black_scholes_sensitivity(scn.spec.mu, scn.mkt, scn.spec.sigma, T)[1]
        rel = abs((lp - lm) / (2 * h) / analytic - 1)
        record("bs_fd_vs_analytic", rel < 1e-6, rel_error=rel, tol=1e-6)
    else:
        dyn = derive_pricing_dynamics(scn.spec, scn.mkt)
        eig = eigenpair(scn.spec, dyn)
        hat = hat_dynamics(scn.spec, eig)
        resid = generator_residual(scn.spec, dyn, eig, invariant_grid(eig, hat))
        record("generator_residual", resid < 1e-10, max_residual=resid, tol=1e-10)

        h = 1e-5 * max(1.0, abs(scn.mkt.nu))
        lp = eigenpair(scn.spec, derive_pricing_dynamics(
            scn.spec, replace(scn.mkt, nu=scn.mkt.nu + h))).lam
        lm = eigenpair(scn.spec, derive_pricing_dynamics(
            scn.spec, replace(scn.mkt, nu=scn.mkt.nu - h))).lam
        fd = (lp - lm) / (2 * h)
        cf = lambda_sensitivity(scn.spec, scn.mkt)
        rel = abs(cf - fd) / max(abs(fd), 1e-300)
        record("lambda_sensitivity_vs_fd", rel < 1e-6, rel_error=rel, tol=1e-6)

        scheme = default_scheme(scn.spec.family, T, scn.n_steps)
        ens = sample_paths(dyn, scheme, n_paths, scn.rng(), scn.mkt.xi)
        mart = martingale_check(eig, ens, scn.mkt.xi)
        z = (mart.mean - 1.0) / mart.std_error if mart.std_error > 0 else 0.0
        record("martingale_normalization", abs(z) < 3.0, mean=mart.mean,
               std_error=mart.std_error, z=z)

        p_mc = estimate_pT(scn.spec, scn.mkt, T, scn.rng(), n_paths=n_paths,
                           scheme=scheme)
        if scn.spec.family is Family.QUADRATIC_DRIFT:
            f_mc = estimate_remainder(scn.spec, eig, hat, scn.mkt.xi, T,
                                      scn.rng(), n_paths=n_paths, scheme=scheme)
            assembled = hs_assemble(eig, scn.mkt.xi, T, f_mc.mean).p_T
            se = math.hypot(p_mc.std_error,
                            float(eig.phi(scn.mkt.xi)) * math.exp(-eig.lam * T)
                            * f_mc.std_error)
        else:
            assembled = hs_assemble(
                eig, scn.mkt.xi, T,
                remainder_closed_form(eig, hat, scn.mkt.xi, T)).p_T
            se = p_mc.std_error
        z = (assembled - p_mc.mean) / se if se > 0 else 0.0
        record("hs_identity", abs(z) < 3.0, mc=p_mc.mean, assembled=assembled, z=z)

        tri = cross_validate_estimators(scn.spec, scn.mkt, min(T, 2.0),
                                        scn.rng(), n_paths=n_paths)
        record("estimator_cross_validation", tri.consistent,
               fd=tri.fd.mean, likelihood_ratio=tri.likelihood_ratio.mean,
               malliavin=tri.malliavin.mean,
               disagreements=tri.disagreements)

    checks["all_pass"] = {"pass": all(c["pass"] for c in checks.values())}
    return checks


def cmd_validate(scn: Scenario, no_plot: bool = False) -> int:
    suite = run_validation_suite(scn)
    text = json.dumps(suite, indent=2, default=float) + "\n"
    if scn.out:
        report.write_text(scn.out, text)
    else:
        sys.stdout.write(text)
    if not suite["all_pass"]["pass"]:
        failed = [k for k, v in suite.items() if not v["pass"]]
        print("validation failures: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


_COMMANDS = {
    "decompose": cmd_decompose,
    "sensitivity": cmd_sensitivity,
    "compare": cmd_compare,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longsens",
        description="Long-horizon sensitivity of optimal CRRA portfolio "
                    "utility to the risk-tolerance exponent.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--no-plot", action="store_true",
                       help="skip the PNG rendered next to --out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = load_scenario(args.scenario)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        scn.seed = args.seed
    if args.paths is not None:
        scn.n_paths = args.paths
    if args.steps is not None:
        scn.n_steps = args.steps
    if args.out is not None:
        scn.out = args.out
    if args.format is not None:
        scn.format = args.format
    try:
        return _COMMANDS[args.command](scn, no_plot=args.no_plot)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
