"""Config-driven experiment runner: convergence studies, verification
suites and inf-sup scans, with machine-readable CSV/JSON reports.

Reports are byte-stable for a fixed config and seed: no timestamps, keys
are sorted, and floats are serialized with repr round-tripping.
"""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import asdict, dataclass, field

import numpy as np

from varpx import exponent as expmod
from varpx import norms
from varpx.femspace import build_pair
from varpx.manufactured import SOLUTION_IDS, make_solution
from varpx.mesh import Triangulation, refine_uniform, unit_square_mesh, write_mesh
from varpx.projection import infsup_estimate, verify_assumptions
from varpx.solver import FeProblem, NewtonConfig, NewtonError, manufactured_rhs, newton_solve

__all__ = [
    "ExperimentConfig",
    "ConvergenceReport",
    "theoretical_rates",
    "run_convergence",
    "run_verification",
    "run_infsup_scan",
    "run_single_solve",
    "emit",
    "SCHEMA",
]

SCHEMA = "varpx-report/1"


@dataclass
class ExperimentConfig:
    """Validated experiment description (see README for the JSON layout)."""

    exponent: dict = field(default_factory=lambda: {"name": "constant", "p_c": 2.0})
    kappa: float = 1.0
    mu: float = 1.0
    pair: str = "taylor_hood"
    stress_mode: str = "localized"
    levels: list = field(default_factory=lambda: [4, 8, 16])
    solution: str = "curl_bubble_sin"
    solver: dict = field(default_factory=dict)
    eoc_tolerance: float = 0.15
    seed: int = 0
    domain: str = "unit_square"

    def __post_init__(self):
        if self.domain != "unit_square":
            raise ValueError("only the unit_square domain is supported")
        lv = list(self.levels)
        if len(lv) < 1 or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must be strictly increasing")
        if self.solution not in SOLUTION_IDS:
            raise ValueError(f"unknown manufactured solution {self.solution!r}")
        # fail early on unknown catalog entries
        self.make_field()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def make_field(self) -> expmod.ExponentField:
        params = dict(self.exponent)
        name = params.pop("name")
        return expmod.make_field(name, **params)

    def newton_config(self) -> NewtonConfig:
        return NewtonConfig(**self.solver)


def environment_stamp() -> dict:
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
    }


def theoretical_rates(field: expmod.ExponentField) -> dict:
    """Guaranteed convergence rates from the exponent bounds and alpha.

    For constant exponents the localization is exact, so the h^alpha
    contributions drop out.
    """
    pplus_c = field.p_plus / (field.p_plus - 1.0)
    pminus_c = field.p_minus / (field.p_minus - 1.0)
    vel_h = min(1.0, pplus_c / 2.0)
    press_h = min(pplus_c**2, 4.0) / (2.0 * pminus_c)
    alpha_p = field.alpha * min(2.0, pplus_c) / pminus_c
    beta_p = min(pplus_c**2 / 2.0, pplus_c) / pminus_c
    constant = field.p_plus == field.p_minus
    velocity = vel_h if constant else min(vel_h, field.alpha)
    pressure = beta_p if constant else min(alpha_p, beta_p)
    return {
        "velocity": velocity,
        "pressure": pressure,
        "velocity_h_term": vel_h,
        "pressure_h_term": press_h,
        "alpha": field.alpha,
        "alpha_p": alpha_p,
        "beta_p": beta_p,
        "pressure_modular": pplus_c * pressure,
    }


@dataclass
class ConvergenceReport:
    config: dict
    records: list
    eoc: dict
    theoretical: dict
    verdicts: list
    solver_info: list
    completed: bool
    failure: str | None = None

    @property
    def all_passed(self) -> bool:
        return self.completed and all(v["passed"] for v in self.verdicts)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "convergence",
            "config": self.config,
            "records": self.records,
            "eoc": self.eoc,
            "theoretical_rates": self.theoretical,
            "verdicts": self.verdicts,
            "solver": self.solver_info,
            "completed": self.completed,
            "failure": self.failure,
            "environment": environment_stamp(),
        }


def _solve_level(config: ExperimentConfig, n: int, field):
    mesh = unit_square_mesh(n)
    pw = expmod.localize(field, mesh)
    sol = make_solution(config.solution)
    rhs = manufactured_rhs(sol, mesh, quad_degree=8)
    problem = FeProblem(
        mesh=mesh,
        exponent=field,
        kappa=config.kappa,
        mu=config.mu,
        pair_kind=config.pair,
        rhs=rhs,
        stress_mode=config.stress_mode,
        piecewise=pw,
    )
    result = newton_solve(problem, config.newton_config())
    err_v = norms.quasinorm_error(sol.sym_grad, result.velocity, pw, config.kappa)
    err_q_lux, err_q_mod = norms.pressure_error(sol.pressure, result.pressure, pw)
    record = norms.ErrorRecord(
        h=mesh.h,
        velocity_quasinorm_error=err_v,
        pressure_luxemburg_error=err_q_lux,
        modular_pressure_error=err_q_mod,
    )
    info = {
        "n": n,
        "newton_iterations": result.newton_iterations,
        "continuation_stages": result.continuation_stages,
        "final_residual": result.final_residual,
    }
    return record, info, result


def run_convergence(config: ExperimentConfig) -> ConvergenceReport:
    """Mesh-refinement study against the manufactured solution."""
    field = config.make_field()
    theo = theoretical_rates(field)
    records, infos = [], []
    failure = None
    for n in config.levels:
        try:
            record, info, _ = _solve_level(config, n, field)
        except NewtonError as exc:
            failure = f"level n={n}: {exc}"
            break
        records.append(record)
        infos.append(info)

    rec_dicts = [
        {
            "n": infos[i]["n"],
            "h": r.h,
            "err_v_quasinorm": r.velocity_quasinorm_error,
            "err_q_luxemburg": r.pressure_luxemburg_error,
            "err_q_modular": r.modular_pressure_error,
        }
        for i, r in enumerate(records)
    ]
    eoc = norms.eoc(records) if len(records) >= 2 else {}
    verdicts = []
    if len(records) >= 2:
        tol = config.eoc_tolerance
        checks = [
            ("velocity_eoc", eoc["velocity"][-1], theo["velocity"]),
            ("pressure_eoc", eoc["pressure_luxemburg"][-1], theo["pressure"]),
        ]
        for name, observed, target in checks:
            verdict = {
                "name": name,
                "observed": observed,
                "theoretical": target,
                "tolerance": tol,
                "passed": bool(observed >= target - tol),
            }
            if observed > target + 0.3:
                verdict["note"] = "superconvergence: observed rate well above the guaranteed bound"
            verdicts.append(verdict)
    return ConvergenceReport(
        config=config.to_dict(),
        records=rec_dicts,
        eoc=eoc,
        theoretical=theo,
        verdicts=verdicts,
        solver_info=infos,
        completed=failure is None and len(records) == len(config.levels),
        failure=failure,
    )


# -- verification suite ----------------------------------------------------------


def _orlicz_suite(seed: int) -> list:
    from varpx import orlicz

    rng = np.random.default_rng(seed)
    items = []

    # Young's inequality on 1e5 random samples
    nsam = 10**5
    p = rng.uniform(1.5, 3.0, nsam)
    kappa = rng.uniform(0.0, 1.0, nsam)
    a = rng.uniform(0.0, 5.0, nsam)
    s = rng.uniform(0.0, 10.0, nsam)
    t = rng.uniform(0.0, 10.0, nsam)
    rhs = orlicz.phi_shifted_array(kappa, p, a, s) + orlicz.conjugate_array(kappa, p, a, t)
    ok = int(np.sum(s * t <= rhs * (1.0 + 1e-9) + 1e-12))
    items.append(
        {
            "name": "young_inequality",
            "passed": ok == nsam,
            "details": {"passes": ok, "samples": nsam},
        }
    )

    # biconjugation on a deterministic grid of kernels and arguments
    worst = 0.0
    for p_v in (1.5, 2.0, 2.5, 3.0):
        for kap in (0.0, 1e-2, 1.0):
            k = orlicz.NFunctionKernel(kap, 1.0, p_v)
            for a_v in (0.0, 0.7):
                for s_v in (0.3, 1.0, 4.0):
                    target = orlicz.phi_shifted(k, a_v, s_v)
                    bic = orlicz.biconjugate(k, a_v, s_v)
                    worst = max(worst, abs(bic - target) / (1.0 + target))
    items.append(
        {
            "name": "biconjugation",
            "passed": worst <= 1e-8,
            "details": {"worst_relative_gap": worst},
        }
    )

    # stress Jacobian against central finite differences
    nfd = 10**4
    worst_fd = 0.0
    for _ in range(nfd):
        p_v = rng.uniform(1.5, 3.0)
        kap = rng.uniform(1e-3, 1.0)
        k = orlicz.NFunctionKernel(kap, 1.0, p_v)
        eta = _rand_sym(rng)
        xi = _rand_sym(rng)
        DS = orlicz.stress_jacobian(k, eta)
        applied = np.einsum("ijkl,kl->ij", DS, xi)
        eps = 1e-6
        fd = (orlicz.stress(k, eta + eps * xi) - orlicz.stress(k, eta - eps * xi)) / (2 * eps)
        denom = np.linalg.norm(fd) + 1e-12
        worst_fd = max(worst_fd, float(np.linalg.norm(applied - fd) / denom))
    items.append(
        {
            "name": "stress_jacobian_fd",
            "passed": worst_fd <= 1e-5,
            "details": {"worst_relative_error": worst_fd, "samples": nfd},
        }
    )

    # hammer triplet ratios against the frozen calibration bands
    for (kap, plo, phi_), bands in orlicz.HAMMER_BANDS.items():
        r21, r31 = _hammer_ratios(rng, kap, plo, phi_, 10**5)
        ok = (
            bands["r21"][0] <= r21[0]
            and r21[1] <= bands["r21"][1]
            and bands["r31"][0] <= r31[0]
            and r31[1] <= bands["r31"][1]
        )
        items.append(
            {
                "name": f"hammer_band_kappa_{kap}",
                "passed": bool(ok),
                "details": {
                    "observed_r21": list(r21),
                    "observed_r31": list(r31),
                    "band_r21": list(bands["r21"]),
                    "band_r31": list(bands["r31"]),
                },
            }
        )
    return items


def _rand_sym(rng, scale: float = 1.0) -> np.ndarray:
    a, b, c = rng.normal(scale=scale, size=3)
    return np.array([[a, c], [c, b]])


def _hammer_ratios(rng, kappa, p_lo, p_hi, n):
    """Extremes of the pairwise hammer-triplet ratios over random pairs."""
    from varpx.orlicz import fmap_array, phi_shifted_array, stress_array

    p = rng.uniform(p_lo, p_hi, n)
    scaleP = 10.0 ** rng.uniform(-3, 2, n)
    scaleQ = 10.0 ** rng.uniform(-3, 2, n)
    P = rng.normal(size=(n, 2, 2))
    P = 0.5 * (P + np.swapaxes(P, 1, 2)) * scaleP[:, None, None]
    Q = rng.normal(size=(n, 2, 2))
    Q = 0.5 * (Q + np.swapaxes(Q, 1, 2)) * scaleQ[:, None, None]
    dS = stress_array(kappa, 1.0, p, P) - stress_array(kappa, 1.0, p, Q)
    dF = fmap_array(kappa, p, P) - fmap_array(kappa, p, Q)
    first = np.sum(dS * (P - Q), axis=(1, 2))
    second = np.sum(dF * dF, axis=(1, 2))
    normP = np.sqrt(np.sum(P * P, axis=(1, 2)))
    dPQ = np.sqrt(np.sum((P - Q) ** 2, axis=(1, 2)))
    third = phi_shifted_array(kappa, p, normP, dPQ)
    keep = first > 1e-12
    r21 = second[keep] / first[keep]
    r31 = third[keep] / first[keep]
    return (float(r21.min()), float(r21.max())), (float(r31.min()), float(r31.max()))


def _lemma34_band(seed: int, levels) -> dict:
    """Ratio band of ||g_h||_{p(.)} / ||g_h||_{p_T(.)} across refinements."""
    field = expmod.make_field("sine2d", p_c=2.0, delta=0.3)
    rng = np.random.default_rng(seed)
    bands = []
    from varpx.femspace import pressure_values

    for n in levels:
        mesh = unit_square_mesh(n)
        pw = expmod.localize(field, mesh)
        space = build_pair(mesh, "p1p1", 8)
        ratios = []
        for _ in range(20):
            coeffs = rng.normal(size=mesh.num_vertices)
            vals = pressure_values(space, coeffs)
            num = norms.luxemburg_norm(mesh, vals, field)
            den = norms.luxemburg_norm(mesh, vals, pw)
            ratios.append(num / den)
        bands.append((float(np.min(ratios)), float(np.max(ratios))))
    mids = [0.5 * (lo + hi) for lo, hi in bands]
    spread = (max(mids) - min(mids)) / max(mids)
    return {
        "name": "lemma34_norm_equivalence",
        "passed": bool(spread <= 0.25),
        "details": {"bands": bands, "mid_spread": spread, "levels": list(levels)},
    }


def run_infsup_scan(levels=(4, 8, 16)) -> dict:
    """beta_h for MINI / Taylor-Hood / P1P1 across refinement levels."""
    out = {}
    for kind in ("mini", "taylor_hood", "p1p1"):
        betas = []
        for n in levels:
            mesh = unit_square_mesh(n)
            space = build_pair(mesh, kind, 4)
            betas.append(infsup_estimate(space))
        out[kind] = betas
    stable = {}
    for kind in ("mini", "taylor_hood"):
        b = out[kind]
        stable[kind] = bool((max(b) - min(b)) / max(b) <= 0.25)
    p11 = out["p1p1"]
    unstable = bool(p11[0] / max(p11[-1], 1e-300) >= 2.0)
    return {
        "name": "infsup_scan",
        "passed": bool(all(stable.values()) and unstable),
        "details": {
            "levels": list(levels),
            "beta": out,
            "stable": stable,
            "p1p1_decays": unstable,
        },
    }


def run_verification(config: ExperimentConfig) -> dict:
    """Orlicz property suite + projection assumptions + inf-sup scan."""
    items = _orlicz_suite(config.seed)

    for n in (4, 8, 16):
        mesh = unit_square_mesh(n)
        space = build_pair(mesh, "mini", 8)
        rep = verify_assumptions(space, n_samples=20, seed=config.seed)
        items.append(
            {
                "name": f"assumption_div_preserving_n{n}",
                "passed": bool(
                    rep.max_div_residual <= 1e-10
                    and rep.linear_reproduction_error <= 1e-12
                    and rep.boundary_coeff_max == 0.0
                ),
                "details": rep.to_dict(),
            }
        )
        items.append(
            {
                "name": f"assumption_stability_n{n}",
                "passed": bool(rep.clement_stability_constant <= 10.0),
                "details": {
                    "clement_L1_constant": rep.clement_stability_constant,
                    "pidiv_W11_constant": rep.stability_constant,
                },
            }
        )

    items.append(_lemma34_band(config.seed, (4, 8, 16)))
    items.append(run_infsup_scan((4, 8, 16)))

    return {
        "schema": SCHEMA,
        "kind": "verification",
        "config": config.to_dict(),
        "items": items,
        "all_passed": all(i["passed"] for i in items),
        "environment": environment_stamp(),
    }


def run_single_solve(config: ExperimentConfig, out_dir) -> dict:
    """Solve at the first level and export mesh + fields."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    field = config.make_field()
    record, info, result = _solve_level(config, config.levels[0], field)
    mesh = result.velocity.space.mesh
    write_mesh(mesh, out / "mesh.txt")
    with open(out / "pressure.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "x", "y", "q"])
        for i, (x, y) in enumerate(mesh.vertices):
            w.writerow([i, f"{x:.17g}", f"{y:.17g}", f"{result.pressure.coeffs[i]:.17g}"])
    ns = result.velocity.space.n_vel_scalar
    with open(out / "velocity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scalar_dof", "vx", "vy"])
        for i in range(ns):
            w.writerow(
                [i, f"{result.velocity.coeffs[i]:.17g}", f"{result.velocity.coeffs[ns + i]:.17g}"]
            )
    report = {
        "schema": SCHEMA,
        "kind": "solve",
        "config": config.to_dict(),
        "record": {
            "n": info["n"],
            "h": record.h,
            "err_v_quasinorm": record.velocity_quasinorm_error,
            "err_q_luxemburg": record.pressure_luxemburg_error,
            "err_q_modular": record.modular_pressure_error,
        },
        "solver": info,
        "environment": environment_stamp(),
    }
    return report


# -- emission ----------------------------------------------------------------------


def emit(report: ConvergenceReport | dict, out_dir, stem: str = "report"):
    """Write the JSON (and for convergence reports, CSV) artifacts."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict() if hasattr(report, "to_dict") else report
    json_path = out / f"{stem}.json"
    with open(json_path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths = [json_path]
    if data.get("kind") == "convergence":
        csv_path = out / f"{stem}.csv"
        eoc_v = data["eoc"].get("velocity", [])
        eoc_q = data["eoc"].get("pressure_luxemburg", [])
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                [
                    "level",
                    "n",
                    "h",
                    "err_v_quasinorm",
                    "err_q_luxemburg",
                    "err_q_modular",
                    "eoc_v",
                    "eoc_q",
                ]
            )
            for i, rec in enumerate(data["records"]):
                w.writerow(
                    [
                        i,
                        rec["n"],
                        f"{rec['h']:.17g}",
                        f"{rec['err_v_quasinorm']:.17g}",
                        f"{rec['err_q_luxemburg']:.17g}",
                        f"{rec['err_q_modular']:.17g}",
                        f"{eoc_v[i - 1]:.17g}" if 1 <= i <= len(eoc_v) else "",
                        f"{eoc_q[i - 1]:.17g}" if 1 <= i <= len(eoc_q) else "",
                    ]
                )
        paths.append(csv_path)
    return paths
