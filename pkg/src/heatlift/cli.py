"""Experiment runner: `heatlift <experiment> --config FILE [flags]`.

Every run writes its artifacts plus a manifest (resolved config, config
hash, seed, version, wall time, output hashes).  Re-running from a
manifest reproduces the artifacts bit-for-bit at equal thread counts.
Exit codes: 0 success, 2 infeasible/invalid parameters, 1 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import BOUND_IDS, bound_scan, cov, dual_method_check
from .dyadic import (
    convergence_study,
    level2_telescope,
    lift_level,
    validate_besov_params,
)
from .group import GEOMETRIC_TOL
from .ldp import (
    CMControl,
    cameron_martin_path,
    chaos_moment_ratio,
    cm_lift_uniform_convergence,
    cm_regularity_check,
    control_from_dict,
    rate_function,
    schilder_point_check,
    tail_probability,
)
from .sampler import SpectralConfig, sample_field, save_field
from .sheets import increment, save_sheet

EXPERIMENTS = (
    "sample",
    "cov-check",
    "bounds-scan",
    "lift-check",
    "converge",
    "tails",
    "chaos",
    "cm",
    "schilder",
)

_SPECTRAL_DEFAULTS = {
    "n_modes": 256,
    "time_horizon": 1.0,
    "n_time": 128,
    "grid_level": 10,
    "dim": 1,
}

_PARAM_DEFAULTS = {
    "sample": {"replica": 0, "write_binary": True},
    "cov-check": {"n_s": 5, "n_x": 5, "tolerance": 1e-8},
    "bounds-scan": {"bounds": list(BOUND_IDS), "kappa": 0.5},
    "lift-check": {"n_slices": 20, "n_telescope": 20, "telescope_k": 4},
    "converge": {
        "k_min": 3,
        "k_max": 8,
        "replicas": 200,
        "kinds": ["sup"],
        "alpha": None,
        "beta": None,
        "m": None,
    },
    "tails": {"delta": 0.5, "eps_list": [1.0, 0.5, 0.25], "k": 2, "replicas": 200},
    "chaos": {
        "functional": "level1",
        "q_list": [2, 3, 4, 6, 8],
        "replicas": 100000,
        "t": 1.0,
        "x": 0.0,
        "y": None,
        "level": 5,
    },
    "cm": {
        "controls": [
            {"mode": 0, "component": 0, "breakpoints": [0.0, 1.0], "values": [1.0]}
        ],
        "q": 1.5,
        "k_range": [2, 3, 4, 5, 6, 7, 8],
    },
    "schilder": {
        "t": 1.0,
        "x": 0.0,
        "component": 0,
        "a": None,
        "eps_list": [0.5, 0.25, 0.125],
    },
}


class ConstraintError(ValueError):
    """Invalid or infeasible experiment parameters (exit code 2)."""


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical_json(config).encode()).hexdigest()


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_config(experiment: str, file_config: dict, overrides: dict) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConstraintError(
            f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}"
        )
    # A manifest can be fed back in as a config.
    if "resolved_config" in file_config:
        file_config = file_config["resolved_config"]
    spectral = dict(_SPECTRAL_DEFAULTS)
    spectral.update(file_config.get("spectral", {}))
    params = dict(_PARAM_DEFAULTS[experiment])
    params.update(file_config.get("params", {}))
    config = {
        "experiment": experiment,
        "seed": int(
            overrides.get("seed")
            if overrides.get("seed") is not None
            else file_config.get("seed", 0)
        ),
        "threads": int(
            overrides.get("threads")
            if overrides.get("threads") is not None
            else file_config.get("threads", 1)
        ),
        "format": file_config.get("format", "json"),
        "spectral": spectral,
        "params": params,
    }
    for item in overrides.get("set", []) or []:
        if "=" not in item:
            raise ConstraintError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if key in spectral:
            spectral[key] = value
        else:
            params[key] = value
    return config


def _spectral(config: dict) -> SpectralConfig:
    s = config["spectral"]
    return SpectralConfig(
        n_modes=int(s["n_modes"]),
        time_horizon=float(s["time_horizon"]),
        n_time=int(s["n_time"]),
        grid_level=int(s["grid_level"]),
        dim=int(s["dim"]),
        seed=int(config["seed"]),
    )


def _write_json(path: Path, payload: dict):
    path.write_text(_canonical_json(payload) + "\n", encoding="utf-8")


def _write_csv(path: Path, schema: str, header: str, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# heatlift-csv {schema} v1\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


# ---------------------------------------------------------------------------
# Experiment bodies: each returns (summary dict, {filename: writer})

def _exp_sample(config: dict, out: Path) -> dict:
    cfg = _spectral(config)
    sample = sample_field(cfg, int(config["params"]["replica"]))
    times = cfg.times()
    nodes = cfg.nodes()
    rows = []
    for it, t in enumerate(times):
        for ix, xval in enumerate(nodes):
            for c in range(cfg.dim):
                rows.append(
                    f"{float(t)!r},{float(xval)!r},{c},"
                    f"{float(sample.values[it, ix, c])!r}"
                )
    _write_csv(out / "field.csv", "field", "t,x,component,value", rows)
    outputs = ["field.csv"]
    if config["params"].get("write_binary", True):
        save_field(sample, str(out / "field.bin"))
        sheet = lift_level(sample, cfg.grid_level)
        save_sheet(sheet, str(out / "lift.bin"))
        outputs += ["field.bin", "lift.bin"]
    return {
        "outputs": outputs,
        "max_abs_value": float(np.max(np.abs(sample.values))),
    }


def _exp_cov_check(config: dict, out: Path) -> dict:
    p = config["params"]
    s_values = np.linspace(0.2, 1.0, int(p["n_s"]))
    x_values = np.linspace(0.0, 1.0, int(p["n_x"]))
    report = dual_method_check(s_values, x_values)
    report["tolerance"] = p["tolerance"]
    report["passed"] = bool(report["max_abs_discrepancy"] <= p["tolerance"])
    _write_json(out / "cov_check.json", report)
    return {"outputs": ["cov_check.json"], **report}


def _exp_bounds_scan(config: dict, out: Path) -> dict:
    p = config["params"]
    reports = []
    for bound_id in p["bounds"]:
        kappa = p["kappa"] if bound_id in ("estD2", "cq2") else None
        reports.append(bound_scan(bound_id, kappa=kappa).to_json_dict())
    _write_json(out / "bound_scans.json", {"reports": reports})
    worst = max(abs(r["refinement_ratio"] - 1.0) for r in reports)
    return {
        "outputs": ["bound_scans.json"],
        "n_bounds": len(reports),
        "max_refinement_drift": worst,
        "any_diverged": any(r["diverged"] for r in reports),
    }


def _exp_lift_check(config: dict, out: Path) -> dict:
    cfg = _spectral(config)
    p = config["params"]
    rng = np.random.Generator(
        np.random.Philox(key=np.array([cfg.seed, 0x11F7], dtype=np.uint64))
    )
    max_chen = 0.0
    max_sym = 0.0
    n_slices = int(p["n_slices"])
    for replica in range(n_slices):
        sample = sample_field(cfg, replica)
        sheet = lift_level(sample, cfg.grid_level)
        t_index = int(rng.integers(0, cfg.n_time + 1))
        sl = sheet.slice(t_index)
        n = sl.n_cells
        idx = np.sort(rng.integers(0, n + 1, size=30))
        for a_i in range(0, len(idx) - 2, 3):
            i, j, k = idx[a_i], idx[a_i + 1], idx[a_i + 2]
            left = increment(sl, int(i), int(k))
            right_a = increment(sl, int(i), int(j))
            right_b = increment(sl, int(j), int(k))
            comp2 = (
                right_a.level2
                + right_b.level2
                + np.outer(right_a.level1, right_b.level1)
            )
            max_chen = max(max_chen, float(np.max(np.abs(left.level2 - comp2))))
            max_sym = max(max_sym, left.symmetric_defect())
    # Telescoping identity on random node pairs.
    k_level = int(p["telescope_k"])
    max_tel = 0.0
    for case in range(int(p["n_telescope"])):
        sample = sample_field(cfg, 1000 + case)
        t_index = int(rng.integers(0, cfg.n_time + 1))
        i_node = int(rng.integers(0, 2**k_level))
        j_node = int(rng.integers(i_node + 1, 2**k_level + 1))
        closed = level2_telescope(sample, k_level, t_index, i_node, j_node)
        stride = 2 ** (cfg.grid_level - k_level)
        fine = lift_level(sample, k_level + 1)
        coarse = lift_level(sample, k_level)
        direct = (
            increment(fine.slice(t_index), i_node * stride, j_node * stride).level2
            - increment(coarse.slice(t_index), i_node * stride, j_node * stride).level2
        )
        max_tel = max(max_tel, float(np.max(np.abs(closed - direct))))
    report = {
        "max_chen_defect": max_chen,
        "max_symmetric_defect": max_sym,
        "max_telescope_defect": max_tel,
        "tolerance": 1e-12,
        "geometric_tolerance": GEOMETRIC_TOL,
        "passed": bool(max(max_chen, max_sym, max_tel) <= 1e-12),
    }
    _write_json(out / "lift_check.json", report)
    return {"outputs": ["lift_check.json"], **report}


def _exp_converge(config: dict, out: Path) -> dict:
    cfg = _spectral(config)
    p = config["params"]
    kinds = tuple(p["kinds"])
    if "besov" in kinds:
        if p["alpha"] is None or p["beta"] is None or p["m"] is None:
            raise ConstraintError("besov kind needs alpha, beta, m")
        try:
            validate_besov_params(float(p["alpha"]), float(p["beta"]), float(p["m"]))
        except ValueError as exc:
            raise ConstraintError(str(exc)) from exc
    k_range = range(int(p["k_min"]), int(p["k_max"]) + 1)
    if max(k_range) + 1 > cfg.grid_level:
        raise ConstraintError(
            f"k_max {max(k_range)} needs grid_level >= {max(k_range) + 1}, "
            f"have {cfg.grid_level}"
        )
    table = convergence_study(
        cfg,
        k_range,
        int(p["replicas"]),
        kinds=kinds,
        alpha=p["alpha"],
        beta=p["beta"],
        m=p["m"],
        threads=int(config["threads"]),
    )
    _write_csv(
        out / "convergence.csv",
        "convergence",
        table.csv_rows()[0],
        table.csv_rows()[1:],
    )
    _write_json(out / "convergence_fits.json", table.fits_json())
    return {
        "outputs": ["convergence.csv", "convergence_fits.json"],
        "fits": table.fits_json(),
        "empty": table.empty,
    }


def _exp_tails(config: dict, out: Path) -> dict:
    cfg = _spectral(config)
    p = config["params"]
    rows = []
    for eps in p["eps_list"]:
        row = tail_probability(
            float(p["delta"]),
            float(eps),
            int(p["k"]),
            int(p["replicas"]),
            cfg,
            threads=int(config["threads"]),
        )
        rows.append(row)
    _write_csv(
        out / "tails.csv",
        "tails",
        "epsilon,delta,k,replicas,count,p_hat,ci_low,ci_high,eps2_log,zero_count",
        [
            f"{r.epsilon!r},{r.delta!r},{r.k},{r.replicas},{r.count},"
            f"{r.p_hat!r},{r.ci_low!r},{r.ci_high!r},{r.eps2_log!r},{int(r.zero_count)}"
            for r in rows
        ],
    )
    return {
        "outputs": ["tails.csv"],
        "eps2_log": {repr(r.epsilon): r.eps2_log for r in rows},
    }


def _exp_chaos(config: dict, out: Path) -> dict:
    cfg = _spectral(config)
    p = config["params"]
    if p["functional"] == "level2" and cfg.dim < 2:
        raise ConstraintError("level2 chaos functional needs spectral dim >= 2")
    report = chaos_moment_ratio(
        p["functional"],
        p["q_list"],
        int(p["replicas"]),
        cfg,
        t=float(p["t"]),
        x=float(p["x"]),
        y=float(p["y"]) if p["y"] is not None else None,
        level=int(p["level"]),
    )
    payload = {
        "functional": report.functional,
        "degree": report.degree,
        "q_list": list(report.q_list),
        "norm_ratios": {repr(k): v for k, v in report.norm_ratios.items()},
        "exponent": report.exponent,
        "exponent_stderr": report.exponent_stderr,
        "ratio4": report.ratio4,
        "ratio4_stderr": report.ratio4_stderr,
        "replicas": report.replicas,
        "empty": report.empty,
    }
    _write_json(out / "chaos.json", payload)
    return {"outputs": ["chaos.json"], **payload}


def _exp_cm(config: dict, out: Path) -> dict:
    cfg = _spectral(config)
    p = config["params"]
    try:
        ctrl = CMControl(tuple(control_from_dict(doc) for doc in p["controls"]))
        path = cameron_martin_path(ctrl, cfg)
    except ValueError as exc:
        raise ConstraintError(str(exc)) from exc
    reg = cm_regularity_check(path, float(p["q"]))
    decay = cm_lift_uniform_convergence(path, p["k_range"])
    payload = {
        "rate_function": rate_function(ctrl),
        "h_norm_sq": path.h_norm_sq,
        "regularity": {
            "q": reg.q,
            "gamma": reg.gamma,
            "holder_half": reg.holder_half,
            "qvar_surrogate": reg.qvar_surrogate,
            "holder_half_normalized": reg.holder_half_normalized,
            "qvar_normalized": reg.qvar_normalized,
        },
        "lift_decay": [
            {"k": r.k, "level1_sup": r.level1_sup, "level2_sup": r.level2_sup}
            for r in decay
        ],
    }
    _write_json(out / "cm.json", payload)
    return {"outputs": ["cm.json"], **payload}


def _exp_schilder(config: dict, out: Path) -> dict:
    p = config["params"]
    t, xval = float(p["t"]), float(p["x"])
    try:
        if p["a"] is None:
            # Default threshold: one standard deviation of the marginal.
            threshold = float(np.sqrt(cov(t, xval, t, xval, method="fourier")))
        else:
            threshold = float(p["a"])
        report = schilder_point_check(
            t, xval, int(p["component"]), threshold, p["eps_list"]
        )
    except ValueError as exc:
        raise ConstraintError(str(exc)) from exc
    _write_csv(
        out / "schilder.csv",
        "schilder",
        "epsilon,threshold,probability,eps2_log",
        [
            f"{r.epsilon!r},{r.threshold!r},{r.probability!r},{r.eps2_log!r}"
            for r in report.rows
        ],
    )
    _write_json(
        out / "schilder.json",
        {
            "sigma_sq": report.sigma_sq,
            "limit": report.limit,
            "rows": [
                {
                    "epsilon": r.epsilon,
                    "threshold": r.threshold,
                    "probability": r.probability,
                    "eps2_log": r.eps2_log,
                }
                for r in report.rows
            ],
        },
    )
    return {
        "outputs": ["schilder.csv", "schilder.json"],
        "limit": report.limit,
        "sigma_sq": report.sigma_sq,
    }


_BODIES = {
    "sample": _exp_sample,
    "cov-check": _exp_cov_check,
    "bounds-scan": _exp_bounds_scan,
    "lift-check": _exp_lift_check,
    "converge": _exp_converge,
    "tails": _exp_tails,
    "chaos": _exp_chaos,
    "cm": _exp_cm,
    "schilder": _exp_schilder,
}


def run(config: dict, out_dir: str) -> dict:
    """Execute one resolved experiment config; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    summary = _BODIES[config["experiment"]](config, out)
    wall = time.time() - start
    outputs = {
        name: _sha256_file(out / name) for name in summary.pop("outputs", [])
    }
    manifest = {
        "experiment": config["experiment"],
        "resolved_config": config,
        "config_hash": _config_hash(config),
        "seed": config["seed"],
        "threads": config["threads"],
        "package_version": __version__,
        "wall_time_s": wall,
        "outputs": outputs,
        "summary": summary,
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heatlift",
        description="Heat-field rough-path experiments",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="JSON config file (or a prior manifest)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default="heatlift-out")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a spectral or experiment parameter (JSON value)",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_config = {}
        if args.config:
            file_config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        config = resolve_config(
            args.experiment,
            file_config,
            {"seed": args.seed, "threads": args.threads, "set": args.set},
        )
        manifest = run(config, args.out)
    except ConstraintError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    print(
        f"{config['experiment']}: ok in {manifest['wall_time_s']:.2f}s, "
        f"config {manifest['config_hash'][:12]}, outputs "
        f"{', '.join(manifest['outputs']) or '(none)'}"
    )
    for key, value in manifest["summary"].items():
        print(f"  {key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
