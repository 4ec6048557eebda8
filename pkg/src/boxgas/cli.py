"""Command-line front end: ``boxgas {exact-z,sample,free-energy,structure}``.

Settings come from three layers, later ones winning: built-in defaults, the
``--config`` file (JSON or YAML), then explicit command-line flags.

Exit codes: 0 success, 2 precondition violation, 3 solver non-convergence,
4 consistency rejection (1 for anything else raised by the package).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .energy import BoxRegion
from .errors import BoxGasError, ConsistencyError, PreconditionError
from .exact import PinnedMacro, dirichlet_log_probability, free_case_oracle, partition_conditional, partition_dirichlet, pinned_macro_partition
from .mcmc import SamplerConfig, observables_csv, run_chain
from .model import ModelSpec, load_model, model_from_config
from .structure import FreeEnergyCurve, analyze, named_curve, write_curves_csv, write_mass_csv
from .varfree import MacroDistribution, free_energy_record, free_gas_chi, second_differences

SCHEMAS = {
    "exact-z": "boxgas.partition/1",
    "free-energy": "boxgas.free-energy/1",
    "structure": "boxgas.structure-report/1",
    "sample": "boxgas.sample-summary/1",
}


@dataclass
class RunConfig:
    command: str
    settings: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def get(self, key: str, default: Any = None) -> Any:
        val = self.settings.get(key)
        return default if val is None else val

    def require(self, key: str) -> Any:
        if self.settings.get(key) is None:
            raise PreconditionError(f"missing setting {key!r} (config file or flag)")
        return self.settings[key]

    def model(self) -> ModelSpec:
        m = self.require("model")
        if isinstance(m, dict):
            return model_from_config(m)
        path = Path(m)
        if not path.is_absolute():
            path = self.base_dir / path
        if not path.exists():
            raise PreconditionError(f"model file {path} does not exist")
        return load_model(path)

    def box(self, d: int) -> BoxRegion:
        b = self.require("box")
        if isinstance(b, dict):
            if "side" in b:
                return BoxRegion.centred(int(b["side"]), d)
            return BoxRegion(tuple(b["lower"]), tuple(b["upper"]))
        if isinstance(b, (list, tuple)) and len(b) == 2 and d == 1:
            return BoxRegion.interval(int(b[0]), int(b[1]))
        raise PreconditionError("box must be {side: n}, {lower: [...], upper: [...]} or [a, b] in d=1")


def _read_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path(".")
    p = Path(path)
    if not p.exists():
        raise PreconditionError(f"config file {p} does not exist")
    text = p.read_text(encoding="utf-8")
    import yaml

    try:
        if p.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text) if text.strip() else {}
    except (ValueError, yaml.YAMLError) as exc:
        raise PreconditionError(f"cannot parse config {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise PreconditionError("config file must hold a mapping")
    return data, p.parent


def _parse_sizes(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise PreconditionError(f"--pinned expects 'n1,n2,...', got {text!r}") from exc


def _emit(obj: dict | str, out: str | None):
    text = obj if isinstance(obj, str) else json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _finite(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


# ---------------------------------------------------------------------------
# commands


def cmd_exact_z(cfg: RunConfig) -> dict:
    spec = cfg.model()
    box = cfg.box(spec.dimension)
    tol = float(cfg.get("tol", 1e-14))
    pinned = cfg.get("pinned")
    if pinned:
        K = int(cfg.require("kmax"))
        win = cfg.require("window")
        res = pinned_macro_partition(box, PinnedMacro(tuple(pinned)), K, (win["m"], float(win["delta"])), spec, tol)
        out = {"variant": "pinned", "pinned": list(pinned), "kmax": K}
    else:
        N = int(cfg.require("N"))
        conditional = bool(cfg.get("conditional", False))
        res = (partition_conditional if conditional else partition_dirichlet)(box, N, spec, tol)
        out = {"variant": "conditional" if conditional else "dirichlet", "N": N}
        if cfg.get("oracle", False):
            if not spec.potential.is_zero:
                raise PreconditionError("--oracle needs the non-interacting model (v = 0)")
            oracle = free_case_oracle(box, N, spec)
            if conditional:
                oracle *= math.exp(-dirichlet_log_probability(box, spec))
            rel = abs(res.value - oracle) / oracle if oracle else abs(res.value)
            out.update(oracle=oracle, oracle_rel_err=rel)
            if rel > 1e-12:
                raise ConsistencyError(f"enumeration and oracle disagree (relative error {rel:.3e})",
                                       inequality="|Z_enum - Z_oracle| / Z_oracle <= 1e-12")
    out.update(res.to_json())
    out["box"] = {"lower": list(box.lower), "upper": list(box.upper)}
    return out


def cmd_sample(cfg: RunConfig) -> tuple[str, dict, list]:
    spec = cfg.model()
    box = cfg.box(spec.dimension)
    N = int(cfg.require("N"))
    weights = cfg.get("move_weights", (1 / 3, 1 / 3, 1 / 3))
    sc = SamplerConfig(
        sweeps=int(cfg.get("sweeps", 10_000)),
        burnin=int(cfg.get("burnin", 1_000)),
        seed=int(cfg.get("seed", 0)),
        move_weights=tuple(weights),
        max_mark=cfg.get("kmax"),
        k_macro=cfg.get("k_macro"),
        init=str(cfg.get("init", "greedy")),
        thin=int(cfg.get("thin", 1)),
        snapshot_every=int(cfg.get("snapshot_every", 0)),
        keep_rows=True,
    )
    res = run_chain(sc, box, N, spec)
    acc = res.accumulator
    summary = {
        "schema": SCHEMAS["sample"],
        "N": N,
        "volume": box.volume,
        "sweeps": sc.sweeps,
        "burnin": sc.burnin,
        "seed": sc.seed,
        "mark_density": acc.mark_density.tolist(),
        "energy_density": acc.energy_density,
        "coverage_profile": acc.coverage_profile.tolist(),
        "moves": res.stats,
        "model_hash": spec.model_hash(),
    }
    return observables_csv(res), summary, res.snapshots


def cmd_free_energy(cfg: RunConfig) -> dict:
    spec = cfg.model()
    K = int(cfg.get("kmax", 60))
    tol = float(cfg.get("tol", 1e-10))
    psi_cfg = cfg.get("psi", {0: 1.0})
    psi = MacroDistribution({int(a): float(p) for a, p in dict(psi_cfg).items()})
    grid = cfg.get("rho_grid")
    rhos = [float(r) for r in grid] if grid is not None else [float(cfg.require("rho"))]
    el = bool(cfg.get("el", True))
    records = []
    h = 1e-6
    for rho in rhos:
        rec = free_energy_record(rho, spec, K, psi, tol, el=el and rho - psi.rho_ma >= 0)
        if rho > h:
            fd = (free_gas_chi(rho + h, spec.intensity).chi - free_gas_chi(rho - h, spec.intensity).chi) / (2 * h)
            rec["dchi_free_fd"] = fd
            rec["dchi_free_minus_alpha"] = fd - rec["alpha"] if rec["alpha"] is not None else None
        records.append(rec)
    out = {"schema": SCHEMAS["free-energy"], "model_hash": spec.model_hash(), "kmax": K}
    if len(records) == 1:
        out.update(records[0])
    else:
        out["records"] = records
        chi = [r["chi_free"] for r in records]
        pam = [r["product_ansatz_min"]["value"] for r in records]
        d2 = second_differences(chi)
        d2p = second_differences(pam)
        out["convexity_audit"] = {
            "uniform_grid": bool(np.allclose(np.diff(rhos), rhos[1] - rhos[0])) if len(rhos) > 1 else True,
            "min_second_difference_chi_free": _finite(float(d2.min())) if len(d2) else None,
            "min_second_difference_product_ansatz": _finite(float(d2p.min())) if len(d2p) else None,
        }
    return out


def _load_curve(cfg: RunConfig) -> FreeEnergyCurve:
    spec_ = str(cfg.require("curve"))
    path = Path(spec_)
    if not path.is_absolute():
        path = cfg.base_dir / path
    if path.exists():
        return FreeEnergyCurve.from_csv(path)
    return named_curve(spec_, float(cfg.get("rho_c", 2.0)))


def cmd_structure(cfg: RunConfig) -> tuple[dict, str, str]:
    curve = _load_curve(cfg)
    rho_c = float(cfg.get("rho_c", curve.rho_max))
    if cfg.get("vbar") is not None:
        vb = float(cfg.get("vbar"))
    elif cfg.get("model") is not None:
        vb = cfg.model().vbar
    else:
        raise PreconditionError("structure needs vbar (setting or model)")
    report = analyze(curve, rho_c, vb, float(cfg.get("tol", 1e-12)))
    rho_max = float(cfg.get("rho_max", rho_c + 4.0))
    step = float(cfg.get("grid_step", 0.01))
    grid = np.linspace(0.0, rho_max, int(round(rho_max / step)) + 1)
    out = report.to_json()
    out["curve"] = curve.name
    return out, grid, report


def _structure_outputs(out_json: dict, grid, report, out: str | None):
    if out is None:
        _emit(out_json, None)
        return
    base = Path(out)
    base.mkdir(parents=True, exist_ok=True)
    write_curves_csv(report, base / "chi_curves.csv", grid)
    write_mass_csv(report, base / "mass_curves.csv", grid)
    out_json["files"] = {"curves": "chi_curves.csv", "mass": "mass_curves.csv"}
    _emit(out_json, str(base / "report.json"))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON or YAML run configuration")
    common.add_argument("--out", metavar="PATH", help="output file (directory for 'structure'); stdout if omitted")
    common.add_argument("--model", metavar="PATH", help="model file (overrides the config's model)")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--tol", type=float)
    common.add_argument("--kmax", type=int, help="mark-size cutoff K")

    p = argparse.ArgumentParser(prog="boxgas", description="Marked-box gas toolkit: exact partition functions, "
                                "canonical sampling, variational free energies and condensation structure.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("exact-z", parents=[common], help="exact canonical partition function by enumeration")
    e.add_argument("--box", help="d=1 interval 'a,b'")
    e.add_argument("--N", type=int)
    e.add_argument("--conditional", action="store_true", default=None, help="condition on the boundary event")
    e.add_argument("--pinned", metavar="n1,n2,...", help="sizes of macroscopic marks pinned at the origin")
    e.add_argument("--oracle", action="store_true", default=None, help="cross-check against the v=0 power series")

    s = sub.add_parser("sample", parents=[common], help="Metropolis-Hastings chain, CSV observables")
    s.add_argument("--box", help="d=1 interval 'a,b'")
    s.add_argument("--N", type=int)
    s.add_argument("--sweeps", type=int)
    s.add_argument("--burnin", type=int)

    f = sub.add_parser("free-energy", parents=[common], help="free gas, bounds, product ansatz, EL fixed point")
    f.add_argument("--rho", type=float)
    f.add_argument("--rho-grid", metavar="start,stop,step", help="sweep mode over a uniform density grid")

    t = sub.add_parser("structure", parents=[common], help="rho_t, extended curves and mass curves")
    t.add_argument("--curve", metavar="PATH|NAME", help="CSV of (rho, chi) samples or quadratic|synthetic|linear:<beta>")
    t.add_argument("--rho-c", type=float)
    t.add_argument("--vbar", type=float)
    return p


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for key, val in vars(args).items():
        if key in ("config", "out", "command") or val is None:
            continue
        if key == "box":
            a, b = (int(t) for t in val.split(","))
            val = [a, b]
        elif key == "pinned":
            val = _parse_sizes(val)
        elif key == "rho_grid":
            start, stop, step = (float(t) for t in val.split(","))
            val = list(np.round(np.arange(start, stop + step / 2, step), 12))
        out[key] = val
    return out


def make_config(args: argparse.Namespace) -> RunConfig:
    data, base = _read_config(args.config)
    settings = {k.replace("-", "_"): v for k, v in data.items()}
    settings.update(_overrides(args))
    if getattr(args, "model", None):
        settings["model"] = str(Path(args.model).resolve())
    return RunConfig(args.command, settings, base)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        if args.command == "exact-z":
            _emit(cmd_exact_z(cfg), args.out)
        elif args.command == "sample":
            text, summary, snaps = cmd_sample(cfg)
            _emit(text, args.out)
            if args.out:
                _emit(summary, str(Path(args.out).with_suffix(".summary.json")))
                if snaps:
                    body = "".join(f"# sweep {sw}\n{c.to_text()}" for sw, c in snaps)
                    Path(args.out).with_suffix(".snapshots.txt").write_text(body, encoding="utf-8")
            else:
                sys.stderr.write(json.dumps(summary, sort_keys=True) + "\n")
        elif args.command == "free-energy":
            _emit(cmd_free_energy(cfg), args.out)
        elif args.command == "structure":
            out_json, grid, report = cmd_structure(cfg)
            _structure_outputs(out_json, grid, report, args.out)
    except BoxGasError as exc:
        extra = f" [violated: {exc.inequality}]" if getattr(exc, "inequality", None) else ""
        sys.stderr.write(f"boxgas: error: {exc}{extra}\n")
        return exc.exit_code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
