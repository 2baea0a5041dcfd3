"""Command line runner for the model problems.

Subcommands: ``run``, ``decay-study``, ``fine-reference`` and ``cache {write,read}``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .aux_space import build_aux, lambda_min
from .cem_basis import build_space, cache_key, read_cache, write_cache
from .correctors import global_corrector_pair
from .fem import discretize, facet_tractions, interpolate, quad_norm
from .grid import GridSpec, build_grid
from .medium import PRESETS, load_raster, preset_medium
from .models import model_problem
from .msolve import assemble_coarse, compute_errors, fine_reference, localized_pass, solve_multiscale

MODELS = ("1", "2", "3", "custom")
COLUMNS = (
    "E", "Noc", "Nbf", "H", "variant", "relEnergy", "relL2", "relH", "relG", "lambdaMin", "wallTimeSeconds", "flags",
)


@dataclass
class RunConfig:
    model: str = "1"
    coarse: List[int] = field(default_factory=lambda: [10, 10])
    fine: List[int] = field(default_factory=lambda: [8, 8])
    contrast: List[float] = field(default_factory=lambda: [1e4])
    E_matrix: float = 1.0
    nu_matrix: float = 0.25
    nu_incl: float = 0.45
    nbf: int = 3
    noc: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    variant: str = "constrained"
    corrector_variant: Optional[str] = None  # defaults to ``variant``
    medium: Optional[str] = None  # preset id or raster path; None picks the model's default
    legend: Optional[str] = None  # JSON file {key: [E, nu]} for raster media
    out: Optional[str] = None
    format: str = "csv"
    seed: int = 0
    threads: int = 1

    def validate(self):
        self.model = str(self.model)
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if len(self.coarse) != 2 or len(self.fine) != 2:
            raise ValueError("coarse and fine take two integers each")
        GridSpec(*self.coarse, *self.fine)
        if not self.contrast or not self.noc:
            raise ValueError("sweep lists must be non-empty")
        if any(m < 0 for m in self.noc):
            raise ValueError("oversampling layers must be non-negative")
        if self.nbf < 1:
            raise ValueError("nbf must be positive")
        for v in (self.variant, self.corrector_variant or self.variant):
            if v not in ("relaxed", "constrained"):
                raise ValueError("variant must be relaxed or constrained")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        if self.medium is not None and self.medium not in PRESETS and self.medium != "homogeneous":
            if not Path(self.medium).is_file():
                raise FileNotFoundError(f"medium raster {self.medium} not found")
            if self.legend is None or not Path(self.legend).is_file():
                raise FileNotFoundError("a raster medium needs an existing --legend file")
        return self


@dataclass
class ReportRow:
    E: float
    Noc: int
    Nbf: int
    H: float
    variant: str
    relEnergy: Optional[float]
    relL2: Optional[float]
    relH: float
    relG: float
    lambdaMin: float
    wallTimeSeconds: float
    flags: str = ""


# ---------------------------------------------------------------------------


def _setup(cfg: RunConfig, E: float):
    grid = build_grid(GridSpec(*cfg.coarse, *cfg.fine))
    mp = model_problem(cfg.model, grid)
    name = cfg.medium or mp.medium
    if name in PRESETS or name == "homogeneous":
        med = preset_medium(name, grid, E / cfg.E_matrix, cfg.E_matrix, cfg.nu_matrix, cfg.nu_incl)
    else:
        legend = json.loads(Path(cfg.legend).read_text())
        med = load_raster(name, grid, {int(k): tuple(v) for k, v in legend.items()})
    return grid, mp, discretize(grid, med)


def _coarse_size(grid) -> float:
    return max(grid.Hx, grid.Hy)


def _executor(cfg):
    return ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else nullcontext(None)


def _has_dirichlet_data(grid, mp, lifting) -> bool:
    return bool(np.any(lifting[mp.bspec.dirichlet_dofs(grid)] != 0.0))


def _has_neumann_data(grid, mp) -> bool:
    return bool(np.any(facet_tractions(grid, mp.bspec)[mp.bspec.neumann] != 0.0))


def _decay_value(rep_val, name, has_data, flags):
    """No boundary data means no corrector to localize: report an exact zero."""
    if not has_data:
        if f"{name}:undefined" in flags:
            flags.remove(f"{name}:undefined")
        flags.append(f"{name}:no-data")
        return 0.0
    return rep_val


def run(cfg: RunConfig) -> List[ReportRow]:
    cfg.validate()
    rows = []
    with _executor(cfg) as ex:
        for E in cfg.contrast:
            t0 = time.perf_counter()
            grid, mp, disc = _setup(cfg, E)
            ref = fine_reference(disc, mp.bspec, mp.f)
            aux = build_aux(disc, cfg.nbf, executor=ex)
            Hg, Gg = global_corrector_pair(disc, aux, mp.bspec, ref.lifting, cfg.corrector_variant or cfg.variant)
            hd, gd = _has_dirichlet_data(grid, mp, ref.lifting), _has_neumann_data(grid, mp)
            shared = time.perf_counter() - t0
            for m in cfg.noc:
                t1 = time.perf_counter()
                space, H, G = localized_pass(
                    disc, aux, mp.bspec, ref.lifting, m, cfg.variant, executor=ex, corrector_variant=cfg.corrector_variant
                )
                u = solve_multiscale(assemble_coarse(space, disc.A, ref.load, H, G), space, H, G, ref.lifting)
                rep = compute_errors(u, ref.u, disc, aux, H=H, H_glo=Hg, G=G, G_glo=Gg)
                flags = list(rep.flags)
                rows.append(
                    ReportRow(
                        E=float(E), Noc=int(m), Nbf=cfg.nbf, H=_coarse_size(grid), variant=cfg.variant,
                        relEnergy=rep.rel_energy, relL2=rep.rel_l2,
                        relH=_decay_value(rep.rel_h, "relH", hd, flags),
                        relG=_decay_value(rep.rel_g, "relG", gd, flags),
                        lambdaMin=rep.lambda_min,
                        wallTimeSeconds=shared + time.perf_counter() - t1,
                        flags=";".join(flags),
                    )
                )
    return rows


def decay_study(cfg: RunConfig) -> List[ReportRow]:
    """Corrector decay only: global correctors once per contrast, then localized ones per m."""
    cfg.validate()
    rows = []
    with _executor(cfg) as ex:
        for E in cfg.contrast:
            t0 = time.perf_counter()
            grid, mp, disc = _setup(cfg, E)
            lifting = interpolate(grid, mp.bspec.h)
            hd, gd = _has_dirichlet_data(grid, mp, lifting), _has_neumann_data(grid, mp)
            if not (hd or gd):
                raise ValueError("decay study needs non-zero Dirichlet or Neumann data")
            aux = build_aux(disc, cfg.nbf, executor=ex)
            Hg, Gg = global_corrector_pair(disc, aux, mp.bspec, lifting, cfg.corrector_variant or cfg.variant)
            lam = lambda_min(aux)
            shared = time.perf_counter() - t0
            for m in cfg.noc:
                t1 = time.perf_counter()
                _, H, G = localized_pass(
                    disc, aux, mp.bspec, lifting, m, cfg.corrector_variant or cfg.variant, executor=ex, basis=False
                )
                rep = compute_errors(lifting, lifting, disc, H=H, H_glo=Hg, G=G, G_glo=Gg)
                flags = [f for f in rep.flags if f.startswith("rel")]
                rows.append(
                    ReportRow(
                        E=float(E), Noc=int(m), Nbf=cfg.nbf, H=_coarse_size(grid), variant=cfg.variant,
                        relEnergy=None, relL2=None,
                        relH=_decay_value(rep.rel_h, "relH", hd, flags),
                        relG=_decay_value(rep.rel_g, "relG", gd, flags),
                        lambdaMin=lam,
                        wallTimeSeconds=shared + time.perf_counter() - t1,
                        flags=";".join(flags),
                    )
                )
    return rows


def fine_reference_only(cfg: RunConfig, save: Optional[str] = None) -> List[dict]:
    cfg.validate()
    out = []
    for E in cfg.contrast:
        t0 = time.perf_counter()
        grid, mp, disc = _setup(cfg, E)
        ref = fine_reference(disc, mp.bspec, mp.f)
        rec = {
            "E": float(E),
            "n_dofs": int(grid.n_dofs),
            "n_free": int(grid.n_dofs - len(ref.essential)),
            "energyNorm": quad_norm(ref.u, disc.A),
            "l2Norm": quad_norm(ref.u, disc.M),
            "wallTimeSeconds": time.perf_counter() - t0,
        }
        if save:
            path = Path(save) if len(cfg.contrast) == 1 else Path(save).with_suffix(f".E{E:g}.npy")
            np.save(path, ref.u)
            rec["solution"] = str(path)
        out.append(rec)
    return out


def cache_write(cfg: RunConfig, path: str) -> dict:
    cfg.validate()
    E, m = cfg.contrast[0], cfg.noc[0]
    grid, mp, disc = _setup(cfg, E)
    aux = build_aux(disc, cfg.nbf)
    with _executor(cfg) as ex:
        space = build_space(disc, aux, mp.bspec.dirichlet_nodes(grid), m, cfg.variant, executor=ex)
    key = cache_key(disc, m, cfg.variant, cfg.nbf)
    write_cache(path, space, key)
    return dict(key, path=str(path), n_columns=space.n_columns)


def cache_read(path: str, cfg: Optional[RunConfig] = None) -> dict:
    expect = None
    if cfg is not None:
        cfg.validate()
        _, _, disc = _setup(cfg, cfg.contrast[0])
        expect = cache_key(disc, cfg.noc[0], cfg.variant, cfg.nbf)
    header, space = read_cache(path, expect)
    info = {k: v for k, v in header.items() if k != "columns"}
    info["nnz"] = int(space.matrix.nnz)
    return info


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows: List[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def rows_to_json(rows) -> str:
    recs = [asdict(r) if isinstance(r, ReportRow) else r for r in rows]
    recs = [{k: _json_safe(v) for k, v in rec.items()} for rec in recs]
    return json.dumps(recs, indent=1) + "\n"


def emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument handling


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--contrast", type=float, nargs="+", help="inclusion Young's modulus values")
    p.add_argument("--noc", type=int, nargs="+", help="oversampling layer counts")
    p.add_argument("--nbf", type=int)
    p.add_argument("--coarse", type=int, nargs=2, metavar=("NX", "NY"))
    p.add_argument("--fine", type=int, nargs=2, metavar=("nx", "ny"), help="fine cells per coarse element")
    p.add_argument("--variant", choices=("relaxed", "constrained"))
    p.add_argument("--corrector-variant", dest="corrector_variant", choices=("relaxed", "constrained"))
    p.add_argument("--medium", help="preset id or raster file")
    p.add_argument("--legend", help="JSON legend for a raster medium")
    p.add_argument("--E-matrix", dest="E_matrix", type=float)
    p.add_argument("--nu-matrix", dest="nu_matrix", type=float)
    p.add_argument("--nu-incl", dest="nu_incl", type=float)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cemgms", description="Multiscale elasticity solver with mixed boundary data")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_config_flags(sub.add_parser("run", help="full multiscale solve and error report"))
    _add_config_flags(sub.add_parser("decay-study", help="corrector decay with the number of layers"))
    p = sub.add_parser("fine-reference", help="fine-scale reference solve only")
    _add_config_flags(p)
    p.add_argument("--save", help="write the fine solution to this .npy file")
    cache = sub.add_parser("cache", help="write or inspect a basis cache file")
    csub = cache.add_subparsers(dest="action", required=True)
    w = csub.add_parser("write")
    _add_config_flags(w)
    w.add_argument("path")
    r = csub.add_parser("read")
    _add_config_flags(r)
    r.add_argument("path")
    r.add_argument("--check", action="store_true", help="verify the key against the given config")
    return ap


def config_from_args(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        unknown = set(data) - {f.name for f in fields(RunConfig)}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    return RunConfig(**data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        np.random.seed(cfg.seed)
        if args.command in ("run", "decay-study"):
            rows = run(cfg) if args.command == "run" else decay_study(cfg)
            emit(rows_to_csv(rows) if cfg.format == "csv" else rows_to_json(rows), cfg.out)
        elif args.command == "fine-reference":
            emit(rows_to_json(fine_reference_only(cfg, args.save)), cfg.out)
        elif args.action == "write":
            emit(json.dumps(cache_write(cfg, args.path)) + "\n", cfg.out)
        else:
            emit(json.dumps(cache_read(args.path, cfg if args.check else None)) + "\n", cfg.out)
    except Exception as exc:  # every failure becomes one JSON record on stderr
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(record) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
