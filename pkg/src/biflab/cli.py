"""Command-line front end: ``biflab run <config>`` and ``biflab render <grid.csv>``.

Exit codes of ``run``: 0 success, 1 configuration error, 2 the escape
certificate for U ⋐ V failed, 3 a task failed numerically (details in the
manifest).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfg
from . import critical, gridio, lyapunov, misiurewicz
from .errors import BiflabError, ConfigError, MalformedGrid, NoEscapeCertificate
from .family import ParameterDomain, validate_polynomial_like
from .measure import derive_seed

log = logging.getLogger("biflab")

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_NUMERIC = 0, 1, 2, 3
CACHE_ENV = "BIFLAB_CACHE_DIR"
BASELINE_KEY = 99


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _cplx(z):
    z = complex(z)
    return [z.real, z.imag]


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


class Run:
    """State of one ``run`` invocation: outputs, warnings and task records."""

    def __init__(self, conf, outdir, threads):
        self.conf = conf
        self.outdir = Path(outdir)
        self.threads = threads
        self.files = []
        self.warnings = []
        self.tasks = {}
        self.results = {}

    def path(self, name):
        self.files.append(name)
        return self.outdir / name

    # -- sweep / ddc -----------------------------------------------------
    def _cache_key(self, dom, knobs, seed):
        spec = self.conf.family
        ident = {
            "P": [[_cplx(c) for c in row] for row in spec.P],
            "Q": None if spec.Q is None else [[[_cplx(c) for c in r] for r in plane] for plane in spec.Q],
            "R": spec.escape_radius, "d_star": spec.d_star_upper,
            "domain": [_cplx(dom.center), dom.half_width, dom.half_height, dom.nx, dom.ny],
            "knobs": knobs, "seed": seed,
        }
        return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()[:32]

    def _sweep(self, dom, knobs, seed):
        cache = os.environ.get(CACHE_ENV)
        key = self._cache_key(dom, knobs, seed)
        if cache:
            base = Path(cache) / key
            if base.with_suffix(".L.csv").exists() and base.with_suffix(".json").exists():
                values, _ = gridio.read_grid(base.with_suffix(".L.csv"))
                ses, _ = gridio.read_grid(base.with_suffix(".se.csv"))
                with open(base.with_suffix(".json"), encoding="utf-8") as fh:
                    manifest = json.load(fh)
                log.info("sweep cache hit %s", key)
                grid = lyapunov.LyapunovGrid(dom, values, ses, manifest=manifest)
                return grid, True
        grid = lyapunov.sweep_grid(self.conf.family, dom, knobs["depth"], knobs["count"], seed,
                                   mode=knobs["mode"], threads=self.threads,
                                   jac_floor=math.exp(knobs["jac_floor_log"]))
        if cache:
            Path(cache).mkdir(parents=True, exist_ok=True)
            base = Path(cache) / key
            gridio.write_domain_grid(base.with_suffix(".L.csv"), grid.values, dom)
            gridio.write_domain_grid(base.with_suffix(".se.csv"), grid.std_errors, dom)
            _dump_json(base.with_suffix(".json"), grid.manifest)
        return grid, False

    def task_sweep(self, b):
        dom = self.conf.domain
        grid, hit = self._sweep(dom, b, self.conf.seed)
        gridio.write_domain_grid(self.path("L_grid.csv"), grid.values, dom)
        gridio.write_domain_grid(self.path("L_stderr.csv"), grid.std_errors, dom)
        gridio.write_pgm(self.path("L_grid.pgm"), grid.values, "linear")
        errors = grid.manifest.get("cell_errors", [])
        if errors:
            self.warnings.append(f"sweep: {len(errors)} cells exceeded the Jacobian clipping limit")
        bad = int(np.sum(~np.isfinite(grid.values)))
        if bad:
            self.warnings.append(f"sweep: {bad} cells have no finite estimate")
        violations = grid.lower_bound_violations(self.conf.family.d_t)
        if len(violations):
            self.warnings.append(f"sweep: {len(violations)} cells below 1/2 log d_t - 3 std_error")
        self.results["grid"] = grid
        return {"cache_hit": hit, "cell_errors": errors, "lower_bound_violations": int(len(violations))}

    def task_ddc(self, b):
        grid = self.results["grid"]
        bif = lyapunov.ddc_field(grid)
        dom = self.conf.domain
        density = bif.laplacian / (2 * math.pi)
        gridio.write_domain_grid(self.path("ddc.csv"), density, dom, offset=1)
        gridio.write_pgm(self.path("ddc.pgm"), density, b["scale"])
        info = {"mass": bif.mass_over(), "boundary_flux": bif.boundary_flux()}
        floor = None
        if b["baseline.center"] is not None:
            side = b["baseline.side"] or 2 * dom.half_width
            n = b["baseline.n"] or dom.nx
            bdom = ParameterDomain.square(b["baseline.center"], side, n)
            knobs = self.conf.blocks["sweep"]
            bgrid, _ = self._sweep(bdom, knobs, derive_seed(self.conf.seed, BASELINE_KEY))
            bmass = lyapunov.ddc_field(bgrid).mass_over()
            floor = lyapunov.noise_floor(bmass, b["noise_factor"])
            info.update({"baseline_center": _cplx(bdom.center), "baseline_side": side,
                         "baseline_mass": bmass, "noise_floor": floor,
                         "above_noise_floor": info["mass"] > floor})
        self.results["bif"] = bif
        self.results["noise_floor"] = floor
        _dump_json(self.path("ddc.json"), info)
        return {"mass": info["mass"], "noise_floor": floor}

    # -- volume ------------------------------------------------------------
    def task_volume(self, b):
        dom = self.conf.domain
        center = dom.center if b["center"] is None else b["center"]
        side = b["side"] or 2 * min(dom.half_width, dom.half_height)
        window = ParameterDomain.square(center, side, max(dom.nx, 1))
        spec = self.conf.family
        series = critical.volume_series(spec, window, range(b["n_min"], b["n_max"] + 1),
                                        tau=b["tau"], strata=b["strata"], seed=self.conf.seed)
        out = series.as_dict()
        try:
            fit = critical.growth_rate(series, b["tail_fraction"])
            out["classification"] = critical.classify_stability(fit, spec.d_star_upper).value
        except BiflabError as exc:
            out["classification"] = None
            self.warnings.append(f"volume: {exc}")
        out["fitted_rate"], out["rate_ci"] = series.fitted_rate, series.rate_ci
        out["log_d_t"] = math.log(spec.d_t)
        out["log_d_star_upper"] = math.log(spec.d_star_upper)
        if series.flags:
            self.warnings.append(f"volume: flags {', '.join(series.flags)}")
        _dump_json(self.path("volume.json"), out)
        return {"fitted_rate": series.fitted_rate, "classification": out["classification"]}

    # -- cycles / misiurewicz ----------------------------------------------
    def task_cycles(self, b):
        dom = self.conf.domain
        base = dom.center if b["base_lam"] is None else b["base_lam"]
        tracks = misiurewicz.default_tracks(self.conf.family, dom, b["periods"], base, b["order"])
        meta = []
        for k, tr in enumerate(tracks):
            pts = tr.points if self.conf.family.k == 1 else tr.points[..., 0]
            gridio.write_domain_grid(self.path(f"track_{k}_re.csv"), pts.real, dom)
            gridio.write_domain_grid(self.path(f"track_{k}_im.csv"), pts.imag, dom)
            if self.conf.family.k == 2:
                gridio.write_domain_grid(self.path(f"track_{k}_w_re.csv"), tr.points[..., 1].real, dom)
                gridio.write_domain_grid(self.path(f"track_{k}_w_im.csv"), tr.points[..., 1].imag, dom)
            meta.append({"track": k, "period": tr.period, "base_lam": _cplx(tr.base_lam),
                         "base_point": [_cplx(v) for v in np.atleast_1d(tr.base_point)],
                         "valid_fraction": tr.valid_fraction})
            invalid = int((~tr.valid).sum())
            if invalid:
                self.warnings.append(f"cycles: track {k} (period {tr.period}) invalid on {invalid} cells")
        _dump_json(self.path("tracks.json"), {"tracks": meta})
        self.results["tracks"] = tracks
        return {"tracks": len(tracks)}

    def task_misiurewicz(self, b):
        res = misiurewicz.misiurewicz_scan(self.conf.family, self.conf.domain, self.results["tracks"],
                                           b["n0_max"], residual_tol=b["residual_tol"],
                                           transversality_floor=b["transversality_floor"],
                                           julia_check=b["julia_check"].lower() == "true",
                                           seed=self.conf.seed)
        hits = [h.as_dict() for h in res.hits]
        bif = self.results.get("bif")
        if bif is not None and b["verify"].lower() == "true":
            floor = self.results.get("noise_floor") or 0.0
            for h, d in zip(res.hits, hits):
                rep = misiurewicz.verify_hit(self.conf.family, h, bif, floor)
                d["verification"] = rep.as_dict()
                if rep.contradiction:
                    self.warnings.append(f"misiurewicz: hit at {d['lam_star']} has no bifurcation mass above the floor")
        _dump_json(self.path("hits.json"), {"hits": hits, "candidates": res.candidates,
                                             "rejected": res.rejected,
                                             "skipped_cells": {str(k): v for k, v in res.skipped_cells.items()}})
        return {"hits": len(hits)}

    # -- census ------------------------------------------------------------
    def task_census(self, b):
        spec = self.conf.family
        try:
            center = [complex(t.replace(" ", "")) for t in cfg._split_list(b["center"])]
        except ValueError:
            raise ConfigError(f"census.center: cannot parse {b['center']!r}") from None
        if len(center) != spec.k:
            raise ConfigError(f"census.center needs {spec.k} coordinate(s)")
        a0 = center[0] if spec.k == 1 else tuple(center)
        sample_seed = derive_seed(self.conf.seed, 5)
        rows = []
        for n in b["n"]:
            c = critical.inverse_branch_census(spec, b["lam"], a0, b["radius"], b["rho"], n,
                                               boundary=b["boundary"], seed=sample_seed)
            rows.append({"n": n, "count": c.count, "total": c.total, "ratio": c.ratio})
        _dump_json(self.path("census.json"), {"lam": _cplx(b["lam"]), "center": [_cplx(v) for v in center],
                                               "radius": b["radius"], "rho": b["rho"], "rows": rows})
        return {"ratios": [r["ratio"] for r in rows]}

    # -- orchestration -----------------------------------------------------
    def execute(self):
        status = EXIT_OK
        failed = set()
        for name in self.conf.tasks:
            deps = [d for d in cfg.TASK_DEPENDS.get(name, ()) if d in failed]
            if deps:
                self.tasks[name] = {"status": "skipped", "reason": f"depends on failed {deps[0]}"}
                failed.add(name)
                continue
            t0 = time.perf_counter()
            log.info("task %s", name)
            try:
                info = getattr(self, f"task_{name}")(self.conf.blocks[name])
                self.tasks[name] = {"status": "ok", "info": info}
            except NoEscapeCertificate:
                raise
            except ConfigError:
                raise
            except BiflabError as exc:
                self.tasks[name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
                failed.add(name)
                status = EXIT_NUMERIC
            self.tasks[name]["seconds"] = round(time.perf_counter() - t0, 3)
        return status

    def write_manifest(self, status):
        artifacts = [{"file": f, "sha256": _sha256(self.outdir / f), "bytes": (self.outdir / f).stat().st_size}
                     for f in self.files]
        manifest = {
            "config_hash": self.conf.digest,
            "seed": self.conf.seed,
            "family": self.conf.family.name,
            "tasks": self.tasks,
            "warnings": self.warnings,
            "artifacts": artifacts,
            "exit_status": status,
        }
        _dump_json(self.outdir / "manifest.json", manifest)
        return manifest


def run(config_path, output=None, threads=1, seed=None):
    """Execute a run configuration; returns the exit status."""
    try:
        conf = cfg.load(config_path, seed_override=seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(output or conf.output)
    try:
        validate_polynomial_like(conf.family, conf.domain)
    except NoEscapeCertificate as exc:
        print(f"geometry error: NoEscapeCertificate: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    outdir.mkdir(parents=True, exist_ok=True)
    job = Run(conf, outdir, threads)
    try:
        status = job.execute()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoEscapeCertificate as exc:
        print(f"geometry error: NoEscapeCertificate: {exc}", file=sys.stderr)
        job.tasks["certificate"] = {"status": "failed", "error": f"NoEscapeCertificate: {exc}"}
        job.write_manifest(EXIT_GEOMETRY)
        return EXIT_GEOMETRY
    job.write_manifest(status)
    for name, rec in job.tasks.items():
        if rec["status"] != "ok":
            print(f"task {name}: {rec.get('error', rec.get('reason'))}", file=sys.stderr)
    return status


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads for grid sweeps (results do not depend on it)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the master seed of the config")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="biflab", parents=[common],
                                description="Bifurcation currents of polynomial-like families.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="execute a run configuration")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides the config's 'output')")
    g = sub.add_parser("render", parents=[common], help="render a grid CSV as an 8-bit PGM")
    g.add_argument("grid")
    g.add_argument("--scale", choices=gridio.SCALES, default="linear")
    g.add_argument("-o", "--output", required=True)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(name)s: %(message)s")
    threads = getattr(args, "threads", 1)
    if threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return run(args.config, args.output, threads, getattr(args, "seed", None))
    try:
        gridio.render(args.grid, args.output, args.scale)
    except (MalformedGrid, OSError) as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
