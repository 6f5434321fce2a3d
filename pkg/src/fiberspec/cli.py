"""Command line entry point: ``fiberspec <subcommand> <config>``.

Subcommands: ground, dispersion, ir-sweep, check, dump-modes.  Tables are
written as CSV, reports as JSON, both tagged with the config hash.  The
exit status is 0 exactly when every emitted report passes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from pathlib import Path

import numpy as np

from .cache import ResultCache, record_key
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import (
    ConeSpec,
    IdentityReport,
    concavity_probe,
    cone_membership,
    feynman_hellmann_check,
    ir_sweep,
    photon_number_two_ways,
    pull_through_residual,
    resolvent_limit_check,
)
from .field import Model, build_mode_set
from .fock import ccr_residual
from .krylov import ConvergenceError
from .spectral import (
    DispersionRow,
    DispersionTable,
    IndefiniteShiftError,
    default_fd_step,
    fd_gradient,
    fmt,
    lowest_eigenpair,
    row_from_record,
)

log = logging.getLogger("fiberspec")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3
CCR_MAX_PAIRS = 600


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


class Runner:
    """Executes one subcommand for a parsed config."""

    def __init__(self, cfg: RunConfig, outdir=None, cache: ResultCache | None = None):
        self.cfg = cfg
        self.outdir = Path(outdir if outdir is not None else cfg[("output", "directory")])
        self.cache = cache
        self.formats = set(cfg[("output", "formats")])
        self.reports: list[IdentityReport] = []
        self.failures: list[dict] = []
        self.artifacts: list[str] = []
        self._write_lock = threading.Lock()

    @cached_property
    def model(self) -> Model:
        return Model(self.cfg.discretization, self.cfg.coupling, self.cfg.n_max, self.cfg.c_max)

    @property
    def solver(self) -> dict:
        return self.cfg.solver_kwargs()

    @property
    def workers(self) -> int:
        return self.cfg[("solver", "workers")]

    # -- helpers -------------------------------------------------------------

    def ground(self, xi):
        xi = np.asarray(xi, dtype=float)
        fiber = self.model.hamiltonian(xi)
        key = record_key(xi)
        rec = self.cache.get(self.cfg.model_hash, key) if self.cache else None
        if rec is None:
            rec = lowest_eigenpair(fiber.H, xi=xi, **self.solver)
            if self.cache:
                with self._write_lock:
                    self.cache.put(self.cfg.model_hash, key, rec)
        return fiber, rec

    def gradient(self, xi):
        h = self.cfg[("task", "fd_step")] or default_fd_step(xi)
        return fd_gradient(self.model, xi, h=h, **self.solver).grad

    def write(self, name: str, text: str):
        self.outdir.mkdir(parents=True, exist_ok=True)
        (self.outdir / name).write_text(text, newline="")
        self.artifacts.append(name)

    def emit_reports(self, name: str, extra=None):
        body = {"config_hash": self.cfg.hash,
                "pass": all(r.passed for r in self.reports) and not self.failures,
                "reports": [r.to_json(self.cfg.hash) for r in self.reports],
                "failures": self.failures}
        if extra:
            body.update(extra)
        if "json" in self.formats:
            self.write(name, dump_json(body))
        return body["pass"]

    # -- subcommands -----------------------------------------------------------

    def run_ground(self) -> int:
        xi = self.cfg.xi_list[0]
        fiber, gs = self.ground(xi)
        grad = self.gradient(xi)
        row = row_from_record(self.model, fiber, gs)
        self.reports.append(feynman_hellmann_check(gs, fiber, grad))
        self.reports.append(self._photon_number_report(gs))
        record = {"xi": xi, "E": gs.energy, "t": row.t, "N_expect": row.n_expect,
                  "v_expect": row.v_expect, "grad_fd": grad, "gap": gs.gap,
                  "cluster_size": gs.cluster_size, "iterations": gs.iterations,
                  "residual": gs.residual, "method": gs.method, "dim": self.model.dim}
        ok = self.emit_reports("ground.json", {"record": record})
        return EXIT_OK if ok else EXIT_FAIL

    def run_dispersion(self) -> int:
        xis = self.cfg.xi_list

        def one(xi):
            try:
                fiber, gs = self.ground(xi)
            except ConvergenceError as exc:
                self.failures.append({"xi": xi, "error": str(exc)})
                return DispersionRow(np.asarray(xi, float), np.nan, np.nan, np.full(3, np.nan),
                                     np.nan, 0, exc.best_residual, str(exc))
            return row_from_record(self.model, fiber, gs)

        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                rows = list(pool.map(one, xis))
        else:
            rows = [one(x) for x in xis]
        table = DispersionTable(rows, {"provenance": self.model.modes.provenance})
        if "csv" in self.formats:
            self.outdir.mkdir(parents=True, exist_ok=True)
            table.write_csv(self.outdir / "dispersion.csv", self.cfg.hash)
            self.artifacts.append("dispersion.csv")
        return EXIT_OK if not self.failures else EXIT_FAIL

    def run_ir_sweep(self) -> int:
        sigmas = self.cfg[("task", "sigma_list")]
        if len(sigmas) < 4:
            self.failures.append({"error": f"need ≥ 4 points for the sweep fit, got {len(sigmas)}"})
            return EXIT_REFUSED
        xi = self.cfg.xi_list[0]
        rep = ir_sweep(xi, sigmas, self.cfg.discretization, self.cfg.coupling, self.cfg.n_max,
                       workers=self.workers, **self.solver)
        if "csv" in self.formats:
            cols = ["sigma", "E", "N_expect", "kmin", "n_max", "dim", "error", "config_hash"]
            lines = []
            for r in rep.rows:
                lines.append([fmt(r.sigma), fmt(r.energy), fmt(r.n_expect), fmt(r.kmin),
                              str(r.n_max), str(r.dim), r.error or "", self.cfg.hash])
            self.outdir.mkdir(parents=True, exist_ok=True)
            with open(self.outdir / "ir_sweep.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\r\n")
                w.writerow(cols)
                w.writerows(lines)
            self.artifacts.append("ir_sweep.csv")
        for r in rep.rows:
            if r.error:
                self.failures.append({"sigma": r.sigma, "error": r.error})
        ok = rep.refused is None
        entry = {"name": "ir_sweep_fit", "value": rep.slope, "tolerance": None, "pass": ok,
                 "config_hash": self.cfg.hash,
                 "provenance": {"xi": xi, "e": self.cfg.coupling.e,
                                "grid": self.model_grid_hash()},
                 "fit": {"slope": rep.slope, "intercept": rep.intercept, "r2": rep.r2,
                         "refused": rep.refused}}
        if "json" in self.formats:
            self.write("ir_sweep.json", dump_json({"config_hash": self.cfg.hash, "pass": ok,
                                                   "reports": [entry], "failures": self.failures}))
        if not ok:
            self.failures.append({"error": rep.refused})
            return EXIT_REFUSED
        return EXIT_OK if not self.failures else EXIT_FAIL

    def model_grid_hash(self) -> str:
        return hashlib.sha256(self.cfg.canonical(("grid",)).encode()).hexdigest()[:16]

    def run_check(self) -> int:
        cfg, model = self.cfg, self.model
        xi = cfg.xi_list[0]
        self.reports.append(self._hermiticity_report(xi))
        self.reports.append(self._ccr_report())
        fiber, gs = self.ground(xi)
        grad = self.gradient(xi)
        self.reports.append(feynman_hellmann_check(gs, fiber, grad))
        self.reports.append(self._photon_number_report(gs))
        eps = cfg[("task", "eps")]
        channels = cfg[("task", "channels")] or self._channels_in_k(grad, eps)
        for mu in channels:
            try:
                self.reports.append(pull_through_residual(gs, model, mu, solver_tol=cfg[("solver", "tol")]))
            except IndefiniteShiftError as exc:
                self.failures.append({"check": f"pull_through[{mu}]", "error": str(exc)})
        directions = cfg[("task", "directions")] or [self._orthogonal_direction(grad)]
        for omega in directions:
            try:
                self.reports.append(resolvent_limit_check(
                    model, xi, omega, cfg[("task", "k_list")], grad, gs=gs, eps=eps,
                    tol=cfg[("solver", "tol")]))
            except ValueError as exc:
                self.failures.append({"check": "resolvent_limit", "direction": omega,
                                      "error": str(exc)})
        self.reports.append(self._concavity_report(xi))
        ok = self.emit_reports("check.json")
        return EXIT_OK if ok else EXIT_FAIL

    def run_dump_modes(self) -> int:
        self.outdir.mkdir(parents=True, exist_ok=True)
        build_mode_set(self.cfg.discretization, self.cfg.coupling).write_csv(self.outdir / "modes.csv")
        self.artifacts.append("modes.csv")
        return EXIT_OK

    # -- report builders -----------------------------------------------------

    def _hermiticity_report(self, xi) -> IdentityReport:
        F = self.model.fields
        ops = {"H": self.model.hamiltonian(xi).H, "H_f": F.H_f, "N": F.N}
        for i, ax in enumerate("xyz"):
            ops[f"A_{ax}"], ops[f"B_{ax}"], ops[f"P_{ax}"] = F.A[i], F.B[i], F.P_f[i]
        bad = sorted(name for name, op in ops.items() if not op.is_exactly_hermitian())
        return IdentityReport("hermiticity", float(len(bad)), 0.0, not bad,
                              self._prov(xi), {"non_hermitian": bad})

    def _ccr_report(self) -> IdentityReport:
        basis = self.model.basis
        M = basis.num_channels
        pairs = [(a, b) for a in range(M) for b in range(M)]
        if len(pairs) > CCR_MAX_PAIRS:
            rng = np.random.default_rng(self.cfg[("solver", "seed")])
            pick = rng.choice(len(pairs), CCR_MAX_PAIRS, replace=False)
            pairs = [pairs[i] for i in sorted(pick)]
        r = ccr_residual(basis, pairs)
        return IdentityReport("ccr", r, 1e-12, r <= 1e-12, self._prov(np.zeros(3)),
                              {"pairs": len(pairs)})

    def _photon_number_report(self, gs) -> IdentityReport:
        diag, ladder = photon_number_two_ways(self.model, gs.psi)
        r = abs(diag - ladder) / max(abs(diag), 1e-12)
        return IdentityReport("photon_number_two_ways", r, 1e-10, r <= 1e-10, self._prov(gs.xi),
                              {"diagonal": diag, "ladder": ladder})

    def _concavity_report(self, xi) -> IdentityReport:
        xi = np.asarray(xi, dtype=float)
        n = np.linalg.norm(xi)
        end = xi if n > 0 else np.array([0.4, 0.0, 0.0])
        ray = [s * end for s in np.linspace(0.0, 1.0, 9)]
        rows = []
        for x in ray:
            fiber, gs = self.ground(x)
            rows.append(row_from_record(self.model, fiber, gs))
        table = DispersionTable(rows, {"provenance": self.model.modes.provenance})
        rep = concavity_probe(table, tol=self.cfg[("solver", "tol")])
        rep.provenance = self._prov(xi)
        return rep

    def _channels_in_k(self, grad, eps) -> list[int]:
        modes = self.model.modes
        spec = ConeSpec(grad, eps)
        out = []
        for mu in range(modes.num_channels):
            k = modes.channel_k[mu]
            _, in_k = cone_membership(k / np.linalg.norm(k), spec, atol=1e-8)
            if in_k:
                out.append(mu)
        return out

    @staticmethod
    def _orthogonal_direction(grad) -> np.ndarray:
        g = np.asarray(grad, dtype=float)
        if np.linalg.norm(g) < 1e-8:
            return np.array([0.0, 1.0, 0.0])
        ghat = g / np.linalg.norm(g)
        trial = np.array([0.0, 0.0, 1.0]) if abs(ghat[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        w = np.cross(ghat, trial)
        return w / np.linalg.norm(w)

    def _prov(self, xi) -> dict:
        return {"xi": [float(x) for x in np.asarray(xi, float)],
                "e": float(self.cfg.coupling.e), "grid": self.model.modes.provenance}


COMMANDS = {
    "ground": Runner.run_ground,
    "dispersion": Runner.run_dispersion,
    "ir-sweep": Runner.run_ir_sweep,
    "check": Runner.run_check,
    "dump-modes": Runner.run_dump_modes,
}


def run(command: str, cfg: RunConfig, outdir=None, cache: ResultCache | None = None):
    """Run a subcommand; returns (exit status, Runner)."""
    runner = Runner(cfg, outdir, cache)
    status = COMMANDS[command](runner)
    return status, runner


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fiberspec", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="path to a key = value config file")
    ap.add_argument("-o", "--outdir", help="override [output] directory")
    ap.add_argument("--cache-dir", help="cache location (default $FIBERSPEC_CACHE_DIR)")
    ap.add_argument("--no-cache", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        print(dump_json({"status": "error", "failures": [{"error": str(exc)}]}), end="")
        return EXIT_CONFIG
    for d in cfg.defaults_applied:
        if d == "coupling.sigma_ir":
            print(f"default applied: {d} = {cfg[('coupling', 'sigma_ir')]!r}", file=sys.stderr)
    cache = None if args.no_cache else ResultCache(args.cache_dir)
    status, runner = run(args.command, cfg, args.outdir, cache)
    summary = {"command": args.command, "config_hash": cfg.hash,
               "status": "ok" if status == EXIT_OK else "fail",
               "artifacts": runner.artifacts, "failures": runner.failures}
    print(dump_json(summary), end="")
    if cache is not None:
        log.info("cache hits=%d misses=%d", cache.hits, cache.misses)
    return status


if __name__ == "__main__":
    sys.exit(main())
