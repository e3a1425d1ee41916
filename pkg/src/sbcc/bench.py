"""Monte Carlo assessment: RMSE sweeps, peak-locking probes, outlier trials.

Every (displacement, run) cell renders one seeded image pair and evaluates
all methods on it, so method comparisons are paired.  Cell seeds derive
from ``(spec.seed, displacement index, run index)`` only; the reduction runs
in a fixed order, so results do not depend on the thread count.
"""
import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .correlators import MethodConfig, method_config
from .errors import ParameterError
from .pivgrid import FLAG_DEGENERATE, ContextPolicy, GridSpec, process_pair
from .synth import FlowSpec, NoiseSpec, ParticleSpec, generate_pair

__all__ = [
    "ExperimentSpec",
    "CellResult",
    "MethodReport",
    "PeakLockComparison",
    "RobustnessReport",
    "run_rmse_sweep",
    "run_peaklock_probe",
    "run_robustness_trial",
    "emit_report",
    "load_summary",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("method", "dx_true", "dy_true", "rmse", "bias_x", "bias_y",
               "outliers", "degenerate", "sigma_fit", "seconds_per_pair")


def _as_method(m):
    if isinstance(m, MethodConfig):
        return m
    if isinstance(m, dict):
        return MethodConfig.from_dict(m)
    return method_config(m)


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce a Monte Carlo experiment."""

    methods: list
    displacements: list
    runs: int = 100
    particle: ParticleSpec = field(default_factory=ParticleSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    image_size: int = 256
    seed: int = 0
    context: ContextPolicy = field(default_factory=ContextPolicy)
    threshold: float = 4.0
    record_timing: bool = True

    def __post_init__(self):
        self.methods = [_as_method(m) for m in self.methods]
        self.displacements = [tuple(float(c) for c in (d if np.ndim(d) else (d, 0.0)))
                              for d in self.displacements]
        if self.runs < 1:
            raise ParameterError("runs must be >= 1")
        if not self.methods:
            raise ParameterError("at least one method is required")
        limit = self.grid.window / 4.0
        for d in self.displacements:
            if np.hypot(*d) > limit + 1e-12:
                raise ParameterError(
                    f"displacement {d} exceeds window/4 = {limit} px")
        if self.image_size < self.grid.window:
            raise ParameterError("image_size must be at least one window")

    def to_dict(self):
        return {
            "methods": [m.to_dict() for m in self.methods],
            "displacements": [list(d) for d in self.displacements],
            "runs": self.runs,
            "particle": asdict(self.particle),
            "noise": self.noise.to_dict(),
            "grid": asdict(self.grid),
            "image_size": self.image_size,
            "seed": self.seed,
            "context": asdict(self.context),
            "threshold": self.threshold,
            "record_timing": self.record_timing,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        return cls(
            methods=[MethodConfig.from_dict(m) for m in data.pop("methods")],
            displacements=[tuple(d) for d in data.pop("displacements")],
            particle=ParticleSpec(**data.pop("particle", {})),
            noise=NoiseSpec.from_dict(data.pop("noise", {})),
            grid=GridSpec(**data.pop("grid", {})),
            context=ContextPolicy(**data.pop("context", {})),
            **data,
        )

    def cell_seed(self, disp_index, run):
        ss = np.random.SeedSequence([int(self.seed), int(disp_index), int(run)])
        return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class CellResult:
    dx_true: float
    dy_true: float
    rmse: float
    bias_x: float
    bias_y: float
    outliers: int
    degenerate: int
    sigma_fit: float
    seconds_per_pair: float
    n_vectors: int


@dataclass
class MethodReport:
    method: str
    cells: list = field(default_factory=list)

    @property
    def rmse(self):
        return np.array([c.rmse for c in self.cells])

    @property
    def bias(self):
        return np.array([[c.bias_x, c.bias_y] for c in self.cells])

    @property
    def outliers(self):
        return sum(c.outliers for c in self.cells)

    @property
    def degenerate(self):
        return sum(c.degenerate for c in self.cells)

    @property
    def mean_rmse(self):
        return float(np.nanmean(self.rmse))

    def to_dict(self):
        return {"method": self.method, "cells": [asdict(c) for c in self.cells]}

    @classmethod
    def from_dict(cls, data):
        return cls(data["method"], [CellResult(**c) for c in data["cells"]])


# per-run accumulator layout
_SEX, _SEY, _SE2, _N, _OUT, _DEG, _SSIG, _NSIG, _TIME = range(9)


def _run_cell(spec, disp_index, run):
    dx, dy = spec.displacements[disp_index]
    particle = replace(spec.particle, rng_seed=spec.cell_seed(disp_index, run))
    img1, img2, truth = generate_pair(spec.image_size, particle, FlowSpec("uniform", dx, dy),
                                      spec.noise, spec.grid)
    acc = np.zeros((len(spec.methods), 9))
    for k, cfg in enumerate(spec.methods):
        t0 = time.perf_counter()
        fld = process_pair(img1, img2, spec.grid, cfg, spec.context)
        elapsed = time.perf_counter() - t0
        live = fld.flags != FLAG_DEGENERATE
        ex = (fld.u - truth.u)[live]
        ey = (fld.v - truth.v)[live]
        e2 = ex * ex + ey * ey
        sig = fld.sigma_fit[live]
        sig = sig[sig > 0]
        acc[k] = (ex.sum(), ey.sum(), e2.sum(), live.sum(), np.sum(e2 > spec.threshold),
                  np.sum(~live), sig.sum(), sig.size, elapsed)
    return acc


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_rmse_sweep(spec, threads=1):
    """RMSE and bias per method and displacement.

    RMSE pools both components, ``sqrt(mean(ex^2 + ey^2))``, over every
    non-degenerate vector of every run; degenerate vectors are counted
    separately.  Outliers are vectors with squared error above
    ``spec.threshold``.
    """
    reports = [MethodReport(m.label) for m in spec.methods]
    for di, (dx, dy) in enumerate(spec.displacements):
        per_run = _map(lambda r: _run_cell(spec, di, r), range(spec.runs), threads)
        total = np.zeros((len(spec.methods), 9))
        for acc in per_run:
            total += acc
        for k, rep in enumerate(reports):
            sex, sey, se2, n, out, deg, ssig, nsig, secs = total[k]
            if n > 0:
                rmse, bx, by = np.sqrt(se2 / n), sex / n, sey / n
            else:
                rmse = bx = by = float("nan")
            rep.cells.append(CellResult(
                dx_true=dx, dy_true=dy, rmse=float(rmse), bias_x=float(bx), bias_y=float(by),
                outliers=int(out), degenerate=int(deg),
                sigma_fit=float(ssig / nsig) if nsig else 0.0,
                seconds_per_pair=float(secs / spec.runs) if spec.record_timing else 0.0,
                n_vectors=int(n),
            ))
    return reports


@dataclass(frozen=True)
class PeakLockComparison:
    method_a: str
    method_b: str
    bias_a: float
    bias_b: float
    ratio: float
    displacements: tuple


def _half_integer(d):
    return any(abs(abs(c) % 1.0 - 0.5) < 1e-9 for c in d)


def _mean_abs_bias(report, mask):
    b = report.bias[mask]
    return float(np.mean(np.hypot(b[:, 0], b[:, 1])))


def run_peaklock_probe(spec, method_a, method_b, threads=1):
    """Mean ``|bias|`` at half-integer displacements for two methods and
    their ratio ``a / b``."""
    a, b = _as_method(method_a), _as_method(method_b)
    mask = np.array([_half_integer(d) for d in spec.displacements])
    if not mask.any():
        raise ParameterError("peak-locking probe needs half-integer displacements")
    methods = [a] if a == b else [a, b]
    probe = ExperimentSpec(**{**spec.__dict__, "methods": methods})
    reports = run_rmse_sweep(probe, threads)
    bias_a = _mean_abs_bias(reports[0], mask)
    bias_b = bias_a if a == b else _mean_abs_bias(reports[1], mask)
    ratio = 1.0 if a == b else (bias_a / bias_b if bias_b > 0 else float("inf"))
    used = tuple(d for d, m in zip(spec.displacements, mask) if m)
    return PeakLockComparison(a.label, b.label, bias_a, bias_b, ratio, used)


@dataclass
class RobustnessReport:
    outliers: dict
    degenerate: dict
    reports: list

    def rows(self):
        return [(m, self.outliers[m], self.degenerate[m]) for m in self.outliers]


def run_robustness_trial(spec, threads=1):
    """Outlier counts against the known truth, summed over runs and
    displacements (threshold ``spec.threshold``, strict inequality)."""
    reports = run_rmse_sweep(spec, threads)
    return RobustnessReport(
        outliers={r.method: r.outliers for r in reports},
        degenerate={r.method: r.degenerate for r in reports},
        reports=reports,
    )


def emit_report(reports, csv_path=None, json_path=None, spec=None, kind="sweep"):
    """Write the CSV table and/or the JSON summary.

    The CSV has one row per method and displacement with the columns in
    :data:`CSV_COLUMNS`.  The JSON summary embeds the full experiment spec.
    """
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rep in reports:
                for c in rep.cells:
                    writer.writerow([rep.method, repr(c.dx_true), repr(c.dy_true), repr(c.rmse),
                                     repr(c.bias_x), repr(c.bias_y), c.outliers, c.degenerate,
                                     repr(c.sigma_fit), repr(c.seconds_per_pair)])
    if json_path is not None:
        summary = {
            "kind": kind,
            "experiment": spec.to_dict() if spec is not None else None,
            "reports": [r.to_dict() for r in reports],
        }
        with open(json_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_summary(path):
    """Read a JSON summary back as ``(spec, reports, kind)``."""
    with open(path) as fh:
        data = json.load(fh)
    spec = ExperimentSpec.from_dict(data["experiment"]) if data.get("experiment") else None
    return spec, [MethodReport.from_dict(r) for r in data["reports"]], data.get("kind", "sweep")
