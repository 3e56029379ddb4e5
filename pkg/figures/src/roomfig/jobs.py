"""Figure job descriptions plus the CSV-side computations.

Jobs consume only the CSV files written by the identification toolkit; the
column schemas are re-declared here so this package stays decoupled from it.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("loglog-h", "loglog-n", "density", "sweep")

# columns required in a study CSV, per figure kind
_REQUIRED = {
    "loglog-h": ("h", "run", "param", "error"),
    "loglog-n": ("N", "run", "param", "error"),
    "sweep": ("f_hz", "run", "status", "param", "value"),
}
_REPORT_COLUMNS = ("patch", "component", "stat", "value")


class JobError(ValueError):
    """Malformed job, unreadable input, or missing CSV columns."""


@dataclass
class FigureJob:
    kind: str
    out: str
    input: str = None            # study CSV (loglog-*, sweep)
    report: str = None           # identify report CSV (density)
    params: list = None          # param filter for loglog kinds
    param: str = None            # single series for sweep
    patch: str = None            # patch tag for density
    prior: dict = None           # log-space prior params for density
    ref_value: float = None
    guide_slopes: list = field(default_factory=list)
    title: str = None
    xlabel: str = None
    ylabel: str = None
    xlim: list = None
    ylim: list = None
    grid_n: int = 200

    def __post_init__(self):
        if self.kind not in KINDS:
            raise JobError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.out:
            raise JobError("job needs an 'out' image path")
        if self.kind == "density":
            if not self.report or not self.patch or not self.prior:
                raise JobError("density jobs need 'report', 'patch' and 'prior'")
            missing = [k for k in ("mu_re", "gamma_re", "mu_im", "gamma_im")
                       if k not in self.prior]
            if missing:
                raise JobError(f"density prior is missing {missing}")
        elif not self.input:
            raise JobError(f"{self.kind} jobs need an 'input' CSV path")
        if self.kind == "sweep" and not self.param:
            raise JobError("sweep jobs need a 'param' to plot")

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise JobError(f"job is not valid JSON: {err}") from err
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise JobError(f"unknown job keys: {sorted(unknown)}")
        return cls(**doc)


def load_job(path):
    with open(path, "r", encoding="utf-8") as fh:
        return FigureJob.from_json(fh.read())


def read_csv(path):
    """Rows of a toolkit CSV as dicts, '#' comment lines skipped."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        plain = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(plain)
        rows = list(reader)
        header = reader.fieldnames
    if not header or not rows:
        raise JobError(f"{path}: empty CSV (no data rows)")
    return header, rows


def require_columns(path, header, needed):
    missing = [c for c in needed if c not in header]
    if missing:
        raise JobError(f"{path}: missing columns {missing}")


def fit_loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def loglog_series(job):
    """Aggregate a study CSV into {param: (abscissas, mean errors, slope)}.

    Replicate errors are averaged per abscissa; abscissas whose mean error is
    zero (e.g. the likelihood maximizer picked the same sample on both
    meshes) carry no information on a log scale and are dropped before the
    fit.  A param needs at least two positive points.
    """
    key = "h" if job.kind == "loglog-h" else "N"
    header, rows = read_csv(job.input)
    require_columns(job.input, header, _REQUIRED[job.kind])
    rows = [r for r in rows if r.get("status", "ok") == "ok" and r["error"] != ""]
    # default to the moment/density parameters; the likelihood maximizer often
    # repeats the identical sample across meshes (zero error, no log data)
    params = job.params or sorted({r["param"] for r in rows
                                   if ".ml_" not in r["param"]})
    out = {}
    for p in params:
        mine = [r for r in rows if r["param"] == p]
        if not mine:
            raise JobError(f"{job.input}: no rows for param {p!r}")
        xs = sorted({float(r[key]) for r in mine})
        means = [float(np.mean([float(r["error"]) for r in mine if float(r[key]) == x]))
                 for x in xs]
        kept = [(x, m) for x, m in zip(xs, means) if m > 0]
        if len(kept) < 2:
            raise JobError(
                f"{job.input}: param {p!r} has fewer than two positive errors; cannot fit")
        xs, means = [x for x, _ in kept], [m for _, m in kept]
        out[p] = (xs, means, fit_loglog_slope(xs, means))
    return out


def slope_sidecar_text(series):
    lines = [f"{p} {s:.17g}" for p, (_, _, s) in sorted(series.items())]
    return "\n".join(lines) + "\n"


def sweep_series(job):
    """Per-run curves and their mean for one sweep parameter."""
    header, rows = read_csv(job.input)
    require_columns(job.input, header, _REQUIRED["sweep"])
    mine = [r for r in rows if r["param"] == job.param and r["status"] == "ok"]
    if not mine:
        raise JobError(f"{job.input}: no ok rows for param {job.param!r}")
    runs = sorted({int(r["run"]) for r in mine})
    freqs = sorted({float(r["f_hz"]) for r in mine})
    curves = {}
    for run in runs:
        pairs = {float(r["f_hz"]): float(r["value"]) for r in mine if int(r["run"]) == run}
        curves[run] = [pairs.get(f, math.nan) for f in freqs]
    mean = [float(np.nanmean([curves[run][i] for run in runs])) for i in range(len(freqs))]
    return freqs, curves, mean


def read_report_params(path, patch):
    """Fitted (mu_re, gamma_re, mu_im, gamma_im) of one patch from a report CSV."""
    header, rows = read_csv(path)
    require_columns(path, header, _REPORT_COLUMNS)
    got = {}
    for r in rows:
        if r["patch"] == patch and r["stat"] in ("mu", "gamma"):
            got[f"{r['stat']}_{r['component']}"] = float(r["value"])
    missing = [k for k in ("mu_re", "gamma_re", "mu_im", "gamma_im") if k not in got]
    if missing:
        raise JobError(f"{path}: patch {patch!r} is missing {missing}")
    return got


def density_grid(params, zr, zi):
    """Lognormal-normal density on the (Re z, Im z) grid.

    density(zr, zi) = exp(-(log zr - mu_re)^2 / (2 gamma_re^2)
                          - (zi - mu_im)^2 / (2 gamma_im^2))
                      / (2 pi gamma_re gamma_im zr)
    """
    mu_r, g_r = params["mu_re"], params["gamma_re"]
    mu_i, g_i = params["mu_im"], params["gamma_im"]
    if g_r <= 0 or g_i <= 0:
        raise JobError("density parameters need positive gamma values")
    ZR, ZI = np.meshgrid(np.asarray(zr, float), np.asarray(zi, float), indexing="ij")
    if np.any(ZR <= 0):
        raise JobError("Re z grid must be positive for the lognormal factor")
    return (np.exp(-((np.log(ZR) - mu_r) ** 2) / (2 * g_r**2)
                   - ((ZI - mu_i) ** 2) / (2 * g_i**2))
            / (2 * np.pi * g_r * g_i * ZR))


def density_axes(prior, posterior, n):
    """Grid covering both densities out to four standard deviations."""
    lo_r = min(prior["mu_re"] - 4 * prior["gamma_re"],
               posterior["mu_re"] - 4 * posterior["gamma_re"])
    hi_r = max(prior["mu_re"] + 4 * prior["gamma_re"],
               posterior["mu_re"] + 4 * posterior["gamma_re"])
    lo_i = min(prior["mu_im"] - 4 * prior["gamma_im"],
               posterior["mu_im"] - 4 * posterior["gamma_im"])
    hi_i = max(prior["mu_im"] + 4 * prior["gamma_im"],
               posterior["mu_im"] + 4 * posterior["gamma_im"])
    return np.exp(np.linspace(lo_r, hi_r, n)), np.linspace(lo_i, hi_i, n)
