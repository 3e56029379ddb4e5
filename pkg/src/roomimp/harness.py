"""Scenario handling, synthetic data, identification runs and studies.

All randomness is drawn from streams addressed by (base_seed, purpose,
indices...), see :mod:`roomimp.rng`:

    microphones   (seed, MICS, run)
    noise         (seed, NOISE, run, f_index)
    samples       (seed, PRIOR, replicate, i)           fixed-frequency runs
                  (seed, PRIOR, run, f_index, i)        sweep runs
    reference     (seed, PRIOR_REF, 0, i)               sampling-error study

so any parallel schedule reproduces the same records.  Study records are
sorted by (abscissa, replicate, parameter) before CSV emission and floats are
written with 17 significant digits, which makes output files byte-stable.
"""

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import bayes, fem, rng
from .errors import (
    DegenerateWeightsError,
    InvalidSpecError,
    PlacementError,
    SingularSystemError,
)
from .mesh import PatchLayout, _parse_patch, build_box_mesh

TOOL_VERSION = "0.1.0"


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """Full description of one experiment; see configs/ for file examples."""

    extents: tuple
    layout: PatchLayout
    c: float
    rho: float
    source: tuple
    mic_grid: float
    mic_kappa: float
    mic_count: int
    prior: bayes.PriorSpec
    noise: bayes.NoiseSpec
    z_ref: np.ndarray = None          # reference impedance for synthetic data
    frequency: float = None
    sweep: tuple = None               # (lo, hi, step) in Hz
    h_explicit: float = None
    h_rule: tuple = None              # (points per wavelength, cap in meters)
    n_samples: int = 1024
    runs: int = 1
    seed: int = 0
    same_mesh_data: bool = False      # disable the anti-inverse-crime refinement
    study_h_levels: int = 3
    study_h_ref_level: int = 4
    study_n_values: tuple = tuple(2 ** k for k in range(6, 14))
    study_n_ref: int = 2 ** 16

    def __post_init__(self):
        if self.z_ref is not None:
            self.z_ref = np.asarray(self.z_ref, dtype=np.complex128)
        if self.h_explicit is None and self.h_rule is None:
            raise InvalidSpecError("scenario needs 'h' or 'h_rule'")
        if self.frequency is None and self.sweep is None:
            raise InvalidSpecError("scenario needs 'frequency' or 'sweep'")
        if len(self.prior) != len(self.layout.robin_tags):
            raise InvalidSpecError("prior must cover every Robin patch")
        if self.mic_count < 1 or self.n_samples < 1 or self.runs < 1:
            raise InvalidSpecError("m, N and runs must be >= 1")
        wall = min(min(s, L - s) for s, L in zip(self.source, self.extents))
        if not wall > self.mic_kappa:
            raise InvalidSpecError(
                f"source {self.source} is within kappa={self.mic_kappa} of a wall")

    @property
    def dim(self):
        return len(self.extents)

    def physics(self, f=None):
        f = self.frequency if f is None else f
        if f is None:
            raise InvalidSpecError("this operation needs a fixed frequency, not a sweep")
        return fem.PhysicsParams(c=self.c, rho=self.rho, f=f)

    def h_for(self, f=None):
        if self.h_explicit is not None:
            return self.h_explicit
        per_wavelength, cap = self.h_rule
        phys = self.physics(f)
        return min(phys.wavelength / per_wavelength, cap)

    def frequencies(self):
        if self.sweep is None:
            return [self.frequency]
        lo, hi, step = self.sweep
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + i * step for i in range(count)]

    def identification_mesh(self, f=None):
        return build_box_mesh(self.extents, self.h_for(f), self.layout)

    def data_mesh(self, f=None):
        h = self.h_for(f)
        if not self.same_mesh_data:
            h = h / 2.0  # one dyadic level finer to avoid the inverse crime
        return build_box_mesh(self.extents, h, self.layout)

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise InvalidSpecError(f"scenario is not valid JSON: {err}") from err
        try:
            extents = tuple(float(v) for v in doc["room"])
            patches = tuple(
                _parse_patch(p["tag"], p["axis"], p["side"]) for p in doc["patches"]
            )
            layout = PatchLayout(extents=extents, patches=patches)
            phys = doc.get("physics", {})
            mics = doc["mics"]
            prior = bayes.PriorSpec(tuple(
                bayes.PatchPrior(**doc["prior"][tag]) for tag in layout.robin_tags
            ))
            noise = bayes.NoiseSpec(**doc["noise"])
            z_ref = None
            if "z_ref" in doc:
                z_ref = [complex(*doc["z_ref"][tag]) for tag in layout.robin_tags]
            sweep = None
            if "sweep" in doc:
                sweep = (float(doc["sweep"]["lo"]), float(doc["sweep"]["hi"]),
                         float(doc["sweep"]["step"]))
            h_rule = None
            if "h_rule" in doc:
                h_rule = (float(doc["h_rule"]["per_wavelength"]),
                          float(doc["h_rule"].get("cap", math.inf)))
            study_h = doc.get("study_h", {})
            study_n = doc.get("study_n", {})
            return cls(
                extents=extents,
                layout=layout,
                c=float(phys.get("c", 343.0)),
                rho=float(phys.get("rho", 1.2)),
                source=tuple(float(v) for v in doc["source"]),
                mic_grid=float(mics.get("grid", 0.1)),
                mic_kappa=float(mics["kappa"]),
                mic_count=int(mics["m"]),
                prior=prior,
                noise=noise,
                z_ref=z_ref,
                frequency=float(doc["frequency"]) if "frequency" in doc else None,
                sweep=sweep,
                h_explicit=float(doc["h"]) if "h" in doc else None,
                h_rule=h_rule,
                n_samples=int(doc["N"]),
                runs=int(doc.get("runs", 1)),
                seed=int(doc.get("seed", 0)),
                same_mesh_data=bool(doc.get("same_mesh_data", False)),
                study_h_levels=int(study_h.get("levels", 3)),
                study_h_ref_level=int(study_h.get("ref_level", 4)),
                study_n_values=tuple(int(v) for v in study_n.get(
                    "n_values", [2 ** k for k in range(6, 14)])),
                study_n_ref=int(study_n.get("n_ref", 2 ** 16)),
            )
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, InvalidSpecError):
                raise
            raise InvalidSpecError(f"malformed scenario: {err!r}") from err


def load_scenario(path):
    with open(path, "r", encoding="utf-8") as fh:
        return Scenario.from_json(fh.read())


# ---------------------------------------------------------------------------
# microphone placement and data generation


def admissible_grid_points(scenario):
    """Regular-grid points at distance > kappa from every wall and the source."""
    axes = [np.arange(int(math.floor(L / scenario.mic_grid + 1e-9)) + 1) * scenario.mic_grid
            for L in scenario.extents]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    ext = np.asarray(scenario.extents)
    wall = np.minimum(pts, ext[None, :] - pts).min(axis=1)
    src = np.linalg.norm(pts - np.asarray(scenario.source)[None, :], axis=1)
    keep = (wall > scenario.mic_kappa) & (src > scenario.mic_kappa)
    return pts[keep]


def place_microphones(scenario, stream):
    """Draw m distinct admissible grid points, uniformly without replacement."""
    pts = admissible_grid_points(scenario)
    if len(pts) < scenario.mic_count:
        raise PlacementError(
            f"only {len(pts)} admissible grid points for {scenario.mic_count} microphones"
        )
    idx = stream.choice(len(pts), size=scenario.mic_count, replace=False)
    return pts[idx]


def reference_field(scenario, f=None):
    """Solve the forward problem at Z_ref on the data-generation mesh."""
    if scenario.z_ref is None:
        raise InvalidSpecError("scenario has no z_ref; cannot generate synthetic data")
    f = scenario.frequency if f is None else f
    mesh = scenario.data_mesh(f)
    ops = fem.assemble_operators(mesh)
    phys = scenario.physics(f)
    load = fem.point_source_load(mesh, scenario.source)
    fld = fem.solve_forward(ops, scenario.z_ref, phys, load)
    return mesh, fld


def _measurement(scenario, f, run, f_index, mesh, fld, mics):
    noiseless = fem.observe(fld, mesh, mics)
    eta = bayes.sample_noise(scenario.noise, len(mics),
                             rng.stream(scenario.seed, rng.NOISE, run, f_index))
    y = noiseless + eta
    prov = {
        "kind": "synthetic",
        "seed": int(scenario.seed),
        "run": int(run),
        "data_h": mesh.h,
        "z_ref": {tag: [scenario.z_ref[i].real, scenario.z_ref[i].imag]
                  for i, tag in enumerate(scenario.layout.robin_tags)},
        "noiseless": [[v.real, v.imag] for v in noiseless],
    }
    return bayes.MeasurementSet(
        frequency_hz=f,
        source=tuple(scenario.source),
        microphones=mics,
        y=y,
        noise=scenario.noise,
        provenance=prov,
    )


def generate_data(scenario, run=0, f=None, f_index=0):
    """Synthetic measurements: forward solve at Z_ref plus complex noise."""
    f = scenario.frequency if f is None else f
    mesh, fld = reference_field(scenario, f)
    mics = place_microphones(scenario, rng.stream(scenario.seed, rng.MICS, run))
    return _measurement(scenario, f, run, f_index, mesh, fld, mics)


# ---------------------------------------------------------------------------
# identification


def _weighted_samples(scenario, data, forward_map, sample_path, n, threads):
    z = np.empty((n, len(scenario.prior)), dtype=np.complex128)
    for i in range(n):
        z[i] = bayes.sample_prior(scenario.prior,
                                  rng.stream(scenario.seed, *sample_path, i)).array()
    G = forward_map.observe_batch(z, threads=threads)
    loglik = -bayes.potentials(data, G)
    return bayes.WeightedSampleSet(z=z, loglik=loglik,
                                   seed_path=(scenario.seed,) + tuple(sample_path))


def _forward_map(scenario, data, ops):
    return fem.SampledForwardMap(
        ops,
        scenario.physics(data.frequency_hz),
        scenario.source,
        data.microphones,
        z_base=scenario.prior.mean_impedances(),
    )


def identify(scenario, data, replicate=0, threads=1, n_override=None):
    """Run the full identification for one measurement set (posterior report)."""
    n = int(n_override) if n_override else scenario.n_samples
    mesh = scenario.identification_mesh(data.frequency_hz)
    ops = fem.assemble_operators(mesh)
    fm = _forward_map(scenario, data, ops)
    ws = _weighted_samples(scenario, data, fm, (rng.PRIOR, replicate), n, threads)
    meta = {
        "f_hz": data.frequency_hz,
        "h": mesh.h,
        "N": n,
        "seed": int(scenario.seed),
        "replicate": int(replicate),
        "m": data.m,
    }
    return bayes.build_report(ws, scenario.layout.robin_tags, meta)


# ---------------------------------------------------------------------------
# studies

STUDY_COLUMNS = ("study", "f_hz", "h", "N", "run", "status", "param",
                 "value", "error", "max_loglik", "seed")

_PATCH_PARAMS = ("m1_re", "m2_re", "m1_im", "m2_im",
                 "mu_re", "gamma_re", "mu_im", "gamma_im", "ml_re", "ml_im")


@dataclass
class StudyResult:
    """Tabular study records with a fixed column schema."""

    kind: str
    records: list = field(default_factory=list)

    def filtered(self, **match):
        return [r for r in self.records if all(r.get(k) == v for k, v in match.items())]

    def sorted_records(self):
        return sorted(self.records,
                      key=lambda r: (r["f_hz"], r["h"], r["N"], r["run"], r["param"]))

    def to_csv(self, provenance=None):
        lines = _provenance_lines(provenance)
        lines.append(",".join(STUDY_COLUMNS))
        for r in self.sorted_records():
            lines.append(",".join(_format_cell(r.get(c)) for c in STUDY_COLUMNS))
        return "\n".join(lines) + "\n"


def _patch_values(report):
    """(tag, param, value) triples in the fixed parameter order."""
    for p in report.patches:
        for name in _PATCH_PARAMS:
            yield p.tag, name, getattr(p, name)


def _report_rows(kind, f, h, n, run, seed, report, ref_report=None, z_ref=None, tags=None):
    rows = []
    ref = {}
    if ref_report is not None:
        ref = {(t, name): v for t, name, v in _patch_values(ref_report)}
    zref_map = {}
    if z_ref is not None and tags is not None:
        for i, t in enumerate(tags):
            zref_map[(t, "m1_re")] = z_ref[i].real
            zref_map[(t, "m1_im")] = z_ref[i].imag
            zref_map[(t, "ml_re")] = z_ref[i].real
            zref_map[(t, "ml_im")] = z_ref[i].imag
    for tag, name, value in _patch_values(report):
        err = None
        if (tag, name) in ref:
            err = abs(value - ref[(tag, name)])
        elif (tag, name) in zref_map:
            err = abs(value - zref_map[(tag, name)])
        rows.append({
            "study": kind, "f_hz": f, "h": h, "N": n, "run": run, "status": "ok",
            "param": f"{tag}.{name}", "value": value, "error": err,
            "max_loglik": report.max_loglik, "seed": seed,
        })
    return rows


def study_discretization(scenario, threads=1):
    """Posterior-moment error versus mesh size, fixed data and samples.

    Levels are h/2^j for j = 0..levels-1, compared per replicate against the
    reference mesh h/2^ref_level; the same sample set is reused on every mesh
    so the Monte-Carlo fluctuation largely cancels in the differences.  The
    data itself is generated once, on a mesh one level finer than the
    reference, and stays fixed for every level and replicate.
    """
    f = scenario.frequency
    h0 = scenario.h_for(f)
    levels = [h0 / 2 ** j for j in range(scenario.study_h_levels)]
    h_ref = h0 / 2 ** scenario.study_h_ref_level

    mics = place_microphones(scenario, rng.stream(scenario.seed, rng.MICS, 0))
    dmesh = build_box_mesh(scenario.extents, h_ref / 2.0, scenario.layout)
    dops = fem.assemble_operators(dmesh)
    load = fem.point_source_load(dmesh, scenario.source)
    fld = fem.solve_forward(dops, scenario.z_ref, scenario.physics(f), load)
    data = _measurement(scenario, f, 0, 0, dmesh, fld, mics)

    n, reps = scenario.n_samples, scenario.runs
    z_all = np.empty((reps * n, len(scenario.prior)), dtype=np.complex128)
    for r in range(reps):
        for i in range(n):
            z_all[r * n + i] = bayes.sample_prior(
                scenario.prior, rng.stream(scenario.seed, rng.PRIOR, r, i)).array()

    def reports_on(h_target):
        mesh = build_box_mesh(scenario.extents, h_target, scenario.layout)
        ops = fem.assemble_operators(mesh)
        fm = _forward_map(scenario, data, ops)
        G = fm.observe_batch(z_all, threads=threads)
        loglik = -bayes.potentials(data, G)
        reports = []
        for r in range(reps):
            ws = bayes.WeightedSampleSet(z=z_all[r * n:(r + 1) * n],
                                         loglik=loglik[r * n:(r + 1) * n])
            reports.append(bayes.build_report(ws, scenario.layout.robin_tags, {}))
        return mesh.h, reports

    _, ref_reports = reports_on(h_ref)
    result = StudyResult(kind="h")
    for h_target in levels:
        h_real, reports = reports_on(h_target)
        for r in range(reps):
            result.records.extend(_report_rows(
                "h", f, h_real, n, r, scenario.seed, reports[r], ref_report=ref_reports[r]))
    return result


def study_sampling(scenario, threads=1):
    """Posterior-moment error versus sample count N on a fixed mesh."""
    f = scenario.frequency
    data = generate_data(scenario)
    mesh = scenario.identification_mesh(f)
    ops = fem.assemble_operators(mesh)
    fm = _forward_map(scenario, data, ops)

    ws_ref = _weighted_samples(scenario, data, fm, (rng.PRIOR_REF, 0),
                               scenario.study_n_ref, threads)
    ref_report = bayes.build_report(ws_ref, scenario.layout.robin_tags, {})

    n_values = sorted(scenario.study_n_values)
    n_max = n_values[-1]
    result = StudyResult(kind="n")
    for r in range(scenario.runs):
        ws_full = _weighted_samples(scenario, data, fm, (rng.PRIOR, r), n_max, threads)
        for n in n_values:
            ws = bayes.WeightedSampleSet(z=ws_full.z[:n], loglik=ws_full.loglik[:n])
            report = bayes.build_report(ws, scenario.layout.robin_tags, {})
            result.records.extend(_report_rows(
                "n", f, mesh.h, n, r, scenario.seed, report, ref_report=ref_report))
    return result


def study_sweep(scenario, threads=1, data_sets=None):
    """Identification across a frequency band, microphones redrawn per run.

    data_sets, when given, replaces synthetic data generation: a list of
    MeasurementSet objects (e.g. loaded from external files); each one becomes
    one (frequency, run) record through the identical identification path.
    """
    result = StudyResult(kind="sweep")
    tags = scenario.layout.robin_tags

    def run_one(f, fi, run, data):
        mesh = scenario.identification_mesh(f)
        ops = fem.assemble_operators(mesh)
        fm = _forward_map(scenario, data, ops)
        ws = _weighted_samples(scenario, data, fm, (rng.PRIOR, run, fi),
                               scenario.n_samples, threads)
        report = bayes.build_report(ws, tags, {})
        return mesh.h, report

    def failed_row(f, h, run, err):
        return {
            "study": "sweep", "f_hz": f, "h": h, "N": scenario.n_samples, "run": run,
            "status": "failed", "param": "", "value": None, "error": None,
            "max_loglik": getattr(err, "max_loglik", None), "seed": scenario.seed,
        }

    if data_sets is not None:
        grouped = {}
        for ds in data_sets:
            grouped.setdefault(ds.frequency_hz, []).append(ds)
        for fi, f in enumerate(sorted(grouped)):
            for run, data in enumerate(grouped[f]):
                try:
                    h_real, report = run_one(f, fi, run, data)
                    result.records.extend(_report_rows(
                        "sweep", f, h_real, scenario.n_samples, run, scenario.seed,
                        report, z_ref=scenario.z_ref, tags=tags))
                except (SingularSystemError, DegenerateWeightsError) as err:
                    result.records.append(failed_row(f, scenario.h_for(f), run, err))
        return result

    mic_sets = [place_microphones(scenario, rng.stream(scenario.seed, rng.MICS, r))
                for r in range(scenario.runs)]
    for fi, f in enumerate(scenario.frequencies()):
        try:
            dmesh, fld = reference_field(scenario, f)
        except SingularSystemError as err:
            for run in range(scenario.runs):
                result.records.append(failed_row(f, scenario.h_for(f), run, err))
            continue
        for run in range(scenario.runs):
            data = _measurement(scenario, f, run, fi, dmesh, fld, mic_sets[run])
            try:
                h_real, report = run_one(f, fi, run, data)
                result.records.extend(_report_rows(
                    "sweep", f, h_real, scenario.n_samples, run, scenario.seed,
                    report, z_ref=scenario.z_ref, tags=tags))
            except (SingularSystemError, DegenerateWeightsError) as err:
                result.records.append(failed_row(f, scenario.h_for(f), run, err))
    return result


# ---------------------------------------------------------------------------
# persistence


def format_float(v):
    return "%.17g" % float(v)


def _format_cell(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_float(v)


def _provenance_lines(provenance):
    lines = [f"# tool=roomimp version={TOOL_VERSION}"]
    for key in sorted(provenance or {}):
        lines.append(f"# {key}={provenance[key]}")
    return lines


def report_csv_text(report, provenance=None):
    """Render a posterior report as CSV with a provenance comment header."""
    prov = dict(provenance or {})
    for key in sorted(report.metadata):
        prov.setdefault(key, _format_cell(report.metadata[key]))
    lines = _provenance_lines(prov)
    lines.append("patch,component,stat,value")
    for p in report.patches:
        for comp in ("re", "im"):
            lines.append(f"{p.tag},{comp},m1,{format_float(getattr(p, 'm1_' + comp))}")
            lines.append(f"{p.tag},{comp},m2,{format_float(getattr(p, 'm2_' + comp))}")
            lines.append(f"{p.tag},{comp},mu,{format_float(getattr(p, 'mu_' + comp))}")
            lines.append(f"{p.tag},{comp},gamma,{format_float(getattr(p, 'gamma_' + comp))}")
            lines.append(f"{p.tag},{comp},ml,{format_float(getattr(p, 'ml_' + comp))}")
    lines.append(f"*,*,lambda_hat,{format_float(report.normalization)}")
    lines.append(f"*,*,max_loglik,{format_float(report.max_loglik)}")
    lines.append(f"*,*,ess,{format_float(report.effective_sample_size)}")
    return "\n".join(lines) + "\n"


def write_atomic(path, text):
    """Write text to path via a temp file and atomic rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".roomimp-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
