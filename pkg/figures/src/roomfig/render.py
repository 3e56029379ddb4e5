"""Matplotlib rendering for the four figure kinds.

Everything is drawn with a pinned style (fixed canvas, no timestamps in the
metadata) so repeated renders of the same job produce the same pixels; the
RGBA hash is returned for regression checks.  Log-log kinds additionally
write a ``<out>.slope.txt`` sidecar with one fitted slope per series.
"""

import hashlib

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from . import jobs as jobmod  # noqa: E402

_STYLE = {
    "figure.figsize": (6.4, 4.8),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.4,
}


def _finish(fig, ax, job, outputs):
    if job.title:
        ax.set_title(job.title)
    if job.xlim:
        ax.set_xlim(job.xlim)
    if job.ylim:
        ax.set_ylim(job.ylim)
    fig.canvas.draw()
    rgba = hashlib.sha256(fig.canvas.buffer_rgba()).hexdigest()
    fig.savefig(job.out, metadata=_png_metadata(job.out))
    plt.close(fig)
    outputs["image"] = job.out
    outputs["rgba_sha256"] = rgba
    return outputs


def _png_metadata(path):
    if path.endswith(".svg"):
        return {"Date": None}  # svg embeds a timestamp unless suppressed
    return {"Software": "roomfig"}


def _render_loglog(job):
    series = jobmod.loglog_series(job)
    sidecar = job.out + ".slope.txt"
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write(jobmod.slope_sidecar_text(series))
    xkey = "h" if job.kind == "loglog-h" else "N"
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for name in sorted(series):
            xs, means, slope = series[name]
            ax.loglog(xs, means, "o-", label=f"{name} (slope {slope:.2f})")
        for guide in job.guide_slopes:
            xs = sorted(series[next(iter(sorted(series)))][0])
            y0 = min(min(m) for _, m, _ in series.values())
            ref = [y0 * (x / xs[0]) ** guide for x in xs]
            ax.loglog(xs, ref, "k--", linewidth=0.8, label=f"slope {guide:g}")
        ax.set_xlabel(job.xlabel or xkey)
        ax.set_ylabel(job.ylabel or "error")
        ax.legend(fontsize=7)
        out = _finish(fig, ax, job, {"sidecar": sidecar})
    return out


def _render_density(job):
    posterior = jobmod.read_report_params(job.report, job.patch)
    prior = job.prior
    zr, zi = jobmod.density_axes(prior, posterior, job.grid_n)
    dens_prior = jobmod.density_grid(prior, zr, zi)
    dens_post = jobmod.density_grid(posterior, zr, zi)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.contour(zr, zi, dens_prior.T, levels=6, colors="tab:blue", linewidths=0.9)
        ax.contour(zr, zi, dens_post.T, levels=6, colors="tab:red", linewidths=0.9)
        ax.plot([], [], color="tab:blue", label="prior")
        ax.plot([], [], color="tab:red", label="fitted posterior")
        ax.set_xlabel(job.xlabel or "Re z")
        ax.set_ylabel(job.ylabel or "Im z")
        ax.legend(fontsize=7)
        out = _finish(fig, ax, job, {})
    return out


def _render_sweep(job):
    freqs, curves, mean = jobmod.sweep_series(job)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for run in sorted(curves):
            ax.plot(freqs, curves[run], color="0.7", linewidth=0.7)
        ax.plot(freqs, mean, color="tab:red", linewidth=1.6, label="mean over runs")
        if job.ref_value is not None:
            ax.axhline(job.ref_value, color="k", linestyle="--", linewidth=0.9,
                       label="reference")
        ax.set_xlabel(job.xlabel or "frequency (Hz)")
        ax.set_ylabel(job.ylabel or job.param)
        ax.legend(fontsize=7)
        out = _finish(fig, ax, job, {})
    return out


def render(job):
    """Render one figure job; returns output paths and the image RGBA hash."""
    if job.kind in ("loglog-h", "loglog-n"):
        return _render_loglog(job)
    if job.kind == "density":
        return _render_density(job)
    return _render_sweep(job)
