"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (singular
system or degenerate weights).  Numerical failures print one machine-parsable
line on stderr, e.g. ``error=degenerate-weights max_loglik=-1.2e+06``.
All output files are written atomically and embed a provenance header.
"""

import argparse
import glob
import hashlib
import os
import sys

from . import bayes, harness, mesh
from .errors import DegenerateWeightsError, SingularSystemError

CONFIG_ERROR = 2
NUMERICAL_ERROR = 3


def _parser():
    p = argparse.ArgumentParser(prog="roomimp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None, help="override scenario seed")
        sp.add_argument("--out", required=True, help="output file path")
        sp.add_argument("--threads", type=int, default=1, help="worker pool size")
        sp.add_argument("--samples", type=int, default=None, help="override sample count N")
        if data:
            sp.add_argument("--data", default=None,
                            help="measurement JSON file (identify) or directory (sweep)")

    common(sub.add_parser("mesh-info", help="mesh summary and optional dump"))
    common(sub.add_parser("make-data", help="generate synthetic measurements"))
    common(sub.add_parser("identify", help="posterior identification run"), data=True)
    common(sub.add_parser("study-h", help="discretization error study"))
    common(sub.add_parser("study-n", help="sampling error study"))
    common(sub.add_parser("sweep", help="frequency sweep"), data=True)
    return p


def _load(args):
    with open(args.config, "rb") as fh:
        raw = fh.read()
    scenario = harness.Scenario.from_json(raw.decode("utf-8"))
    if args.seed is not None:
        scenario.seed = args.seed
    if args.samples is not None:
        scenario.n_samples = args.samples
    provenance = {
        "command": args.command,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": scenario.seed,
    }
    return scenario, provenance


def _check_out(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"output directory does not exist: {parent}")


def _run(args):
    scenario, provenance = _load(args)
    _check_out(args.out)

    if args.command == "mesh-info":
        m = scenario.identification_mesh(scenario.frequencies()[0])
        summary = [f"# tool=roomimp version={harness.TOOL_VERSION}",
                   f"# vertices={m.n_vertices} elements={m.n_elements}"
                   f" facets={len(m.boundary_facets)} h={harness.format_float(m.h)}"]
        for tag in m.layout.robin_tags:
            summary.append(f"# patch {tag} measure={harness.format_float(mesh.patch_measure(m, tag))}")
        harness.write_atomic(args.out, "\n".join(summary) + "\n" + mesh.dump_text(m))
        print("\n".join(summary))
        return 0

    if args.command == "make-data":
        data = harness.generate_data(scenario)
        data.provenance["tool"] = f"roomimp {harness.TOOL_VERSION}"
        data.provenance["config_sha256"] = provenance["config_sha256"]
        harness.write_atomic(args.out, data.to_json())
        return 0

    if args.command == "identify":
        if not args.data:
            raise FileNotFoundError("identify requires --data")
        with open(args.data, "r", encoding="utf-8") as fh:
            data = bayes.MeasurementSet.from_json(fh.read())
        report = harness.identify(scenario, data, threads=args.threads)
        harness.write_atomic(args.out, harness.report_csv_text(report, provenance))
        return 0

    if args.command == "study-h":
        result = harness.study_discretization(scenario, threads=args.threads)
    elif args.command == "study-n":
        result = harness.study_sampling(scenario, threads=args.threads)
    elif args.command == "sweep":
        data_sets = None
        if args.data:
            paths = sorted(glob.glob(os.path.join(args.data, "*.json")))
            if not paths:
                raise FileNotFoundError(f"no measurement files in {args.data}")
            data_sets = []
            for p in paths:
                with open(p, "r", encoding="utf-8") as fh:
                    data_sets.append(bayes.MeasurementSet.from_json(fh.read()))
        result = harness.study_sweep(scenario, threads=args.threads, data_sets=data_sets)
    else:  # pragma: no cover
        raise AssertionError(args.command)
    harness.write_atomic(args.out, result.to_csv(provenance))
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (SingularSystemError, DegenerateWeightsError) as err:
        kind = "singular-system" if isinstance(err, SingularSystemError) else "degenerate-weights"
        extra = ""
        if getattr(err, "max_loglik", None) is not None:
            extra = f" max_loglik={err.max_loglik:.17g}"
        print(f"error={kind}{extra}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (OSError, ValueError) as err:
        print(f"error=config detail={err}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
