"""roomfig command line: render figures from study CSVs and report files."""

import argparse
import sys

from .jobs import JobError, load_job
from .render import render


def main(argv=None):
    parser = argparse.ArgumentParser(prog="roomfig")
    sub = parser.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("render", help="render one figure job")
    rp.add_argument("--job", required=True, help="figure job JSON file")
    args = parser.parse_args(argv)

    try:
        job = load_job(args.job)
        outputs = render(job)
    except (JobError, OSError) as err:
        print(f"error=job detail={err}", file=sys.stderr)
        return 2
    print(" ".join(f"{k}={v}" for k, v in sorted(outputs.items())))
    return 0


if __name__ == "__main__":
    sys.exit(main())
