#!/usr/bin/env python3
"""Run the full desk-scale reproduction with the calibrated defaults.

Equivalent to `privstate repro --seed 20260810 --outdir runs/repro`.
Takes roughly ten minutes; results land in runs/repro/report.txt and the
two key transcripts.
"""

import sys

from privstate.cli import main

if __name__ == "__main__":
    sys.exit(
        main(
            ["repro", "--seed", "20260810", "--outdir", "runs/repro"]
            + sys.argv[1:]
        )
    )
