#!/usr/bin/env python3
"""Stand-in for an external EM solver speaking the file protocol.

Usage: external_solver_stub.py REQUEST

Reads the request (sweep line, design line, geometry export), evaluates the
synthetic model and writes ``response.csv`` next to the request.  Set
``STUB_PRESET=desk`` for 8-vertex outlines and ``STUB_FAIL=1`` to exit with
status 3 instead.
"""

import os
import sys
from pathlib import Path

from freeform_antenna.evaluators import FrequencySweep, SyntheticEvaluator, SyntheticModelParams
from freeform_antenna.geometry import DesignVector


def main(argv):
    if len(argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    req = Path(argv[1])
    lines = req.read_text().splitlines()
    _, f0, f1, n = lines[0].split(",")
    x = DesignVector.from_line(lines[1].split(",", 1)[1])
    if os.environ.get("STUB_FAIL"):
        print("stub solver: forced failure", file=sys.stderr)
        return 3
    params = SyntheticModelParams.desk() if os.environ.get("STUB_PRESET") == "desk" else SyntheticModelParams()
    r = SyntheticEvaluator(params)(x, FrequencySweep(float(f0), float(f1), int(n)))
    (req.parent / "response.csv").write_text(r.to_csv())
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
