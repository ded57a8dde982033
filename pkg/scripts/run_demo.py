"""Run the end-to-end demo and print its metrics table."""
import sys
import time
from pathlib import Path

from regionedit.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
    t0 = time.perf_counter()
    code = main(["demo", "--out", out, *sys.argv[2:]])
    print(Path(out, "demo_metrics.tsv").read_text())
    print(f"demo finished in {time.perf_counter() - t0:.2f} s")
    sys.exit(code)
