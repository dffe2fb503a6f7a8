"""Shuffled-label run of the synthetic demo; accuracy should sit near chance."""
import sys

from synthetic_demo import run

if __name__ == "__main__":
    raise SystemExit(run(["--shuffle", *sys.argv[1:]]))
