"""Generate data/blood.csv, a synthetic stand-in for the UCI Blood Transfusion
Service Center file (transfusion.data).

The real file could not be bundled. This writes 748 rows with the same header,
column order, value ranges and class balance (~23% donors), with Monetary fixed
at 250 c.c. per donation as in the original. Replace data/blood.csv with the
real transfusion.data to run on the original data; the loader accepts it as is.

Deterministic: Python's random.Random with a fixed integer seed.
"""
import math
import random

SEED = 20070301
ROWS = 748


def main(path="blood.csv"):
    rng = random.Random(SEED)
    lines = [
        'Recency (months),Frequency (times),Monetary (c.c. blood),Time (months),'
        '"whether he/she donated blood in March 2007"'
    ]
    for _ in range(ROWS):
        recency = min(74, max(0, int(round(math.exp(rng.gauss(2.0, 0.75))))))
        frequency = min(50, 1 + int(rng.expovariate(1 / 4.5)))
        time = min(98, max(2, recency + int(frequency * rng.uniform(2.0, 5.5)) + rng.randint(0, 8)))
        z = -1.8 - 0.22 * (recency - 9.5) + 0.30 * (frequency - 5.5) - 0.045 * (time - 34)
        donated = 1 if rng.random() < 1 / (1 + math.exp(-z)) else 0
        lines.append(f"{recency},{frequency},{250 * frequency},{time},{donated}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    import os
    import sys

    here = os.path.dirname(os.path.abspath(__file__))
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "blood.csv"))
