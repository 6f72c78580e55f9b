"""Synthetic files shaped like an accelerometer log and an indicator panel."""

import csv

import numpy as np


def write_wisdm_like(path, subjects=7, seed=0):
    """Long CSV: three accelerometer axes sampled at irregular times in seconds.

    The last subject has one missing reading.  Returns the path and the
    raw ``(channel, subject) -> (times, values)`` map.
    """
    rng = np.random.default_rng(seed)
    truth = {}
    rows = []
    for i in range(subjects):
        sid = f"user{i + 1600}"
        m = int(rng.integers(15, 30))
        times = np.sort(rng.choice(np.arange(0, 3000), m, replace=False)) * 0.05
        for axis in ("accel_x", "accel_y", "accel_z"):
            vals = np.round(rng.normal(0.0, 3.0, m), 6)
            truth[(axis, sid)] = (times, vals)
            for t, v in zip(times, vals):
                rows.append([sid, axis, repr(float(t)), repr(float(v))])
    rows[-1][3] = "NaN"
    rng.shuffle(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "channel", "time", "value"])
        w.writerows(rows)
    return path, truth


def write_wdi_like(path, countries=9, channels=4, seed=0, years=range(1990, 2020)):
    """Wide CSV: one row per (country, indicator), one column per year, ``..`` for gaps."""
    rng = np.random.default_rng(seed)
    years = list(years)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "channel"] + [str(y) for y in years])
        for c in range(countries):
            for k in range(channels):
                vals = np.cumsum(rng.normal(0.0, 1.0, len(years))) + 10 * k
                cells = [f"{v:.4f}" for v in vals]
                if c == countries - 1 and k == 0:
                    cells[5] = ".."
                w.writerow([f"C{c:02d}", f"IND.{k}"] + cells)
    return path
