"""Per-iteration metrics records and their CSV serialization.

The CSV schema is fixed -- ``t,loss,grad_l1,grad_l2,est_err_sq,bits_up,
bits_down,envelope_ok`` -- and floats are written with 17 significant digits
so files round-trip exactly and byte-identical reruns are a meaningful
determinism check.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

CSV_HEADER = ["t", "loss", "grad_l1", "grad_l2", "est_err_sq", "bits_up", "bits_down", "envelope_ok"]


@dataclass
class MetricsRow:
    t: int
    loss: float
    grad_l1: float        # ||grad f(x_t)||_1, the sign-method convergence criterion
    grad_l2: float
    est_err_sq: float     # ||v_t - grad f(x_t)||_2^2 (mean over nodes in distributed mode)
    bits_up: int = 0      # cumulative uplink payload bits
    bits_down: int = 0    # cumulative downlink payload bits
    envelope_ok: bool = True

    def as_csv_fields(self):
        return [
            str(self.t),
            _fmt(self.loss),
            _fmt(self.grad_l1),
            _fmt(self.grad_l2),
            _fmt(self.est_err_sq),
            str(self.bits_up),
            str(self.bits_down),
            str(int(self.envelope_ok)),
        ]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_metrics_csv(path, rows) -> None:
    """Write rows atomically: a partial file never appears at ``path``."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in rows:
                writer.writerow(row.as_csv_fields())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_metrics_csv(path):
    """Read a metrics CSV back into MetricsRow objects (round-trip exact)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        for rec in reader:
            out.append(MetricsRow(
                t=int(rec[0]), loss=float(rec[1]), grad_l1=float(rec[2]), grad_l2=float(rec[3]),
                est_err_sq=float(rec[4]), bits_up=int(rec[5]), bits_down=int(rec[6]),
                envelope_ok=bool(int(rec[7])),
            ))
    return out


@dataclass
class MeanRow:
    """Row-wise average across seeds; envelope_ok becomes the fraction of clean runs."""
    t: int
    loss: float
    grad_l1: float
    grad_l2: float
    est_err_sq: float
    bits_up: float
    bits_down: float
    envelope_ok: float

    def as_csv_fields(self):
        return [str(self.t)] + [
            _fmt(v) for v in (self.loss, self.grad_l1, self.grad_l2, self.est_err_sq,
                              self.bits_up, self.bits_down, self.envelope_ok)
        ]


def mean_rows(per_seed_rows) -> list:
    """Average the numeric columns row-wise over seeds (numpy pairwise summation)."""
    lengths = {len(rows) for rows in per_seed_rows}
    if len(lengths) != 1:
        raise ValueError(f"seed runs have mismatched row counts: {sorted(lengths)}")
    ts = [row.t for row in per_seed_rows[0]]
    for rows in per_seed_rows[1:]:
        if [row.t for row in rows] != ts:
            raise ValueError("seed runs have mismatched iteration grids")
    stacked = np.array([
        [[r.loss, r.grad_l1, r.grad_l2, r.est_err_sq, r.bits_up, r.bits_down,
          float(r.envelope_ok)] for r in rows]
        for rows in per_seed_rows
    ])
    means = stacked.mean(axis=0)
    return [MeanRow(t, *vals) for t, vals in zip(ts, means)]


def run_average(rows, metric: str) -> float:
    """Average a metric column over the recorded iterations of one run."""
    return float(np.mean([getattr(row, metric) for row in rows]))
