"""Multiply-add accounting and the layer-wise speedup report.

Conventions (also stamped into the report header):

* a multiply-accumulate counts as 2 flops (1 mult + 1 add) on both paths,
* dense convolution additionally counts its bias adds,
* the lookup path counts the dictionary precompute plus one scale-and-add per
  gathered component; the accumulation adds of the gather are included,
* indexed channel reads ("lookups") are tallied separately and excluded from
  the flop ratio.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .errors import ModeError
from .layer import INFERENCE, LcnnConvLayer
from .model import DenseConvLayer, LcnnModel
from .tensor_ops import ConvGeom


@dataclass
class OpCount:
    mults: int = 0
    adds: int = 0
    lookups: int = 0
    bytes_params: int = 0

    @property
    def flops(self) -> int:
        return self.mults + self.adds

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(self.mults + other.mults, self.adds + other.adds,
                       self.lookups + other.lookups, self.bytes_params + other.bytes_params)


class OpCounter:
    """Per-invocation accumulator filled in by instrumented forward passes."""

    def __init__(self):
        self.precompute_mults = 0
        self.precompute_adds = 0
        self.scale_mults = 0
        self.scale_adds = 0
        self.conv_mults = 0
        self.conv_adds = 0
        self.bias_adds = 0
        self.lookups = 0

    def as_dense_opcount(self) -> OpCount:
        return OpCount(mults=self.conv_mults, adds=self.conv_adds + self.bias_adds)

    def as_lcnn_opcount(self) -> OpCount:
        return OpCount(
            mults=self.precompute_mults + self.scale_mults,
            adds=self.precompute_adds + self.scale_adds,
            lookups=self.lookups,
        )


def flops_dense(geom: ConvGeom) -> OpCount:
    """Cost of a dense convolution at this geometry (MACs as 1+1, plus bias adds)."""
    macs = geom.n * geom.m * geom.kh * geom.kw * geom.h_out * geom.w_out
    bias = geom.n * geom.h_out * geom.w_out
    params = geom.n * geom.m * geom.kh * geom.kw + geom.n
    return OpCount(mults=macs, adds=macs + bias, lookups=0, bytes_params=4 * params)


def flops_lcnn(geom: ConvGeom, k: int, mean_s: float) -> OpCount:
    """Cost of the two-stage lookup path: dictionary precompute + gather/scale.

    ``mean_s`` is the mean component count per (filter, tap) column; the total
    component count is rounded to the nearest integer so that a mean measured
    from concrete tables reproduces the instrumented counts exactly.
    """
    if k < 1:
        raise ModeError("dictionary size must be >= 1")
    if mean_s < 0:
        raise ModeError("mean_s must be nonnegative")
    components = int(round(mean_s * geom.n * geom.kh * geom.kw))
    pre = k * geom.m * geom.h * geom.w
    scale = components * geom.h_out * geom.w_out
    params = k * geom.m + geom.n + 2 * components
    return OpCount(mults=pre + scale, adds=pre + scale, lookups=scale,
                   bytes_params=4 * params)


@dataclass
class LayerRow:
    name: str
    share_pct: float
    dense_flops: int
    lcnn_flops: int
    speedup: float


@dataclass
class SpeedupReport:
    rows: list[LayerRow] = field(default_factory=list)
    total_dense: int = 0
    total_lcnn: int = 0

    @property
    def overall_speedup(self) -> float:
        return self.total_dense / self.total_lcnn

    HEADER_NOTE = ("flops = multiplies + adds; dense includes bias adds; lookup path "
                   "includes precompute and gather-accumulation adds; indexed reads "
                   "excluded from the ratio")


def speedup_report(model: LcnnModel, mean_s: float | list[float] | None = None) -> SpeedupReport:
    """Per-layer and overall dense-vs-lookup flop comparison.

    Lookup layers must be in inference mode so their mean component count is
    measurable from the tables; ``mean_s`` (scalar or per-lookup-layer list)
    overrides the measured values, for architecture templates without
    trained tables.
    """
    layers = model.parametric_layers()
    lcnn_positions = [i for i, l in enumerate(layers) if isinstance(l, LcnnConvLayer)]
    for l in layers:
        if isinstance(l, LcnnConvLayer) and l.mode != INFERENCE:
            raise ModeError("speedup report needs an inference-mode model (convert first)")
    if isinstance(mean_s, (int, float)):
        mean_s = [float(mean_s)] * len(lcnn_positions)
    names = model.layer_names()
    report = SpeedupReport()
    dense_counts = []
    lcnn_counts = []
    li = 0
    for l in layers:
        dense = flops_dense(l.geom)
        if isinstance(l, LcnnConvLayer):
            ms = l.tables.mean_s() if mean_s is None else mean_s[li]
            li += 1
            lcnn = flops_lcnn(l.geom, l.dict.k, ms)
        else:
            lcnn = dense
        dense_counts.append(dense)
        lcnn_counts.append(lcnn)
    total_dense = sum(c.flops for c in dense_counts)
    total_lcnn = sum(c.flops for c in lcnn_counts)
    for name, dc, lc in zip(names, dense_counts, lcnn_counts):
        report.rows.append(LayerRow(
            name=name,
            share_pct=100.0 * dc.flops / total_dense,
            dense_flops=dc.flops,
            lcnn_flops=lc.flops,
            speedup=dc.flops / lc.flops,
        ))
    report.total_dense = total_dense
    report.total_lcnn = total_lcnn
    return report


def render_table(report: SpeedupReport) -> str:
    """Aligned text table: one row per layer plus the overall row."""
    head = f"{'layer':<10} {'share %':>8} {'dense flops':>14} {'lcnn flops':>14} {'speedup':>9}"
    lines = [f"# {SpeedupReport.HEADER_NOTE}", head, "-" * len(head)]
    for r in report.rows:
        lines.append(f"{r.name:<10} {r.share_pct:>8.2f} {r.dense_flops:>14d} "
                     f"{r.lcnn_flops:>14d} {r.speedup:>8.2f}x")
    lines.append(f"{'overall':<10} {100.0:>8.2f} {report.total_dense:>14d} "
                 f"{report.total_lcnn:>14d} {report.overall_speedup:>8.2f}x")
    return "\n".join(lines)


def write_csv(report: SpeedupReport, path_or_file) -> None:
    """CSV with full-precision floats so a parse-back reproduces the report."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(["layer", "share_pct", "dense_flops", "lcnn_flops", "speedup"])
        for r in report.rows:
            writer.writerow([r.name, repr(r.share_pct), r.dense_flops, r.lcnn_flops,
                             repr(r.speedup)])
        writer.writerow(["overall", repr(100.0), report.total_dense, report.total_lcnn,
                         repr(report.overall_speedup)])
    finally:
        if own:
            fh.close()


def read_csv(path) -> SpeedupReport:
    report = SpeedupReport()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if row["layer"] == "overall":
                report.total_dense = int(row["dense_flops"])
                report.total_lcnn = int(row["lcnn_flops"])
            else:
                report.rows.append(LayerRow(
                    name=row["layer"],
                    share_pct=float(row["share_pct"]),
                    dense_flops=int(row["dense_flops"]),
                    lcnn_flops=int(row["lcnn_flops"]),
                    speedup=float(row["speedup"]),
                ))
    return report


def csv_string(report: SpeedupReport) -> str:
    buf = io.StringIO()
    write_csv(report, buf)
    return buf.getvalue()
