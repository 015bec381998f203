"""Registration reports: per-pair rows, aggregates, CSV round-tripping."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import FormatError

CSV_HEADER = "pair_id,level,noise_kind,noise_level,pre_cd,post_cd,smoothness,ms_per_pair"


@dataclass(frozen=True)
class ReportRow:
    pair_id: int
    level: float
    noise_kind: str
    noise_level: float
    pre_cd: float
    post_cd: float
    smoothness: float
    ms_per_pair: float


@dataclass(frozen=True)
class RegistrationReport:
    rows: tuple

    def aggregates(self) -> list[dict]:
        return aggregate_rows(self.rows)

    def mean_pre(self) -> float:
        return float(np.mean([r.pre_cd for r in self.rows]))

    def mean_post(self) -> float:
        return float(np.mean([r.post_cd for r in self.rows]))

    def total_ms(self) -> float:
        return float(np.sum([r.ms_per_pair for r in self.rows]))


def aggregate_rows(rows: Iterable[ReportRow]) -> list[dict]:
    """Mean/std per (level, noise) cell; std is the population deviation."""
    cells: dict[tuple, list[ReportRow]] = {}
    for row in rows:
        cells.setdefault((row.level, row.noise_kind, row.noise_level), []).append(row)
    out = []
    for (level, kind, nlevel), group in sorted(cells.items(), key=lambda kv: kv[0]):
        pre = np.array([r.pre_cd for r in group])
        post = np.array([r.post_cd for r in group])
        out.append({
            "level": level,
            "noise_kind": kind,
            "noise_level": nlevel,
            "count": len(group),
            "pre_mean": float(pre.mean()),
            "pre_std": float(pre.std()),
            "post_mean": float(post.mean()),
            "post_std": float(post.std()),
            "smoothness_mean": float(np.mean([r.smoothness for r in group])),
            "ms_mean": float(np.mean([r.ms_per_pair for r in group])),
        })
    return out


def write_report_csv(path: str | os.PathLike, report: RegistrationReport) -> None:
    lines = [CSV_HEADER]
    for r in report.rows:
        lines.append(
            f"{r.pair_id},{repr(r.level)},{r.noise_kind},{repr(r.noise_level)},"
            f"{repr(r.pre_cd)},{repr(r.post_cd)},{repr(r.smoothness)},{repr(r.ms_per_pair)}"
        )
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_report_csv(path: str | os.PathLike) -> RegistrationReport:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise FormatError(f"{path}: missing or unexpected report header")
    rows = []
    for ln in lines[1:]:
        cols = ln.split(",")
        if len(cols) != 8:
            raise FormatError(f"{path}: bad report row {ln!r}")
        rows.append(ReportRow(
            pair_id=int(cols[0]),
            level=float(cols[1]),
            noise_kind=cols[2],
            noise_level=float(cols[3]),
            pre_cd=float(cols[4]),
            post_cd=float(cols[5]),
            smoothness=float(cols[6]),
            ms_per_pair=float(cols[7]),
        ))
    return RegistrationReport(rows=tuple(rows))


def merge_reports(reports: Iterable[RegistrationReport]) -> RegistrationReport:
    rows: list[ReportRow] = []
    for rep in reports:
        rows.extend(rep.rows)
    return RegistrationReport(rows=tuple(rows))
