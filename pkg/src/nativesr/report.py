"""Aggregate raw evaluation rows into per-bin tables with significance marks."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .harness import RawRow, format_float
from .metrics import HIGHER_IS_BETTER, PSNR_PEAK
from .routing import N_V_BINS, V_LABELS
from .stats import bonferroni, mann_whitney_u

__all__ = ["StatRow", "Comparison", "MetricReport", "aggregate", "emit_report", "parse_report", "BINS"]

BINS = tuple(f"V{i}" for i in range(1, N_V_BINS + 1)) + ("overall",)
_BIN_LABELS = dict(zip(BINS, V_LABELS + ("Overall",)))


@dataclass(frozen=True)
class StatRow:
    metric: str
    method: str
    bin: str
    mean: float
    std: float
    n: int
    failures: int = 0
    best: bool = False
    mark: str = ""


@dataclass(frozen=True)
class Comparison:
    metric: str
    method: str
    other: str
    u: float
    p: float
    p_corrected: float


@dataclass
class MetricReport:
    """Per (metric, method, bin) statistics plus overall pairwise tests.

    ``comparisons`` holds every method pair per metric (Mann-Whitney on the
    overall samples, Bonferroni over the number of pairs). ``mark`` on an
    overall row is ``"*"`` when the method differs significantly from the best
    method listed before it.
    """

    metrics: List[str]
    methods: List[str]
    stats: List[StatRow] = field(default_factory=list)
    comparisons: List[Comparison] = field(default_factory=list)
    meta: Dict[str, object] = field(default_factory=dict)

    def get(self, metric: str, method: str, bin: str) -> StatRow:
        for s in self.stats:
            if (s.metric, s.method, s.bin) == (metric, method, bin):
                return s
        raise KeyError((metric, method, bin))


def _better(metric: str, a: float, b: float) -> bool:
    """Is mean ``a`` strictly better than ``b``."""
    higher = HIGHER_IS_BETTER.get(metric, True)
    return a > b if higher else a < b


def _mean_std(values: np.ndarray) -> Tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(values))
    if values.size == 1 or not math.isfinite(mean):
        return mean, 0.0 if values.size == 1 else math.nan
    return mean, float(np.std(values, ddof=1))


def aggregate(rows: Sequence[RawRow], significance_level: float = 0.05,
              methods: Optional[Sequence[str]] = None,
              metrics: Optional[Sequence[str]] = None) -> MetricReport:
    """Mean / sample std per v-bin and overall, and overall significance tests.

    Without explicit ``methods`` they are sorted by name and metrics follow
    the canonical metric order, so the result never depends on row order.
    Pass ``methods`` to fix the "previous best" comparison order. Failed rows
    count toward ``failures`` only.
    """
    if not rows:
        raise ValueError("cannot aggregate an empty results table")
    if methods is None:
        methods = sorted({r.method for r in rows})
    if metrics is None:
        known = list(HIGHER_IS_BETTER)
        metrics = sorted({r.metric for r in rows}, key=lambda m: (m not in known, known.index(m) if m in known else 0, m))
    methods, metrics = list(methods), list(metrics)
    values: Dict[Tuple[str, str, str], List[float]] = {}
    fails: Dict[Tuple[str, str, str], int] = {}
    # sort for order-independent accumulation
    for r in sorted(rows, key=lambda r: (r.metric, r.method, r.v_bin, r.a_bin, r.subject,
                                         r.realization, format_float(r.value), r.status)):
        for b in (f"V{r.v_bin}", "overall"):
            key = (r.metric, r.method, b)
            if r.ok:
                values.setdefault(key, []).append(r.value)
            else:
                fails[key] = fails.get(key, 0) + 1

    n_pairs = max(1, len(methods) * (len(methods) - 1) // 2)
    report = MetricReport(metrics, methods, meta={
        "significance_level": significance_level,
        "bonferroni_family": n_pairs,
        "test": "Mann-Whitney U, two-sided",
        "std": "sample (ddof=1)",
        "psnr_peak": PSNR_PEAK,
        "spectral_loss": "L1 of DFT difference modulus, mean over frequencies",
    })
    for metric in metrics:
        means: Dict[Tuple[str, str], float] = {}
        table: Dict[Tuple[str, str], Tuple[float, float, int, int]] = {}
        for method in methods:
            for b in BINS:
                vals = np.asarray(values.get((metric, method, b), []), dtype=np.float64)
                mean, std = _mean_std(vals)
                table[method, b] = (mean, std, int(vals.size), fails.get((metric, method, b), 0))
                means[method, b] = mean
        best: Dict[str, List[str]] = {}
        for b in BINS:
            cands = [m for m in methods if not math.isnan(means[m, b])]
            if not cands:
                continue
            top = cands[0]
            for m in cands[1:]:
                if _better(metric, means[m, b], means[top, b]):
                    top = m
            best[b] = [m for m in cands if means[m, b] == means[top, b]]

        pvals: Dict[Tuple[str, str], float] = {}
        for i, a in enumerate(methods):
            for b_ in methods[i + 1:]:
                xa = values.get((metric, a, "overall"), [])
                xb = values.get((metric, b_, "overall"), [])
                if not xa or not xb:
                    continue
                res = mann_whitney_u(xa, xb)
                pc = bonferroni(res.pvalue, n_pairs)
                report.comparisons.append(Comparison(metric, a, b_, res.statistic, res.pvalue, pc))
                pvals[a, b_] = pvals[b_, a] = pc

        marks: Dict[str, str] = {}
        prev_best: Optional[str] = None
        for m in methods:
            mean = means[m, "overall"]
            if math.isnan(mean):
                continue
            if prev_best is not None:
                pc = pvals.get((m, prev_best))
                if pc is not None and pc < significance_level:
                    marks[m] = "*"
                if _better(metric, mean, means[prev_best, "overall"]):
                    prev_best = m
            else:
                prev_best = m

        for method in methods:
            for b in BINS:
                mean, std, n, nf = table[method, b]
                report.stats.append(StatRow(
                    metric, method, b, mean, std, n, nf,
                    best=method in best.get(b, ()),
                    mark=marks.get(method, "") if b == "overall" else "",
                ))
    return report


# -- emission ---------------------------------------------------------------------


def _cell(s: StatRow) -> str:
    if s.n == 0:
        text = "n/a"
    elif math.isfinite(s.mean):
        text = f"{s.mean:.3f} ± {s.std:.3f}"
    else:
        text = format_float(s.mean)
    if s.best and s.n:
        text = f"**{text}**"
    return f"{text} {s.mark}" if s.mark else text


def _markdown(report: MetricReport) -> str:
    header = "| Method | " + " | ".join(_BIN_LABELS[b] for b in BINS) + " |"
    rule = "|---|" + "---:|" * len(BINS)
    out: List[str] = []
    for metric in report.metrics or [""]:
        if metric:
            out.append(f"### {metric}")
            out.append("")
        out.append(header)
        out.append(rule)
        for method in report.methods:
            cells = [_cell(report.get(metric, method, b)) for b in BINS]
            out.append(f"| {method} | " + " | ".join(cells) + " |")
        failed = [s for s in report.stats if s.metric == metric and s.bin == "overall" and s.failures]
        if failed:
            out.append("")
            out.append("Failed cases: " + ", ".join(f"{s.method}: {s.failures}" for s in failed))
        out.append("")
    meta = report.meta
    if meta:
        out.append(
            f"Mean ± std ({meta.get('std', '')}); bold = best per column; * = significant "
            f"({meta.get('test', '')}, Bonferroni k={meta.get('bonferroni_family', '')}, "
            f"alpha={meta.get('significance_level', '')}) vs. the best method listed above. "
            f"PSNR peak: {meta.get('psnr_peak', '')}."
        )
        out.append("")
    return "\n".join(out)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return format_float(x)
    return x


def _unjson(x):
    if isinstance(x, str) and x in ("nan", "+inf", "-inf"):
        return float(x)
    return x


def _to_json(report: MetricReport) -> str:
    doc = {
        "meta": report.meta,
        "metrics": report.metrics,
        "methods": report.methods,
        "stats": [{k: _jsonable(v) for k, v in asdict(s).items()} for s in report.stats],
        "comparisons": [{k: _jsonable(v) for k, v in asdict(c).items()} for c in report.comparisons],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


_CSV_COLUMNS = ("kind", "metric", "method", "bin", "mean", "std", "n", "failures", "best", "mark",
                "other", "u", "p", "p_corrected")


def _to_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    for k, v in report.meta.items():
        buf.write(f"# {k}={json.dumps(v, ensure_ascii=False)}\n")
    buf.write(f"# metrics={json.dumps(report.metrics, ensure_ascii=False)}\n")
    buf.write(f"# methods={json.dumps(report.methods, ensure_ascii=False)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_COLUMNS)
    for s in report.stats:
        w.writerow(["stat", s.metric, s.method, s.bin, format_float(s.mean), format_float(s.std),
                    s.n, s.failures, int(s.best), s.mark, "", "", "", ""])
    for c in report.comparisons:
        w.writerow(["comparison", c.metric, c.method, "overall", "", "", "", "", "", "", c.other,
                    format_float(c.u), format_float(c.p), format_float(c.p_corrected)])
    return buf.getvalue()


def _from_csv(text: str) -> MetricReport:
    meta: Dict[str, object] = {}
    body = []
    for line in text.splitlines(keepends=True):
        if line.startswith("# "):
            k, _, v = line[2:].rstrip("\n").partition("=")
            meta[k] = json.loads(v)
        else:
            body.append(line)
    metrics = meta.pop("metrics", [])
    methods = meta.pop("methods", [])
    report = MetricReport(list(metrics), list(methods), meta=meta)
    for d in csv.DictReader(io.StringIO("".join(body))):
        if d["kind"] == "stat":
            report.stats.append(StatRow(d["metric"], d["method"], d["bin"], float(d["mean"]),
                                        float(d["std"]), int(d["n"]), int(d["failures"]),
                                        bool(int(d["best"])), d["mark"]))
        else:
            report.comparisons.append(Comparison(d["metric"], d["method"], d["other"], float(d["u"]),
                                                 float(d["p"]), float(d["p_corrected"])))
    return report


def _from_json(text: str) -> MetricReport:
    doc = json.loads(text)
    report = MetricReport(doc["metrics"], doc["methods"], meta=doc.get("meta", {}))
    report.stats = [StatRow(**{k: _unjson(v) for k, v in s.items()}) for s in doc["stats"]]
    report.comparisons = [Comparison(**{k: _unjson(v) for k, v in c.items()}) for c in doc["comparisons"]]
    return report


def emit_report(report: MetricReport, fmt: str = "markdown") -> str:
    if fmt in ("markdown", "md"):
        return _markdown(report)
    if fmt == "csv":
        return _to_csv(report)
    if fmt == "json":
        return _to_json(report)
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(text: str, fmt: str) -> MetricReport:
    """Read back a CSV or JSON report produced by :func:`emit_report`."""
    if fmt == "csv":
        return _from_csv(text)
    if fmt == "json":
        return _from_json(text)
    raise ValueError(f"cannot parse report format {fmt!r}")
