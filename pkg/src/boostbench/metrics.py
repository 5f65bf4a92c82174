"""Success, token and cost metrics, and their report tables.

Costs here count reasoning tokens only, priced at the model's output rate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from statistics import fmean
from typing import Literal, Sequence

from .experiment import ExperimentResult
from .gateway import PricingTable, TokenUsage

UNDEFINED = "n/a"


@dataclass(frozen=True)
class MetricsTable:
    experiment: str
    model: str
    n_tasks: int
    solved: tuple[int, ...]  # cumulative solved count after each round
    tpt: float | None  # mean reasoning tokens per round-0 exchange
    ec_tpt: float | None  # mean reasoning tokens per correction exchange
    tokens: int
    cost: float
    initial_cps: float | None
    total_cps: float | None

    def __post_init__(self) -> None:
        if any(b < a for a, b in zip(self.solved, self.solved[1:])):
            raise ValueError("cumulative solved counts must be non-decreasing")

    @property
    def success(self) -> tuple[float, ...]:
        if not self.n_tasks:
            return tuple(0.0 for _ in self.solved)
        return tuple(100.0 * s / self.n_tasks for s in self.solved)

    @property
    def rounds(self) -> int:
        return len(self.solved) - 1


def compute_metrics(result: ExperimentResult, pricing: PricingTable | None = None) -> MetricsTable:
    if not result.complete:
        raise ValueError("experiment is incomplete; resume it before computing metrics")
    pricing = pricing or PricingTable.default()
    price = pricing.get(result.config.model).output_price_per_million

    def reasoning(rec: dict) -> int:
        return TokenUsage.from_dict(rec["usage"]).reasoning_tokens

    # only exchanges that returned a model answer enter the averages
    answered = [r for r in result.records if r.get("response_text") is not None]
    initial = [reasoning(r) for r in answered if r["round"] == 0]
    corrections = [reasoning(r) for r in answered if r["round"] > 0]
    tokens = sum(reasoning(r) for r in result.records)
    cost = tokens * price / 1e6
    solved = tuple(result.cumulative_solved())
    first = solved[0] if solved else 0
    initial_cost = sum(initial) * price / 1e6
    return MetricsTable(
        experiment=result.config.label,
        model=result.config.model,
        n_tasks=len(result.task_ids),
        solved=solved,
        tpt=fmean(initial) if initial else None,
        ec_tpt=fmean(corrections) if corrections else None,
        tokens=tokens,
        cost=cost,
        initial_cps=initial_cost / first if first else None,
        total_cps=cost / solved[-1] if solved and solved[-1] else None,
    )


# ---------------------------------------------------------------------------
# rendering

def _pct(v: float) -> str:
    return f"{v:.1f}".rstrip("0").rstrip(".")


def _num(v: float | None, digits: int) -> str:
    return UNDEFINED if v is None else f"{v:.{digits}f}"


def _markdown(metrics: Sequence[MetricsTable], rounds: int) -> str:
    if metrics:
        rounds = max(m.rounds for m in metrics)
    heads = ["Initial"] + [f"R{i}" for i in range(1, rounds + 1)]
    lines = ["### Success rate by round (%)", ""]
    lines.append("| Experiment | Model | " + " | ".join(heads) + " |")
    lines.append("|---|---|" + "---:|" * len(heads))
    for m in metrics:
        cells = [_pct(v) for v in m.success] + [""] * (rounds - m.rounds)
        lines.append(f"| {m.experiment} | {m.model} | " + " | ".join(cells) + " |")
    lines += ["", "### Tokens and cost", ""]
    lines.append("| Experiment | Model | TPT | Initial CPS ($) | EC-TPT | Tokens | Cost ($) | Total CPS ($) |")
    lines.append("|---|---|---:|---:|---:|---:|---:|---:|")
    for m in metrics:
        cells = [_num(m.tpt, 0), _num(m.initial_cps, 2), _num(m.ec_tpt, 0), str(m.tokens),
                 f"{m.cost:.2f}", _num(m.total_cps, 2)]
        lines.append(f"| {m.experiment} | {m.model} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


CSV_FIELDS = ("experiment", "model", "n_tasks", "solved", "tpt", "initial_cps", "ec_tpt",
              "tokens", "cost", "total_cps")


def _opt(v: float | None) -> str:
    return "" if v is None else repr(v)


def _csv(metrics: Sequence[MetricsTable]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for m in metrics:
        writer.writerow([m.experiment, m.model, m.n_tasks, ";".join(map(str, m.solved)),
                         _opt(m.tpt), _opt(m.initial_cps), _opt(m.ec_tpt), m.tokens, repr(m.cost),
                         _opt(m.total_cps)])
    return buf.getvalue()


def render_report(metrics: MetricsTable | Sequence[MetricsTable],
                  format: Literal["markdown", "csv"] = "markdown", rounds: int = 4) -> str:
    """Success-by-round and token/cost tables. ``rounds`` sets the header width when there are no rows."""
    if isinstance(metrics, MetricsTable):
        metrics = [metrics]
    if format == "markdown":
        return _markdown(metrics, rounds)
    if format == "csv":
        return _csv(metrics)
    raise ValueError(f"unknown report format {format!r}")


def parse_report_csv(text: str) -> list[MetricsTable]:
    def opt(v: str) -> float | None:
        return float(v) if v else None

    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        MetricsTable(
            experiment=r["experiment"],
            model=r["model"],
            n_tasks=int(r["n_tasks"]),
            solved=tuple(int(x) for x in r["solved"].split(";")) if r["solved"] else (),
            tpt=opt(r["tpt"]),
            ec_tpt=opt(r["ec_tpt"]),
            tokens=int(r["tokens"]),
            cost=float(r["cost"]),
            initial_cps=opt(r["initial_cps"]),
            total_cps=opt(r["total_cps"]),
        )
        for r in rows
    ]
