"""Round-based experiment runner with a resumable JSONL transcript.

Round 0 sends every task prompt. Each later round resubmits only the tasks
that are still unsolved, either with an error-correction prompt built from the
previous bad solution or with the unchanged original prompt. Every exchange
is judged immediately and appended to ``transcript.jsonl`` before the next
one is written, so a killed run can be resumed where it stopped. The
transcript is the single source of truth: round results and metrics are
always rebuilt from it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Union

from .bwgen import load_dataset
from .config import ConfigError, ExperimentConfig
from .crt import CrtTask, check_answer, load_crt_dataset, parse_linear_answer
from .extraction import extract_crt_answer, extract_plan, summarize_crt_llm, summarize_plan_llm
from .gateway import (
    Backend,
    ChatRequest,
    Gateway,
    GatewayError,
    HttpBackend,
    MockBackend,
    PricingTable,
    TokenUsage,
    cost,
)
from .mock import SimulatedSolver
from .pddl import Task, parse_plan_strict, render_plan, validate
from .prompts import (
    TEMPLATE_VERSIONS,
    PromptBundle,
    build_bw_task_prompt,
    build_crt_task_prompt,
    build_error_prompt,
    build_repeat_prompt,
    load_strategy,
)

log = logging.getLogger(__name__)

TRANSCRIPT = "transcript.jsonl"
EXCHANGES = "exchanges.jsonl"
CONFIG = "config.json"
VERDICTS = ("solved", "incorrect", "error")
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

AnyTask = Union[Task, CrtTask]


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskOutcome:
    verdict: str
    usage: TokenUsage
    record_index: int  # line number in the transcript


@dataclass(frozen=True)
class RoundResult:
    round_index: int
    attempted: tuple[str, ...]
    solved: tuple[str, ...]
    errored: tuple[str, ...]
    usage_sum: TokenUsage
    per_task: dict[str, TaskOutcome]

    @property
    def complete(self) -> bool:
        return set(self.per_task) == set(self.attempted)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    task_ids: tuple[str, ...]
    rounds: list[RoundResult]
    records: list[dict] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(r.complete for r in self.rounds)

    def cumulative_solved(self) -> list[int]:
        out, total = [], 0
        for r in self.rounds:
            total += len(r.solved)
            out.append(total)
        return out

    @property
    def usage_total(self) -> TokenUsage:
        total = TokenUsage()
        for r in self.rounds:
            total = total + r.usage_sum
        return total


# ---------------------------------------------------------------------------
# datasets

def dataset_kind(path: str | Path) -> str:
    manifest = Path(path) / "manifest.json"
    if not manifest.exists():
        raise ExperimentError(f"{path}: no manifest.json")
    kind = json.loads(manifest.read_text()).get("kind")
    if kind not in ("blocksworld", "crt"):
        raise ExperimentError(f"{path}: unknown dataset kind {kind!r}")
    return kind


def load_tasks(path: str | Path) -> tuple[str, list[AnyTask]]:
    kind = dataset_kind(path)
    tasks = load_dataset(path) if kind == "blocksworld" else load_crt_dataset(path)
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ExperimentError(f"{path}: duplicate task ids")
    return kind, tasks


# ---------------------------------------------------------------------------
# transcript

def read_transcript(path: str | Path, repair: bool = False) -> list[dict]:
    """Records of a transcript file.

    A final line cut short by a crash is dropped (and removed from the file
    when ``repair`` is set); a malformed line anywhere else is an error.
    """
    path = Path(path)
    if not path.exists():
        return []
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                log.warning("dropping truncated final transcript line")
                if repair:
                    path.write_bytes(raw[: len(raw) - len(line)])
                break
            raise ExperimentError(f"{path}: malformed line {i + 1}")
    return records


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def rebuild_rounds(task_ids: tuple[str, ...], records: list[dict], rounds: int) -> list[RoundResult]:
    """Derive per-round results from transcript records alone."""
    by_round: dict[int, dict[str, tuple[int, dict]]] = {}
    for i, rec in enumerate(records):
        slot = by_round.setdefault(rec["round"], {})
        if rec["task_id"] in slot:
            raise ExperimentError(f"duplicate record for {rec['task_id']} in round {rec['round']}")
        slot[rec["task_id"]] = (i, rec)
    extra = set(by_round) - set(range(rounds + 1))
    if extra:
        raise ExperimentError(f"transcript has records for rounds {sorted(extra)} outside 0..{rounds}")
    solved: set[str] = set()
    out = []
    for k in range(rounds + 1):
        attempted = tuple(t for t in task_ids if t not in solved)
        slot = by_round.get(k, {})
        stray = set(slot) - set(attempted)
        if stray:
            raise ExperimentError(f"round {k} has records for tasks that were not attempted: {sorted(stray)}")
        per_task = {}
        usage = TokenUsage()
        for t in attempted:
            if t in slot:
                i, rec = slot[t]
                u = TokenUsage.from_dict(rec["usage"])
                per_task[t] = TaskOutcome(rec["verdict"], u, i)
                usage = usage + u
        won = tuple(t for t in attempted if t in per_task and per_task[t].verdict == "solved")
        errored = tuple(t for t in attempted if t in per_task and per_task[t].verdict == "error")
        out.append(RoundResult(k, attempted, won, errored, usage, per_task))
        solved.update(won)
    return out


# ---------------------------------------------------------------------------
# runner

def make_backend(config: ExperimentConfig) -> Backend:
    spec = dict(config.backend)
    kind = spec.pop("kind")
    if kind == "mock":
        solver = SimulatedSolver(spec.get("solve_rate", 0.5), spec.get("seed", config.seed), spec.get("schedule"))
        return MockBackend(solver, seed=spec.get("seed", config.seed))
    return HttpBackend(
        base_url=spec.get("base_url", "https://api.openai.com/v1"),
        api_key_env=spec.get("api_key_env", "OPENAI_API_KEY"),
        timeout=spec.get("timeout", 600.0),
    )


def make_pricing(config: ExperimentConfig) -> PricingTable:
    table = PricingTable.default()
    if config.pricing:
        table = PricingTable.from_file(config.pricing, base=table)
    return table


class _UsageTap:
    """Gateway wrapper that remembers the usage of the last exchange."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway
        self.usage: dict | None = None

    def complete(self, request: ChatRequest):
        exchange = self.gateway.complete(request)
        self.usage = exchange.usage.to_dict()
        return exchange


class Runner:
    def __init__(self, config: ExperimentConfig, *, backend: Backend | None = None,
                 pricing: PricingTable | None = None, gateway_options: dict | None = None):
        kind, tasks = load_tasks(config.dataset)
        self.kind = kind
        self.config = config.resolved(kind)
        self.tasks = {t.id: t for t in tasks}
        self.task_ids = tuple(t.id for t in tasks)
        self.strategy = load_strategy(self.config.strategy)
        self.pricing = pricing or make_pricing(self.config)
        self.pricing.get(self.config.model)  # fail early on an unknown alias
        self.out = Path(self.config.output_dir)
        self.run_id = self.config.run_id()
        self._backend = backend
        self._gateway_options = gateway_options or {}
        self._gateway: Gateway | None = None
        self._base: dict[str, PromptBundle] = {}

    # prompts -------------------------------------------------------------

    def base_prompt(self, task_id: str) -> PromptBundle:
        if task_id not in self._base:
            task = self.tasks[task_id]
            if self.kind == "blocksworld":
                self._base[task_id] = build_bw_task_prompt(task, self.strategy)
            else:
                self._base[task_id] = build_crt_task_prompt(task, self.strategy)
        return self._base[task_id]

    def correction_prompt(self, task_id: str, previous: dict | None) -> PromptBundle:
        base = self.base_prompt(task_id)
        if self.config.correction_mode == "repeat" or previous is None:
            return build_repeat_prompt(base)
        plan = parse_plan_strict(previous["extracted"] or "")
        report = validate(self.tasks[task_id], plan)
        return build_error_prompt(base, previous["extracted"] or "", report)

    # judging -------------------------------------------------------------

    def judge(self, task_id: str, response: str, tag: str) -> dict:
        """Extract and check an answer; returns the verdict fields of a record."""
        task = self.tasks[task_id]
        summary = None
        if self.kind == "blocksworld":
            if self.config.extraction_mode == "llm":
                plan, summary = self._summarize(summarize_plan_llm, response, tag)
            else:
                plan = extract_plan(response)
            report = validate(task, plan)
            failure = None
            if not report.goal_satisfied:
                f = report.first_failure
                failure = ({"step": f.step_index, "action": str(f.action), "reason": f.reason}
                           if f else {"step": None, "action": None, "reason": "goal not satisfied"})
            out = {"extracted": render_plan(plan), "failure": failure,
                   "verdict": "solved" if report.goal_satisfied else "incorrect"}
        else:
            formula = extract_crt_answer(response)
            if self.config.extraction_mode == "llm" and formula:
                form, summary = self._summarize(summarize_crt_llm, formula, tag)
            else:
                form = parse_linear_answer(formula)
            ok = check_answer(form, task.truth)
            out = {"extracted": formula, "answer": {"A": form.a_y, "B": form.b_x},
                   "failure": None if ok else {"step": None, "action": None, "reason": "wrong answer"},
                   "verdict": "solved" if ok else "incorrect"}
        if summary is not None:
            out["summary_usage"] = summary
        return out

    def _summarize(self, fn: Callable, text: str, tag: str):
        # the summariser's usage is recorded on the record but kept out of the metrics
        tap = _UsageTap(self.gateway)
        value = fn(text, tap, self.config.summarizer_model, tag)
        return value, tap.usage

    # exchanges -----------------------------------------------------------

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            backend = self._backend or make_backend(self.config)
            self.out.mkdir(parents=True, exist_ok=True)
            options = {"concurrency": self.config.concurrency, "exchange_log": self.out / EXCHANGES}
            options.update(self._gateway_options)
            self._gateway = Gateway(backend, self.pricing, **options)
        return self._gateway

    def attempt(self, task_id: str, k: int, previous: dict | None) -> dict:
        bundle = self.base_prompt(task_id) if k == 0 else self.correction_prompt(task_id, previous)
        tag = f"{task_id}:r{k}"
        request = ChatRequest(self.config.model, tuple(bundle.messages()), dict(self.config.params),
                              self.config.seed, tag)
        record = {
            "run_id": self.run_id,
            "task_id": task_id,
            "round": k,
            "family": bundle.family,
            "model": self.config.model,
            "prompt_hash": hashlib.sha256(bundle.user.encode()).hexdigest(),
            "template_versions": dict(TEMPLATE_VERSIONS),
            "response_text": None,
            "extracted": None,
            "usage": TokenUsage().to_dict(),
            "cost_usd": 0.0,
            "verdict": "error",
            "failure": None,
            "error": None,
        }
        started = datetime.now(timezone.utc)
        try:
            exchange = self.gateway.complete(request)
            record.update(response_text=exchange.response_text, usage=exchange.usage.to_dict(),
                          cost_usd=cost(exchange.usage, self.pricing.get(self.config.model)),
                          backend=exchange.backend, attempts=exchange.attempts)
            record.update(self.judge(task_id, exchange.response_text, tag))
        except GatewayError as exc:
            # transport failure: carried to the next round, never counted as solved
            record.update(verdict="error", error=f"{type(exc).__name__}: {exc}")
        record["timestamps"] = {"started": started.isoformat(), "finished": datetime.now(timezone.utc).isoformat()}
        return record

    def _stamp(self, record: dict, index: int) -> dict:
        if self.config.timestamps_fixed:
            t = (_EPOCH + timedelta(seconds=index)).isoformat()
            record = dict(record, timestamps={"started": t, "finished": t})
        return record

    # driver --------------------------------------------------------------

    def prepare(self, fresh: bool) -> list[dict]:
        self.out.mkdir(parents=True, exist_ok=True)
        cfg_path = self.out / CONFIG
        transcript = self.out / TRANSCRIPT
        if fresh:
            if transcript.exists() and transcript.stat().st_size:
                raise ExperimentError(f"{self.out} already holds a transcript; use resume")
            cfg_path.write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n")
            transcript.write_text("")
            return []
        records = read_transcript(transcript, repair=True)
        for rec in records:
            if rec.get("run_id") != self.run_id:
                raise ExperimentError(f"{transcript} belongs to run {rec.get('run_id')}, not {self.run_id}")
        return records

    def run(self, fresh: bool = True) -> ExperimentResult:
        records = self.prepare(fresh)
        rebuild_rounds(self.task_ids, records, self.config.rounds)  # consistency check
        path = self.out / TRANSCRIPT
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            for k in range(self.config.rounds + 1):
                rounds = rebuild_rounds(self.task_ids, records, self.config.rounds)
                done = set(rounds[k].per_task)
                todo = [t for t in rounds[k].attempted if t not in done]
                if not todo:
                    continue
                previous = {t: self._previous(records, t, k) for t in todo}
                results = pool.map(lambda t: self.attempt(t, k, previous[t]), todo)
                with path.open("a") as fh:
                    for rec in results:
                        rec = self._stamp(rec, len(records))
                        fh.write(_dump(rec) + "\n")
                        fh.flush()
                        os.fsync(fh.fileno())
                        records.append(rec)
        return ExperimentResult(self.config, self.task_ids,
                                rebuild_rounds(self.task_ids, records, self.config.rounds), records)

    @staticmethod
    def _previous(records: list[dict], task_id: str, k: int) -> dict | None:
        """Latest earlier record of the task that holds a model answer."""
        best = None
        for rec in records:
            if rec["task_id"] == task_id and rec["round"] < k and rec["response_text"] is not None:
                if best is None or rec["round"] > best["round"]:
                    best = rec
        return best

    def dry_run(self) -> list[PromptBundle]:
        return [self.base_prompt(t) for t in self.task_ids]


# ---------------------------------------------------------------------------
# entry points

def run_experiment(config: ExperimentConfig, **kwargs) -> ExperimentResult:
    return Runner(config, **kwargs).run(fresh=True)


def load_run_config(out_dir: str | Path) -> ExperimentConfig:
    path = Path(out_dir) / CONFIG
    if not path.exists():
        raise ExperimentError(f"{out_dir}: no {CONFIG}; not a run directory")
    cfg = ExperimentConfig.from_dict(json.loads(path.read_text()))
    # the directory may have moved since the run started
    return replace(cfg, output_dir=str(Path(out_dir)))


def resume_experiment(out_dir: str | Path, **kwargs) -> ExperimentResult:
    return Runner(load_run_config(out_dir), **kwargs).run(fresh=False)


def load_result(out_dir: str | Path) -> ExperimentResult:
    """Rebuild a (possibly partial) result from a run directory without contacting any backend."""
    cfg = load_run_config(out_dir)
    kind, tasks = load_tasks(cfg.dataset)
    cfg = cfg.resolved(kind)
    ids = tuple(t.id for t in tasks)
    records = read_transcript(Path(out_dir) / TRANSCRIPT)
    return ExperimentResult(cfg, ids, rebuild_rounds(ids, records, cfg.rounds), records)


__all__ = [
    "ConfigError", "ExperimentError", "ExperimentResult", "RoundResult", "Runner", "TaskOutcome",
    "load_result", "read_transcript", "rebuild_rounds", "resume_experiment", "run_experiment",
]
