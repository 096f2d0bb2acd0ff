"""End-to-end analysis run: plan, compose, submit with recovery, parse,
verify, recount, merge.

One batch is processed by a small state machine: submit, classify any
failure, apply the mapped recovery action (backoff, wait, resplit, clarify,
reassert, reinject), and resubmit until the batch yields a parsed table or
the policy aborts. All waiting goes through an injectable sleep so callers
can mock the clock and interrupt on cancellation.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

from . import consolidate
from .chunking import (
    BatchPlan,
    RecordFragment,
    TokenBudget,
    estimate_tokens,
    plan_batches,
    render_payload,
    replan_items,
)
from .corpus import Dataset, validate_dataset
from .errors import BudgetTooSmallError, EmptyDatasetError, RunCancelledError
from .exporter import SessionRecord, TranscriptExchange
from .gateway import (
    DEFAULT_MODEL,
    DEFAULT_TEMPERATURE,
    ActionKind,
    AttemptState,
    Backend,
    CostEstimate,
    ErrorKind,
    GatewayError,
    LlmRequest,
    Rates,
    default_rates,
    estimate_cost,
    recovery_policy,
    submit,
)
from .prompts import PromptBundle, PromptConfig, compose
from .themeparse import (
    ProvenanceReport,
    ThemeTable,
    parse_theme_table,
    recount_participants,
    verify_quotes,
)
from .validation import Severity

# Prompt modifications during recovery may eat into the completion space;
# below this floor the request is not worth sending.
MIN_COMPLETION_TOKENS = 64

# Headroom added when the measured prompt exceeds its reserve (covers the
# widening of "part i of N" digits across batches).
_PROMPT_RESERVE_MARGIN = 16

_GATEWAY_KINDS = {
    ErrorKind.NETWORK,
    ErrorKind.NOT_PROCESSED,
    ErrorKind.POLICY_VIOLATION,
    ErrorKind.TOKEN_LIMIT,
    ErrorKind.RATE_LIMIT,
    ErrorKind.REFUSAL,
}

SleepFn = Callable[[float], None]
CancelFn = Callable[[], bool]
EventFn = Callable[..., None]


@dataclass
class RecoveryLogEntry:
    batch_label: str
    kind: ErrorKind
    action: ActionKind
    params: dict = field(default_factory=dict)

    def render(self) -> str:
        details = ", ".join(f"{k}={v}" for k, v in self.params.items() if k != "clarifier")
        suffix = f" ({details})" if details else ""
        return f"batch {self.batch_label}: {self.kind.value} -> {self.action.value}{suffix}"


class PipelineAbort(Exception):
    def __init__(self, error: GatewayError, stage: str, note: str = ""):
        super().__init__(note or error.raw_message or error.kind.value)
        self.error = error
        self.stage = stage  # "gateway" | "parse"


@dataclass
class PipelineResult:
    status: str  # complete | aborted | cancelled
    plan: BatchPlan
    budget: TokenBudget
    batch_tables: list[ThemeTable]
    merged: ThemeTable | None
    provenance: ProvenanceReport | None
    cost: CostEstimate
    recovery_log: list[RecoveryLogEntry]
    exchanges: list[TranscriptExchange]
    preset_version: str
    abort: GatewayError | None = None
    abort_stage: str | None = None
    warning: str | None = None

    def session_record(
        self, dataset: Dataset, model_id: str, temperature: float
    ) -> SessionRecord:
        return SessionRecord(
            source_path=dataset.source_path,
            record_count=len(dataset.records),
            preset_version=self.preset_version,
            model_id=model_id,
            temperature=temperature,
            exchanges=list(self.exchanges),
            recovery_log=[entry.render() for entry in self.recovery_log],
            merged=self.merged,
            cost=self.cost,
            status=self.status,
            abort_reason=(
                f"{self.abort.kind.value}: {self.abort.raw_message}" if self.abort else None
            ),
        )


def derive_budget(config: PromptConfig, base: TokenBudget | None = None) -> TokenBudget:
    """Raise the prompt reserve to the measured prompt size when needed."""
    base = base or TokenBudget()
    probe = compose(config, 1, 1)
    needed = estimate_tokens(probe.assembled) + _PROMPT_RESERVE_MARGIN
    if needed <= base.prompt_reserve:
        return base
    return TokenBudget(
        context_limit=base.context_limit,
        prompt_reserve=needed,
        completion_reserve=base.completion_reserve,
    )


def preview_run(
    dataset: Dataset,
    config: PromptConfig,
    budget: TokenBudget | None = None,
    rates: Rates | None = None,
    model_id: str = DEFAULT_MODEL,
) -> tuple[BatchPlan, PromptBundle, CostEstimate]:
    """Plan, a probe prompt, and the cost estimate, without submitting."""
    budget = derive_budget(config, budget)
    plan = plan_batches(dataset, budget)
    bundle = compose(config, 1, max(1, len(plan.batches)))
    cost = estimate_cost(plan, bundle, rates or default_rates(model_id))
    return plan, bundle, cost


def run_pipeline(
    dataset: Dataset,
    config: PromptConfig,
    backend: Backend,
    *,
    budget: TokenBudget | None = None,
    model_id: str = DEFAULT_MODEL,
    temperature: float = DEFAULT_TEMPERATURE,
    rates: Rates | None = None,
    parallelism: int = 1,
    sleep: SleepFn | None = None,
    cancel: CancelFn | None = None,
    on_event: EventFn | None = None,
) -> PipelineResult:
    """Run the full analysis over a validated dataset.

    Raises EmptyDatasetError (and other corpus errors) before any
    submission; gateway/parse failures that exhaust recovery end in an
    aborted result, not an exception. RunCancelledError propagates.
    """
    sleep_fn: SleepFn = sleep if sleep is not None else time.sleep
    cancel_fn: CancelFn = cancel if cancel is not None else (lambda: False)
    emit: EventFn = on_event if on_event is not None else (lambda *a, **k: None)

    report = validate_dataset(dataset, budget)
    if not report.is_ok:
        raise EmptyDatasetError("; ".join(report.messages(Severity.BLOCKING)))

    budget = derive_budget(config, budget)
    plan = plan_batches(dataset, budget)
    total = len(plan.batches)
    bundles = [compose(config, i + 1, total) for i in range(total)]
    cost = estimate_cost(plan, bundles[0], rates or default_rates(model_id))
    emit("planned", batches=total, cost=cost)

    recovery_log: list[RecoveryLogEntry] = []
    exchanges: list[TranscriptExchange] = []
    tables: list[ThemeTable] = []
    runner = _BatchRunner(
        dataset=dataset,
        config=config,
        backend=backend,
        budget=budget,
        model_id=model_id,
        temperature=temperature,
        sleep=sleep_fn,
        cancel=cancel_fn,
        emit=emit,
        total=total,
    )

    try:
        if parallelism > 1 and total > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                outcomes = list(
                    pool.map(runner.run_batch, plan.batches, bundles)
                )
        else:
            outcomes = [runner.run_batch(batch, bundle) for batch, bundle in zip(plan.batches, bundles)]
    except PipelineAbort as abort:
        recovery_log.extend(runner.drain_log())
        exchanges.extend(runner.drain_exchanges())
        exchanges.sort(key=lambda e: int(e.label.split("/")[0]))
        emit("aborted", stage=abort.stage, kind=abort.error.kind.value)
        return PipelineResult(
            status="aborted",
            plan=plan,
            budget=budget,
            batch_tables=tables,
            merged=None,
            provenance=None,
            cost=cost,
            recovery_log=recovery_log,
            exchanges=exchanges,
            preset_version=bundles[0].preset_version,
            abort=abort.error,
            abort_stage=abort.stage,
        )

    recovery_log.extend(runner.drain_log())
    exchanges.extend(runner.drain_exchanges())
    exchanges.sort(key=lambda e: int(e.label.split("/")[0]))
    for outcome in outcomes:
        tables.extend(outcome)

    merged = consolidate.merge_tables(tables, config.theme_count, dataset)
    warning = None
    if len(merged.entries) < config.theme_count:
        warning = (
            f"only {len(merged.entries)} distinct themes found; "
            f"{config.theme_count} were requested"
        )
    provenance = verify_quotes(merged, dataset)
    merged = recount_participants(merged, dataset)
    emit("complete", themes=len(merged.entries))
    return PipelineResult(
        status="complete",
        plan=plan,
        budget=budget,
        batch_tables=tables,
        merged=merged,
        provenance=provenance,
        cost=cost,
        recovery_log=recovery_log,
        exchanges=exchanges,
        preset_version=bundles[0].preset_version,
        warning=warning,
    )


class _BatchRunner:
    """Executes one batch at a time through the recovery state machine."""

    def __init__(
        self,
        dataset: Dataset,
        config: PromptConfig,
        backend: Backend,
        budget: TokenBudget,
        model_id: str,
        temperature: float,
        sleep: SleepFn,
        cancel: CancelFn,
        emit: EventFn,
        total: int,
    ):
        self.dataset = dataset
        self.config = config
        self.backend = backend
        self.budget = budget
        self.model_id = model_id
        self.temperature = temperature
        self.sleep = sleep
        self.cancel = cancel
        self.emit = emit
        self.total = total
        self._log: list[RecoveryLogEntry] = []
        self._exchanges: list[TranscriptExchange] = []

    def drain_log(self) -> list[RecoveryLogEntry]:
        log, self._log = self._log, []
        return log

    def drain_exchanges(self) -> list[TranscriptExchange]:
        exchanges, self._exchanges = self._exchanges, []
        return exchanges

    def _check_cancel(self) -> None:
        if self.cancel():
            raise RunCancelledError("analysis run cancelled")

    def run_batch(self, batch, bundle: PromptBundle) -> list[ThemeTable]:
        label = f"{batch.index + 1}/{self.total}"
        attempt = AttemptState(
            batch_index=batch.index + 1,
            budget=self.budget.effective_budget,
            batch_size=len(batch.items),
        )
        queue: list[list[RecordFragment]] = [list(batch.items)]
        prompt_prefix = ""
        prompt_suffix = ""
        tail_items: list[RecordFragment] = []
        tables: list[ThemeTable] = []
        segmented = False

        self.emit("batch_started", batch=batch.index + 1, total=self.total)
        while queue:
            self._check_cancel()
            items = queue[0]
            payload = render_payload(items)
            if tail_items:
                payload += "\n\n" + render_payload(tail_items)
            prompt = prompt_prefix + bundle.assembled + prompt_suffix
            exchange_label = label if not segmented else f"{label} segment {len(tables) + 1}"
            error = self._attempt(
                prompt, payload, batch.index + 1, exchange_label, tables, bundle
            )
            if error is None:
                queue.pop(0)
                tail_items = []
                continue
            action = recovery_policy(error, attempt)
            self._log.append(
                RecoveryLogEntry(
                    batch_label=label,
                    kind=error.kind,
                    action=action.action,
                    params=action.params,
                )
            )
            self.emit("recovery", batch=batch.index + 1, kind=error.kind.value,
                      action=action.action.value)
            if action.action is ActionKind.ABORT:
                stage = "gateway" if error.kind in _GATEWAY_KINDS else "parse"
                raise PipelineAbort(error, stage, note=str(action.params.get("reason", "")))
            attempt.note(action.action)
            if action.action in (ActionKind.RETRY_BACKOFF, ActionKind.WAIT_THEN_RETRY):
                self.sleep(action.params["delay_s"])
            elif action.action is ActionKind.RESPLIT_SMALLER:
                new_budget = action.params["budget"]
                attempt.budget = new_budget
                try:
                    regrouped = replan_items(items, new_budget)
                except BudgetTooSmallError as exc:
                    raise PipelineAbort(error, "gateway", note=str(exc)) from exc
                queue[0:1] = regrouped
                segmented = len(queue) > 1 or segmented
            elif action.action is ActionKind.RECLARIFY_PROMPT:
                prompt_prefix = action.params["clarifier"] + "\n\n"
            elif action.action is ActionKind.REASSERT_FORMAT:
                prompt_suffix = "\n\n" + bundle.output_spec.rstrip("\n") + "\n"
            elif action.action is ActionKind.REINJECT_TAIL:
                tail_items = items[-action.params["tail_count"]:]
        self.emit("batch_done", batch=batch.index + 1, total=self.total)
        return tables

    def _attempt(
        self,
        prompt: str,
        payload: str,
        batch_index: int,
        label: str,
        tables: list[ThemeTable],
        bundle: PromptBundle,
    ) -> GatewayError | None:
        """One submission; appends a table on success, else returns the error."""
        max_completion = min(
            self.budget.completion_reserve,
            self.budget.context_limit - estimate_tokens(prompt) - estimate_tokens(payload),
        )
        if max_completion < MIN_COMPLETION_TOKENS:
            return GatewayError(
                ErrorKind.TOKEN_LIMIT,
                "request leaves too little room for the reply",
                {"synthetic": True},
            )
        request = LlmRequest(
            prompt=prompt,
            payload=payload,
            model_id=self.model_id,
            temperature=self.temperature,
            max_completion_tokens=max_completion,
            context_limit=self.budget.context_limit,
        )
        result = submit(request, self.backend, batch_index=batch_index)
        if isinstance(result, GatewayError):
            return result
        parsed = parse_theme_table(result.text, self.config.theme_count)
        if isinstance(parsed, GatewayError):
            return parsed
        table = replace(
            parsed,
            source_batch=batch_index,
            model_id=self.model_id,
            preset_version=bundle.preset_version,
            temperature=self.temperature,
        )
        verify_quotes(table, self.dataset)
        table = recount_participants(table, self.dataset)
        tables.append(table)
        self._exchanges.append(TranscriptExchange(label=label, prompt=prompt, response=result.text))
        return None
