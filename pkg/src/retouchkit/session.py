"""The iterative retouching loop: candidate construction, selection,
stopping rules, history, and the interactive variant.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .agents import CriticRequest
from .errors import AgentFailure, EmptyReferenceSetError, WrongStateError
from .filters import FilterKind, RetouchStep, execute_program
from .image import ImageBuffer, compute_stats, mean_stats, save_image
from .metrics import delta_e, psnr, ssim
from .programs import Overall, RetouchProgram, serialize_program
from .scoring import (
    hist_distance_to_refs,
    kl_selection_score,
    prompt_distribution,
    prompt_set_for,
    reference_distribution,
)

STAGNATION_LIMIT = 3

SCORE_KINDS = ("clip_kl_global", "clip_kl_all", "rgb_hist", "yuv_hist")


class SessionStatus(str, Enum):
    RUNNING = "running"
    STOPPED_CRITIC_STOP = "stopped_critic_stop"
    STOPPED_STAGNATION = "stopped_stagnation"
    STOPPED_BUDGET = "stopped_budget"
    AWAITING_USER = "awaiting_user"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SessionConfig:
    max_iters: int = 10
    n_candidates: int = 3
    n_refs: int = 5
    score: str = "clip_kl_global"
    agent: str = "rule"
    mode: str = "reference"
    warm_start: bool = True
    keep_candidate_images: bool = False
    seed: int | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be at least 1")
        if self.score not in SCORE_KINDS:
            raise ValueError(f"score must be one of {SCORE_KINDS}")
        if self.agent not in ("rule", "chat"):
            raise ValueError("agent must be 'rule' or 'chat'")
        if self.mode not in ("reference", "instruction"):
            raise ValueError("mode must be 'reference' or 'instruction'")

    @property
    def prompt_set_kind(self) -> str:
        return "all" if self.score == "clip_kl_all" else "global"

    def as_dict(self) -> dict:
        return {
            "max_iters": self.max_iters,
            "n_candidates": self.n_candidates,
            "n_refs": self.n_refs,
            "score": self.score,
            "agent": self.agent,
            "mode": self.mode,
            "warm_start": self.warm_start,
            "seed": self.seed,
        }


@dataclass
class IterationRecord:
    """What happened in one loop iteration.

    ``scores`` is ordered like the candidate list, index 0 = source; it is
    empty when the critic stopped/failed and None for user selections.
    ``candidate_programs`` aligns with candidates after the source.
    """

    iteration: int
    descriptions: tuple = ()
    candidate_programs: tuple = ()
    scores: tuple | None = ()
    selected_index: int = 0
    selection_source: str = "score"
    wall_time_ms: float = 0.0
    skipped: bool = False
    candidate_images: tuple | None = None

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "descriptions": [d.as_dict() for d in self.descriptions],
            "programs": [json.loads(serialize_program(p)) for p in self.candidate_programs],
            "scores": list(self.scores) if self.scores is not None else None,
            "selected_index": self.selected_index,
            "selection_source": self.selection_source,
            "wall_time_ms": self.wall_time_ms,
            "skipped": self.skipped,
        }


@dataclass
class SessionState:
    config: SessionConfig
    source: ImageBuffer
    refs: tuple = ()
    original_source: ImageBuffer | None = None
    history: list = field(default_factory=list)
    consecutive_source_selections: int = 0
    status: SessionStatus = SessionStatus.RUNNING
    composed: RetouchProgram = field(default_factory=RetouchProgram)
    pending: list = field(default_factory=list)
    pending_descriptions: list = field(default_factory=list)
    stats_history: list = field(default_factory=list)
    _scorer: object = field(default=None, repr=False, compare=False)
    _ref_stats: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.refs = tuple(self.refs)
        if self.original_source is None:
            self.original_source = self.source

    @property
    def iteration(self) -> int:
        return len(self.history)

    def as_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "status": self.status.value,
            "iterations": [rec.as_dict() for rec in self.history],
            "composed_program": json.loads(serialize_program(self.composed)),
            "consecutive_source_selections": self.consecutive_source_selections,
        }


class KLScorer:
    """Selection score: KL divergence from the mean reference distribution."""

    def __init__(self, provider, refs, prompt_kind: str):
        self.provider = provider
        self.prompts = prompt_set_for(prompt_kind)
        self.refbar = reference_distribution(provider, refs, self.prompts)

    def score(self, img: ImageBuffer) -> float:
        return kl_selection_score(
            prompt_distribution(self.provider, img, self.prompts), self.refbar
        )


class HistScorer:
    """Selection score: mean channel-histogram distance to the references."""

    def __init__(self, refs, space: str):
        self.refs = tuple(refs)
        if not self.refs:
            raise EmptyReferenceSetError("histogram scorer needs reference images")
        self.space = space

    def score(self, img: ImageBuffer) -> float:
        return hist_distance_to_refs(img, self.refs, self.space)


def make_scorer(config: SessionConfig, provider, refs):
    if config.score in ("clip_kl_global", "clip_kl_all"):
        return KLScorer(provider, refs, config.prompt_set_kind)
    return HistScorer(refs, "rgb" if config.score == "rgb_hist" else "yuv")


def _clamp_param(value: float) -> float:
    if math.isnan(value):
        return 0.0
    return max(-1.0, min(1.0, value))


def warm_start_program(source_stats, ref_stats) -> RetouchProgram:
    """Rule-based first-iteration candidate: match mean brightness in stops,
    then mean saturation by ratio. Degenerate statistics are floored.
    """
    mu_src = max(source_stats.pixel_mean, 1e-4)
    mu_ref = max(ref_stats.pixel_mean, 1e-4)
    sat_src = max(source_stats.sat_mean, 1e-4)
    exposure = _clamp_param(math.log2(mu_ref / mu_src))
    saturation = _clamp_param(ref_stats.sat_mean / sat_src - 1.0)
    return RetouchProgram(
        (
            RetouchStep(FilterKind.EXPOSURE, exposure),
            RetouchStep(FilterKind.SATURATION, saturation),
        ),
        provenance="warm-start",
    )


def warm_start_candidate(source: ImageBuffer, refs) -> ImageBuffer:
    refs = list(refs)
    if not refs:
        raise EmptyReferenceSetError("warm start needs reference images")
    program = warm_start_program(compute_stats(source), mean_stats(compute_stats(r) for r in refs))
    return execute_program(source, program)


def _score_summary(source: ImageBuffer, refs) -> dict | None:
    """PSNR/SSIM/dE averaged over the references that share the source's size."""
    if min(source.height, source.width) < 11:  # below the SSIM window
        return None
    same = [r for r in refs if r.data.shape == source.data.shape]
    if not same:
        return None
    return {
        "psnr": float(sum(psnr(source, r) for r in same) / len(same)),
        "ssim": float(sum(ssim(source, r) for r in same) / len(same)),
        "delta_e": float(sum(delta_e(source, r) for r in same) / len(same)),
    }


def _build_critic_request(state: SessionState, ref_stats) -> CriticRequest:
    summary = None
    if state.config.agent == "chat":
        # The rule critic never reads the score block; skip the metric cost.
        summary = _score_summary(state.source, state.refs)
    return CriticRequest(
        source=state.source,
        source_stats=compute_stats(state.source),
        refs=state.refs,
        ref_stats_mean=ref_stats,
        score_summary=summary,
        n_candidates=state.config.n_candidates,
    )


def _finish_iteration(state: SessionState, record: IterationRecord, started: float) -> None:
    record.wall_time_ms = (time.perf_counter() - started) * 1000.0
    state.history.append(record)
    if state.status is not SessionStatus.RUNNING:
        return
    if state.consecutive_source_selections >= STAGNATION_LIMIT:
        state.status = SessionStatus.STOPPED_STAGNATION
    elif len(state.history) >= state.config.max_iters:
        state.status = SessionStatus.STOPPED_BUDGET


def _generate_programs(agents, descriptions, t: int) -> list:
    """One program per Go description, order preserved; a failed generation
    drops that candidate only. Chat backends are queried concurrently.
    """
    tasks = [
        (i, desc) for i, desc in enumerate(descriptions) if desc.overall is not Overall.STOP
    ]
    programs = []
    if getattr(agents, "kind", "") == "chat" and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=len(tasks)) as pool:
            futures = [
                pool.submit(agents.generate, desc, f"adjusted_image_{t}_{i + 1}")
                for i, desc in tasks
            ]
            for future in futures:
                try:
                    programs.append(future.result())
                except AgentFailure:
                    continue
    else:
        for i, desc in tasks:
            try:
                programs.append(agents.generate(desc, f"adjusted_image_{t}_{i + 1}"))
            except AgentFailure:
                continue
    return programs


def run_iteration(state: SessionState, agents, provider) -> SessionState:
    """One pass of the loop: describe, generate, execute, select, update."""
    if state.status is not SessionStatus.RUNNING:
        raise WrongStateError(f"cannot iterate a session in status {state.status}")
    if state.config.mode != "reference":
        raise WrongStateError("automatic iterations run in reference mode only")
    started = time.perf_counter()
    t = state.iteration

    if state._scorer is None:
        state._scorer = make_scorer(state.config, provider, state.refs)
    if state._ref_stats is None:
        state._ref_stats = mean_stats(compute_stats(r) for r in state.refs)
    ref_stats = state._ref_stats

    try:
        descriptions = agents.describe(_build_critic_request(state, ref_stats))
    except AgentFailure:
        # Unusable critic output consumes one budget unit and changes nothing.
        _finish_iteration(state, IterationRecord(iteration=t, skipped=True), started)
        return state

    if all(d.overall is Overall.STOP for d in descriptions):
        state.status = SessionStatus.STOPPED_CRITIC_STOP
        _finish_iteration(
            state, IterationRecord(iteration=t, descriptions=tuple(descriptions)), started
        )
        return state

    programs = _generate_programs(agents, descriptions, t)

    candidates = [state.source]
    candidate_programs = []
    for program in programs:
        candidates.append(execute_program(state.source, program))
        candidate_programs.append(program)
    if t == 0 and state.config.warm_start:
        warm = warm_start_program(compute_stats(state.source), ref_stats)
        candidates.append(execute_program(state.source, warm))
        candidate_programs.append(warm)

    scores = [state._scorer.score(c) for c in candidates]
    selected = min(range(len(scores)), key=lambda i: (scores[i], i))

    if selected == 0:
        state.consecutive_source_selections += 1
    else:
        state.consecutive_source_selections = 0
        state.composed = state.composed.extended(candidate_programs[selected - 1])
        state.source = candidates[selected]

    record = IterationRecord(
        iteration=t,
        descriptions=tuple(descriptions),
        candidate_programs=tuple(candidate_programs),
        scores=tuple(scores),
        selected_index=selected,
        selection_source="score",
        candidate_images=tuple(candidates) if state.config.keep_candidate_images else None,
    )
    _finish_iteration(state, record, started)
    return state


def run_session(source: ImageBuffer, refs, config: SessionConfig, agents, provider):
    """Loop run_iteration until a stop; returns (final image, state, program).

    Replaying the composed program on the original source reproduces the
    final image exactly.
    """
    refs = tuple(refs)
    if not refs:
        raise EmptyReferenceSetError("reference mode needs at least one reference image")
    state = SessionState(config=config, source=source, refs=refs)
    while state.status is SessionStatus.RUNNING:
        run_iteration(state, agents, provider)
    return state.source, state, state.composed


def interactive_step(state: SessionState, instruction: str, agents) -> list:
    """Produce candidates for one user instruction; no automatic selection.

    Returns [(image, program), ...] and leaves the session awaiting a
    user_select call.
    """
    if state.config.mode != "instruction":
        raise WrongStateError("interactive steps require an instruction-mode session")
    if state.status is not SessionStatus.RUNNING:
        raise WrongStateError(f"cannot take an instruction in status {state.status}")

    req = CriticRequest(
        source=state.source,
        source_stats=compute_stats(state.source),
        instruction=instruction,
        history=tuple(state.stats_history),
        n_candidates=state.config.n_candidates,
    )
    descriptions = agents.describe(req)

    pending = []
    pending_descriptions = []
    for i, desc in enumerate(descriptions):
        if desc.overall is Overall.STOP:
            continue
        try:
            program = agents.generate(desc, f"adjusted_image_{state.iteration}_{i + 1}")
        except AgentFailure:
            continue
        pending.append((execute_program(state.source, program), program))
        pending_descriptions.append(desc)
    if not pending:
        raise AgentFailure("no candidate could be generated for this instruction")

    state.pending = pending
    state.pending_descriptions = pending_descriptions
    state.status = SessionStatus.AWAITING_USER
    return pending


def user_select(state: SessionState, index: int) -> SessionState:
    """Commit the user's choice and return to accepting instructions."""
    if state.status is not SessionStatus.AWAITING_USER:
        raise WrongStateError(f"no pending candidates in status {state.status}")
    if not (0 <= index < len(state.pending)):
        raise IndexError(f"candidate index {index} out of range 0..{len(state.pending) - 1}")

    image, program = state.pending[index]
    record = IterationRecord(
        iteration=state.iteration,
        descriptions=tuple(state.pending_descriptions),
        candidate_programs=tuple(p for _, p in state.pending),
        scores=None,
        selected_index=index,
        selection_source="user",
        candidate_images=tuple(img for img, _ in state.pending)
        if state.config.keep_candidate_images
        else None,
    )
    state.history.append(record)
    state.source = image
    state.composed = state.composed.extended(program)
    state.stats_history.append(compute_stats(image))
    state.pending = []
    state.pending_descriptions = []
    state.status = SessionStatus.RUNNING
    return state


def export_session(state: SessionState, directory) -> None:
    """Write final.png, composed .retouch.json, and the session transcript."""
    os.makedirs(directory, exist_ok=True)
    save_image(state.source, os.path.join(directory, "final.png"), depth=state.source.source_depth)
    with open(os.path.join(directory, "program.retouch.json"), "w", encoding="utf-8") as fh:
        fh.write(serialize_program(state.composed))
    with open(os.path.join(directory, "session.json"), "w", encoding="utf-8") as fh:
        json.dump(state.as_dict(), fh, indent=2)
