"""Visual critic and code generator.

Two interchangeable families behind one interface: chat-backend agents that
talk to a vision/language model over HTTP, and deterministic rule-based
agents that drive the same loop offline from image statistics.
"""
from __future__ import annotations

import base64
import os
import re
from dataclasses import dataclass

import cv2
import numpy as np
import requests

from . import prompts
from .errors import AgentFailure, BackendError, DescriptionParseError, ProgramParseError
from .filters import FilterKind
from .image import ImageBuffer, ImageStats
from .programs import (
    AspectJudgment,
    DifferenceDescription,
    Direction,
    Overall,
    RetouchProgram,
    RetouchStep,
    allowed_ranges,
    containing_range,
    parse_description,
    parse_program,
    render_description,
    shifted_range,
)

CHAT_ENDPOINT_ENV = "RETOUCH_CHAT_ENDPOINT"
API_KEY_ENV = "RETOUCH_API_KEY"

DEFAULT_TEMPERATURES = (0.2, 0.7, 1.0)
MAX_ATTEMPTS = 3


@dataclass(frozen=True)
class AgentBackendConfig:
    """How to reach the chat backend and how hard to retry."""

    endpoint: str
    model: str = "gpt-4o"
    api_key_env: str = API_KEY_ENV
    temperatures: tuple = DEFAULT_TEMPERATURES
    timeout: float = 120.0
    max_image_side: int = 768

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if len(self.temperatures) != 3:
            raise ValueError("exactly 3 retry temperatures required")

    @classmethod
    def from_env(cls, **overrides) -> "AgentBackendConfig":
        endpoint = overrides.pop("endpoint", None) or os.environ.get(CHAT_ENDPOINT_ENV, "")
        return cls(endpoint=endpoint, **overrides)


@dataclass(frozen=True)
class CriticRequest:
    """Everything the critic sees for one iteration."""

    source: ImageBuffer
    source_stats: ImageStats
    refs: tuple = ()
    ref_stats_mean: ImageStats | None = None
    score_summary: dict | None = None
    instruction: str | None = None
    history: tuple = ()
    n_candidates: int = 3

    def __post_init__(self):
        object.__setattr__(self, "refs", tuple(self.refs))
        object.__setattr__(self, "history", tuple(self.history))
        has_refs = len(self.refs) > 0
        has_instruction = self.instruction is not None
        if has_refs == has_instruction:
            raise ValueError("exactly one of reference images or an instruction is required")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be at least 1")


def thumbnail_codes(img: ImageBuffer, max_side: int) -> np.ndarray:
    """8-bit copy for the backend, downscaled so the longest side fits."""
    codes = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    h, w = codes.shape[:2]
    longest = max(h, w)
    if longest > max_side:
        scale = max_side / longest
        codes = cv2.resize(
            codes, (max(1, round(w * scale)), max(1, round(h * scale))),
            interpolation=cv2.INTER_AREA,
        )
    return codes


def _image_data_url(img: ImageBuffer, max_side: int) -> str:
    codes = thumbnail_codes(img, max_side)
    ok, encoded = cv2.imencode(".png", codes[:, :, ::-1])
    if not ok:
        raise BackendError("could not encode image for the chat backend")
    return "data:image/png;base64," + base64.b64encode(encoded.tobytes()).decode("ascii")


class ChatBackend:
    """Minimal chat-completion client: one POST per call, no streaming."""

    def __init__(self, config: AgentBackendConfig):
        self.config = config

    def complete(self, system: str, user_text: str, images=(), temperature: float = 0.2) -> str:
        if images:
            content = [{"type": "text", "text": user_text}]
            for img in images:
                content.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": _image_data_url(img, self.config.max_image_side)},
                    }
                )
        else:
            content = user_text
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": content},
            ],
            "temperature": temperature,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            resp = requests.post(
                self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout
            )
        except requests.RequestException as exc:
            raise BackendError(f"chat backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"chat backend returned HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"chat backend reply not in chat-completion shape: {exc}") from exc


def format_stats(stats: ImageStats) -> str:
    return ", ".join(f"{name} {value:.4g}" for name, value in stats.as_dict().items())


def format_score_summary(summary: dict | None) -> str:
    if not summary:
        return "n/a"
    return (
        f"PSNR: {summary.get('psnr', float('nan')):.2f} dB, "
        f"SSIM: {summary.get('ssim', float('nan')):.4f}, "
        f"LPIPS: n/a, "
        f"Delta E: {summary.get('delta_e', float('nan')):.2f}"
    )


def _range_list_text() -> str:
    return "[" + ", ".join(f"({lo},{hi})" for lo, hi in allowed_ranges()) + "]"


def build_critic_user_prompt(req: CriticRequest) -> str:
    blocks = prompts.candidate_blocks(req.n_candidates)
    if req.instruction is not None:
        history = "\n".join(
            f"Step {i + 1}: {format_stats(s)}" for i, s in enumerate(req.history)
        ) or "(no previous adjustments)"
        return prompts.CRITIC_INSTRUCTION_USER_PROMPT.format(
            n_candidates=req.n_candidates,
            range_list=_range_list_text(),
            instruction=req.instruction,
            source_stats=format_stats(req.source_stats),
            history=history,
            candidate_blocks=blocks,
        )
    return prompts.CRITIC_USER_PROMPT.format(
        n_candidates=req.n_candidates,
        range_list=_range_list_text(),
        source_stats=format_stats(req.source_stats),
        target_stats=format_stats(req.ref_stats_mean) if req.ref_stats_mean else "n/a",
        score_summary=format_score_summary(req.score_summary),
        candidate_blocks=blocks,
    )


_CANDIDATE_MARKER_RE = re.compile(r"^[^\w\n]*candidate\s+(\d+)\b.*$", re.IGNORECASE | re.MULTILINE)


def split_candidate_blocks(text: str) -> list:
    markers = list(_CANDIDATE_MARKER_RE.finditer(text))
    blocks = []
    for i, marker in enumerate(markers):
        end = markers[i + 1].start() if i + 1 < len(markers) else len(text)
        blocks.append(text[marker.end():end])
    return blocks


def _parse_critic_reply(text: str, n_candidates: int) -> list:
    blocks = split_candidate_blocks(text)
    if not blocks:
        # A reply without candidate structure is acceptable only as a stop
        # signal (or when a single candidate was asked for).
        desc = parse_description(text)
        if desc.overall is Overall.STOP or n_candidates == 1:
            return [desc] * n_candidates
        raise DescriptionParseError(f"expected {n_candidates} candidate blocks, found none")
    if len(blocks) < n_candidates:
        raise DescriptionParseError(
            f"expected {n_candidates} candidate blocks, found {len(blocks)}"
        )
    return [parse_description(block) for block in blocks[:n_candidates]]


def critic_describe(backend: ChatBackend, req: CriticRequest) -> list:
    """Ask the chat critic for N difference descriptions, retrying on bad output."""
    user = build_critic_user_prompt(req)
    images = [req.source] + list(req.refs)
    failures = []
    for temperature in backend.config.temperatures[:MAX_ATTEMPTS]:
        text = backend.complete(prompts.CRITIC_SYSTEM_PROMPT, user, images, temperature)
        try:
            return _parse_critic_reply(text, req.n_candidates)
        except DescriptionParseError as exc:
            failures.append(str(exc))
    raise AgentFailure(
        f"critic produced no parseable reply in {MAX_ATTEMPTS} attempts: {failures}",
        attempts=MAX_ATTEMPTS,
    )


def codegen_generate(backend: ChatBackend, desc: DifferenceDescription, save_name: str) -> RetouchProgram:
    """Ask the code generator for a program realizing one description."""
    if desc.overall is Overall.STOP:
        raise ValueError("cannot generate a program for a stop description")
    description_text = desc.raw_text.strip() or render_description(desc)
    user = prompts.CODEGEN_USER_PROMPT.format(
        save_adj_img_name=save_name, description=description_text
    )
    failures = []
    for attempt, temperature in enumerate(backend.config.temperatures[:MAX_ATTEMPTS], start=1):
        text = backend.complete(prompts.CODEGEN_SYSTEM_PROMPT, user, (), temperature)
        try:
            return parse_program(text, provenance=f"{save_name}:attempt={attempt}")
        except ProgramParseError as exc:
            failures.append(str(exc))
    raise AgentFailure(
        f"code generator produced no executable program in {MAX_ATTEMPTS} attempts: {failures}",
        attempts=MAX_ATTEMPTS,
    )


# Statistic each aspect is judged on by the rule critic. Temperature uses the
# signed red-blue mean difference, so its denominator gets a floor.
_TEMPERATURE_DENOM_FLOOR = 0.05
_MIN_PERCENT = 1.0


def _proxy_stat(kind: FilterKind, stats: ImageStats) -> float:
    if kind is FilterKind.EXPOSURE:
        return stats.pixel_mean
    if kind is FilterKind.CONTRAST:
        return stats.pixel_std
    if kind is FilterKind.HIGHLIGHT:
        return stats.p10_high
    if kind is FilterKind.SHADOW:
        return stats.p10_low
    if kind is FilterKind.SATURATION:
        return stats.sat_mean
    if kind is FilterKind.TEMPERATURE:
        return stats.mean_r - stats.mean_b
    return stats.laplacian_variance


_COLOR_PHASE = (FilterKind.SATURATION, FilterKind.TEMPERATURE, FilterKind.TEXTURE)
_BRIGHTNESS_PHASES = (
    FilterKind.EXPOSURE,
    FilterKind.CONTRAST,
    FilterKind.HIGHLIGHT,
    FilterKind.SHADOW,
)


def rule_critic(req: CriticRequest) -> list:
    """Deterministic critic: per-aspect relative statistic differences binned
    into the allowed ranges; candidate i relaxes each range by i-1 positions.

    The last candidate skips straight to the color/texture aspects when
    brightness aspects would otherwise keep the code generator in an earlier
    phase forever: candidates must cover distinct adjustment paths or the
    closed loop can stall on cross-aspect coupling.
    """
    if req.ref_stats_mean is None:
        raise ValueError("rule critic requires reference statistics")
    base = {}
    for kind in FilterKind:
        src = _proxy_stat(kind, req.source_stats)
        ref = _proxy_stat(kind, req.ref_stats_mean)
        floor = _TEMPERATURE_DENOM_FLOOR if kind is FilterKind.TEMPERATURE else 1e-6
        percent = 100.0 * (ref - src) / max(abs(ref), floor)
        if abs(percent) < _MIN_PERCENT:
            base[kind] = None
        else:
            direction = Direction.INCREASE if percent > 0 else Direction.DECREASE
            base[kind] = (direction, containing_range(abs(percent)))

    color_pending = any(base[k] for k in _COLOR_PHASE)
    brightness_pending = any(base[k] for k in _BRIGHTNESS_PHASES)

    descriptions = []
    for i in range(req.n_candidates):
        jump_to_color = (
            i == req.n_candidates - 1
            and req.n_candidates > 1
            and color_pending
            and brightness_pending
        )
        judgments = {}
        for kind, verdict in base.items():
            if verdict is None:
                continue
            if jump_to_color and kind not in _COLOR_PHASE:
                continue
            direction, rng = verdict
            lo, hi = rng if jump_to_color else shifted_range(rng, -i)
            judgments[kind] = AspectJudgment(direction, lo, hi)
        overall = Overall.GO if judgments else Overall.STOP
        desc = DifferenceDescription(judgments, overall)
        descriptions.append(
            DifferenceDescription(desc.judgments, desc.overall, raw_text=render_description(desc))
        )
    return descriptions


_PHASES = (
    (FilterKind.EXPOSURE, FilterKind.CONTRAST),
    (FilterKind.HIGHLIGHT, FilterKind.SHADOW),
    (FilterKind.SATURATION, FilterKind.TEMPERATURE, FilterKind.TEXTURE),
)


def rule_codegen(desc: DifferenceDescription) -> RetouchProgram:
    """Deterministic code generator: first unfinished phase wins, parameters
    are signed range midpoints.
    """
    if desc.overall is Overall.STOP:
        raise ValueError("cannot generate a program for a stop description")
    for phase in _PHASES:
        steps = tuple(
            RetouchStep(kind, desc.judgments[kind].signed_fraction())
            for kind in phase
            if desc.judgments[kind].direction is not Direction.NA
        )
        if steps:
            return RetouchProgram(steps, provenance="rule-codegen")
    return RetouchProgram((), provenance="rule-codegen")


class RuleAgents:
    """Offline deterministic critic + code generator."""

    kind = "rule"

    def describe(self, req: CriticRequest) -> list:
        return rule_critic(req)

    def generate(self, desc: DifferenceDescription, save_name: str) -> RetouchProgram:
        return rule_codegen(desc)


class ChatAgents:
    """Chat-backend critic + code generator sharing one backend config."""

    kind = "chat"

    def __init__(self, config: AgentBackendConfig):
        self.backend = ChatBackend(config)

    def describe(self, req: CriticRequest) -> list:
        return critic_describe(self.backend, req)

    def generate(self, desc: DifferenceDescription, save_name: str) -> RetouchProgram:
        return codegen_generate(self.backend, desc, save_name)
