"""Style selection scores: prompt distributions, KL selection, and the
histogram / Gram-matrix alternatives.
"""
from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

import cv2
import numpy as np
import requests

from .errors import (
    BackendError,
    EmptyReferenceSetError,
    InvalidDistributionError,
    ShapeMismatchError,
)
from .image import ImageBuffer, ImageStats, compute_stats

GLOBAL_PROMPT_STRINGS = (
    "a dark light photo",
    "a bright light photo",
    "a low-contrast photo",
    "a high-contrast photo",
    "a desaturated colours photo",
    "a vivid colours photo",
    "a cool-toned photo",
    "a warm-toned photo",
)

LOCAL_PROMPT_STRINGS = (
    "a photo with dim highlights",
    "a photo with bright highlights",
    "a photo with dark shadows",
    "a photo with bright shadows",
    "a smooth photo",
    "a sharp photo",
)


@dataclass(frozen=True)
class PromptSet:
    """Fixed ordered style prompts; kind is "global" (K=8) or "all" (K=14)."""

    kind: str
    prompts: tuple

    def __len__(self) -> int:
        return len(self.prompts)


GLOBAL_PROMPTS = PromptSet("global", GLOBAL_PROMPT_STRINGS)
ALL_PROMPTS = PromptSet("all", GLOBAL_PROMPT_STRINGS + LOCAL_PROMPT_STRINGS)


def prompt_set_for(kind: str) -> PromptSet:
    if kind == "global":
        return GLOBAL_PROMPTS
    if kind == "all":
        return ALL_PROMPTS
    raise ValueError(f"unknown prompt set kind {kind!r}")


@dataclass(frozen=True)
class PromptDistribution:
    """Strictly positive probabilities over the K prompts, summing to 1."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        validate_distribution(probs)


def validate_distribution(probs: np.ndarray) -> None:
    if probs.ndim != 1 or probs.size < 1:
        raise InvalidDistributionError(f"expected a K-vector, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)) or np.any(probs <= 0.0):
        raise InvalidDistributionError("probabilities must be finite and strictly positive")
    if abs(float(probs.sum()) - 1.0) > 1e-9:
        raise InvalidDistributionError(f"probabilities sum to {probs.sum()}, not 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def prompt_distribution(provider, img: ImageBuffer, prompts: PromptSet) -> PromptDistribution:
    """Softmax over the provider's K logits for the image."""
    logits = np.asarray(provider.logits(img, prompts), dtype=np.float64)
    if logits.shape != (len(prompts),):
        raise BackendError(f"provider returned {logits.shape}, expected ({len(prompts)},)")
    return PromptDistribution(softmax(logits))


def reference_distribution(provider, refs, prompts: PromptSet) -> PromptDistribution:
    """Arithmetic mean of the per-reference distributions."""
    refs = list(refs)
    if not refs:
        raise EmptyReferenceSetError("at least one reference image required")
    stacked = np.stack([prompt_distribution(provider, ref, prompts).probs for ref in refs])
    return PromptDistribution(stacked.mean(axis=0))


def kl_selection_score(cand: PromptDistribution, refbar: PromptDistribution) -> float:
    """KL divergence of the candidate's distribution from the references'."""
    p, q = cand.probs, refbar.probs
    if p.shape != q.shape:
        raise InvalidDistributionError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return float(np.sum(p * (np.log(p) - np.log(q))))


def select_best(provider, candidates, refs, prompts: PromptSet) -> int:
    """Index of the candidate whose distribution is KL-closest to the references.

    Candidate 0 is the current source; ties go to the lowest index so a tie
    keeps the source instead of churning.
    """
    refbar = reference_distribution(provider, refs, prompts)
    scores = [
        kl_selection_score(prompt_distribution(provider, cand, prompts), refbar)
        for cand in candidates
    ]
    return int(np.argmin(scores))


class StatsProvider:
    """Deterministic distribution provider driven by image statistics.

    Each contrasting prompt pair gets logits (-s, +s) with s = 6 * (stat - 0.5),
    where stat is a [0, 1] quantity monotone in what the pair names. Enables
    closed-loop tests without any embedding model.
    """

    def logits(self, img: ImageBuffer, prompts: PromptSet) -> np.ndarray:
        return self.logits_from_stats(compute_stats(img), prompts)

    @staticmethod
    def logits_from_stats(stats: ImageStats, prompts: PromptSet) -> np.ndarray:
        pair_stats = [
            stats.pixel_mean,
            min(1.0, 2.0 * stats.pixel_std),
            stats.sat_mean,
            min(1.0, max(0.0, 0.5 + stats.mean_r - stats.mean_b)),
        ]
        if prompts.kind == "all":
            pair_stats += [
                stats.p10_high,
                stats.p10_low,
                min(1.0, 2.0 * np.sqrt(stats.laplacian_variance)),
            ]
        logits = np.empty(2 * len(pair_stats))
        for i, stat in enumerate(pair_stats):
            s = 6.0 * (stat - 0.5)
            logits[2 * i] = -s
            logits[2 * i + 1] = s
        return logits


def encode_embedding(vec: np.ndarray) -> bytes:
    """Wire format: uint32 little-endian length, then float32 LE values."""
    vec = np.asarray(vec, dtype="<f4")
    return struct.pack("<I", vec.size) + vec.tobytes()


def decode_embedding(payload: bytes) -> np.ndarray:
    if len(payload) < 4:
        raise BackendError("embedding response shorter than its length prefix")
    (count,) = struct.unpack("<I", payload[:4])
    body = payload[4:]
    if len(body) != 4 * count:
        raise BackendError(f"embedding response carries {len(body)} bytes, expected {4 * count}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64)


class EmbeddingProvider:
    """Joint image-text embedding backend reached over HTTP.

    POSTs PNG bytes (image/png) or UTF-8 text (text/plain) to the endpoint and
    expects a length-prefixed float32 vector back. Text embeddings are cached;
    queries are serialized for thread safety.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._session = requests.Session()
        self._text_cache = {}
        self._lock = threading.Lock()

    def _post(self, body: bytes, content_type: str) -> np.ndarray:
        try:
            resp = self._session.post(
                self.endpoint,
                data=body,
                headers={"Content-Type": content_type},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendError(f"embedding backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"embedding backend returned HTTP {resp.status_code}")
        return decode_embedding(resp.content)

    def embed_image(self, img: ImageBuffer) -> np.ndarray:
        codes = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
        ok, encoded = cv2.imencode(".png", codes[:, :, ::-1])
        if not ok:
            raise BackendError("could not encode image for the embedding backend")
        with self._lock:
            return self._post(encoded.tobytes(), "image/png")

    def embed_text(self, text: str) -> np.ndarray:
        with self._lock:
            if text not in self._text_cache:
                self._text_cache[text] = self._post(
                    text.encode("utf-8"), "text/plain; charset=utf-8"
                )
            return self._text_cache[text]

    def logits(self, img: ImageBuffer, prompts: PromptSet) -> np.ndarray:
        image_vec = self.embed_image(img)
        text_matrix = np.stack([self.embed_text(p) for p in prompts.prompts])
        if text_matrix.shape[1] != image_vec.shape[0]:
            raise BackendError(
                f"embedding dimensions disagree: image {image_vec.shape[0]}, "
                f"text {text_matrix.shape[1]}"
            )
        return text_matrix @ image_vec


HIST_BINS = 64

# BT.601 analog YUV; U/V bin ranges are the channel extremes.
_YUV_RANGES = ((0.0, 1.0), (-0.436, 0.436), (-0.615, 0.615))


def _yuv_channels(img: ImageBuffer):
    r = img.data[:, :, 0].astype(np.float64)
    g = img.data[:, :, 1].astype(np.float64)
    b = img.data[:, :, 2].astype(np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = 0.492 * (b - y)
    v = 0.877 * (r - y)
    return (y, u, v)


def _channel_histogram(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    hist, _ = np.histogram(values, bins=HIST_BINS, range=(lo, hi))
    return hist.astype(np.float64) / values.size


def hist_distance(a: ImageBuffer, b: ImageBuffer, space: str = "rgb") -> float:
    """Sum over channels of the L1 distance between 64-bin normalized histograms.

    Sizes may differ; histograms are normalized per image. YUV uses separate
    Y, U, and V channels.
    """
    if space == "rgb":
        chans_a = [a.data[:, :, c] for c in range(3)]
        chans_b = [b.data[:, :, c] for c in range(3)]
        ranges = ((0.0, 1.0),) * 3
    elif space == "yuv":
        chans_a = _yuv_channels(a)
        chans_b = _yuv_channels(b)
        ranges = _YUV_RANGES
    else:
        raise ValueError(f"unknown color space {space!r}")
    total = 0.0
    for ca, cb, (lo, hi) in zip(chans_a, chans_b, ranges):
        total += float(
            np.abs(_channel_histogram(ca, lo, hi) - _channel_histogram(cb, lo, hi)).sum()
        )
    return total


def hist_distance_to_refs(candidate: ImageBuffer, refs, space: str = "rgb") -> float:
    """Mean histogram distance from the candidate to each reference."""
    refs = list(refs)
    if not refs:
        raise EmptyReferenceSetError("at least one reference image required")
    return float(np.mean([hist_distance(candidate, ref, space) for ref in refs]))


def _gram(feat: np.ndarray) -> np.ndarray:
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 2:
        raise ShapeMismatchError(f"feature map must be C x (H*W), got shape {feat.shape}")
    c, hw = feat.shape
    return (feat @ feat.T) / (c * hw)


def gram_distance(feats_a, feats_b) -> float:
    """Sum over layers of the squared Frobenius distance between Gram matrices.

    Feature extraction is the caller's concern; each entry is a C x (H*W)
    array and the two lists must align layer by layer in channel count.
    """
    feats_a, feats_b = list(feats_a), list(feats_b)
    if len(feats_a) != len(feats_b):
        raise ShapeMismatchError(f"layer count mismatch: {len(feats_a)} vs {len(feats_b)}")
    total = 0.0
    for fa, fb in zip(feats_a, feats_b):
        ga, gb = _gram(fa), _gram(fb)
        if ga.shape != gb.shape:
            raise ShapeMismatchError(f"channel mismatch: {ga.shape} vs {gb.shape}")
        total += float(((ga - gb) ** 2).sum())
    return total
