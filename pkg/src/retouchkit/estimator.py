"""Scikit-learn style wrappers so retouching composes with pipelines.

``ReferenceRetoucher.fit`` runs the iterative loop against reference images
and learns a reusable retouching program; ``transform`` replays it on any
image at any resolution. ``ProgramTransformer`` applies an existing program.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .agents import RuleAgents
from .filters import execute_program
from .image import ImageBuffer
from .programs import RetouchProgram, load_program
from .scoring import StatsProvider
from .session import SessionConfig, run_session


def check_image(x) -> ImageBuffer:
    """Coerce an ImageBuffer, float array in [0, 1], or uint8 array."""
    if isinstance(x, ImageBuffer):
        return x
    arr = np.asarray(x)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return ImageBuffer.from_array(arr.astype(np.float32) / 255.0)
    arr = arr.astype(np.float32)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("float image values must lie in [0, 1]")
    return ImageBuffer(data=arr)


def check_image_list(X) -> list:
    if isinstance(X, (ImageBuffer, np.ndarray)):
        return [check_image(X)]
    return [check_image(x) for x in X]


class ProgramTransformer(TransformerMixin, BaseEstimator):
    """Apply a fixed retouching program to every input image."""

    def __init__(self, program=None):
        self.program = program

    def _resolved(self) -> RetouchProgram:
        if self.program is None:
            return RetouchProgram()
        if isinstance(self.program, RetouchProgram):
            return self.program
        return load_program(self.program)

    def fit(self, X, y=None):
        self._resolved()
        return self

    def transform(self, X):
        program = self._resolved()
        images = check_image_list(X)
        out = [execute_program(img, program) for img in images]
        return out[0] if isinstance(X, (ImageBuffer, np.ndarray)) else out


class ReferenceRetoucher(TransformerMixin, BaseEstimator):
    """Learn a retouching program that moves an image toward a reference style.

    Parameters mirror the session configuration; ``provider`` and ``agents``
    default to the offline deterministic implementations.
    """

    def __init__(
        self,
        max_iters: int = 10,
        n_candidates: int = 3,
        score: str = "clip_kl_global",
        warm_start: bool = True,
        provider=None,
        agents=None,
    ):
        self.max_iters = max_iters
        self.n_candidates = n_candidates
        self.score = score
        self.warm_start = warm_start
        self.provider = provider
        self.agents = agents

    def fit(self, X, y=None):
        """Run the retouching loop; X is the source image, y the references."""
        if y is None:
            raise ValueError("reference images are required (pass them as y)")
        source = check_image(X)
        refs = check_image_list(y)
        config = SessionConfig(
            max_iters=self.max_iters,
            n_candidates=self.n_candidates,
            score=self.score,
            warm_start=self.warm_start,
            n_refs=len(refs),
        )
        provider = self.provider if self.provider is not None else StatsProvider()
        agents = self.agents if self.agents is not None else RuleAgents()
        final, state, program = run_session(source, refs, config, agents, provider)
        self.program_ = program
        self.final_image_ = final
        self.state_ = state
        self.n_iterations_ = len(state.history)
        return self

    def transform(self, X):
        if not hasattr(self, "program_"):
            raise ValueError("this ReferenceRetoucher is not fitted yet")
        images = check_image_list(X)
        out = [execute_program(img, self.program_) for img in images]
        return out[0] if isinstance(X, (ImageBuffer, np.ndarray)) else out
