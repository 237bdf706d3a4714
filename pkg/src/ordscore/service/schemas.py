"""Request and response bodies for the HTTP service."""
from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

Verb = Literal["generate", "train", "predict", "evaluate", "run"]


class JobRequest(BaseModel):
    """A pipeline verb.  ``config`` (inline) takes precedence over ``config_path``."""

    model_config = ConfigDict(extra="forbid")

    config: Optional[dict[str, Any]] = None
    config_path: Optional[str] = None
    seed: Optional[int] = None
    out: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.config is None and self.config_path is None:
            raise ValueError("either config or config_path is required")
        return self


class JobResponse(BaseModel):
    verb: Verb
    out: str
    config_hash: str
    master_seed: int
    stages: list[str]
    files: list[str] = Field(default_factory=list, description="paths relative to out")


class CompareRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reports: list[str] = Field(min_length=1)
    out: Optional[str] = None


class GridModel(BaseModel):
    metric: str
    names: list[str]
    p_values: list[list[Optional[float]]]
    significant: list[list[bool]]
    alpha: float
    n_pairs: int


class CompareResponse(BaseModel):
    grids: dict[str, GridModel]
    out: Optional[str] = None


class ScoreRequest(BaseModel):
    """Score raw feature rows with a saved checkpoint.

    ``mc_passes`` > 0 switches to MC-dropout inference with the checkpoint's
    dropout rate.
    """

    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    features: list[list[float]] = Field(min_length=1)
    mc_passes: int = Field(0, ge=0)
    seed: int = 0


class ScoreResponse(BaseModel):
    model: str
    head: str
    score: list[float]
    derived_class: list[int]
    score_std: Optional[list[float]] = None


class MetricSummary(BaseModel):
    mean: float
    ci_low: float
    ci_high: float
    point: float


class MetricReport(BaseModel):
    model: str
    metrics: dict[str, MetricSummary]


class ErrorBody(BaseModel):
    kind: str
    message: str
    exit_code: int
    stage: Optional[str] = None
