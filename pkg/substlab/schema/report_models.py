from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

Command = Literal["validate", "primitivity", "invariant", "approx", "correlations", "gibbs", "twobody", "simulate"]


class ValidationIssue(BaseModel):
    code: str
    field: Optional[str] = None
    message: str
    severity: Literal["warning", "error"]


class StageEvent(BaseModel):
    """
    Immutable record of one run stage.
    Logged, never written into reports: reports stay byte-identical across runs.
    """
    timestamp: datetime = Field(default_factory=datetime.now)
    stage: Literal["READ", "VALIDATE", "COMPUTE", "EMIT"]
    status: Literal["SUCCESS", "FAILURE"]
    # details must stay flat and serializable
    details: Dict[str, Any] = Field(default_factory=dict)
    error_policy: Literal["ABORT", "CONTINUE"] = "ABORT"


class RunParameters(BaseModel):
    nmax: int = Field(default=4, ge=1)
    tol: float = Field(default=1e-12, gt=0)
    ellmax: int = Field(default=3, ge=0)
    n_list: Tuple[int, ...] = (2, 4, 8, 16)
    seed: int = Field(default=0, ge=0)
    samples: int = Field(default=1000, ge=1)
    window: int = Field(default=2, ge=1)
    budget: int = Field(default=2**26, gt=0)  ## matrix budget
    state_budget: int = Field(default=2**20, gt=0)
    write_samples: bool = False

    @field_validator("n_list")
    @classmethod
    def _check_sites(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("sites must be >= 1")
        return tuple(sorted(set(v)))


class RunManifest(BaseModel):
    model_config = {"frozen": True}

    command: Command
    model_path: Optional[Path] = None
    inline_model: Optional[Dict[str, Any]] = None  ## twobody given on the command line
    out_dir: Path
    parameters: RunParameters = Field(default_factory=RunParameters)

    @model_validator(mode="after")
    def _check_paths(self):
        if self.model_path is None and self.inline_model is None:
            raise ValueError("a model file or an inline model is required")
        if self.out_dir.exists() and not self.out_dir.is_dir():
            raise ValueError(f"output path {self.out_dir} is not a directory")
        return self


class RunResult(BaseModel):
    """
    Final container of a CLI run: audit trail plus artifact paths.
    """
    command: Command
    start_time: datetime
    end_time: Optional[datetime] = None

    status: Literal["success", "error"]
    exit_code: int = 0
    error: Optional[str] = None
    issues: List[ValidationIssue] = Field(default_factory=list)

    # Audit trail: ordered list of events
    events: List[StageEvent] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)

    # model hash, sizes
    raw_metadata: Dict[str, Any] = Field(default_factory=dict)


# ======================================================
# COMPUTATION REPORTS
# ======================================================

class CorrelationEntry(BaseModel):
    n: int
    a: str
    b: str
    joint: float
    marginal_product: float
    ratio: float
    abs_deviation: float


class CorrelationReport(BaseModel):
    entries: List[CorrelationEntry]
    gamma_hat: Optional[float]  ## None with fewer than two usable dyadic points
    gamma_bound: float
    eta: float
    tau: float
    delta: float
    primitivity_index: int
    C_v: float
    C: float
    n0: Optional[int]
    bound_holds: Optional[bool]

    def summary(self) -> Dict[str, Any]:
        return self.model_dump(exclude={"entries"})


class SlidingWitness(BaseModel):
    symbol: str
    p: int  ## run a^{p+1} among the images of a
    q: int  ## every word of length q is an image


class BruteForceVerdict(BaseModel):
    depth: int
    n_max: int
    primitive: bool
    index: Optional[int] = None
    counterexample: Optional[Tuple[str, str]] = None  ## (target prefix, source word)


class PrimitivityReport(BaseModel):
    ms_matrix: List[List[int]]
    ms_primitive: bool
    ms_exponent: Optional[int]
    sliding_symbols: List[SlidingWitness]
    sufficient_verdict: Literal["primitive", "inconclusive"]
    index_formula: Optional[float] = None  ## N + 2n_0 + log_{1+p}(N) for the reported depth, metadata only
    brute_force: Optional[BruteForceVerdict] = None

    @model_validator(mode="after")
    def _check_verdict(self):
        if self.sufficient_verdict == "primitive" and not (self.ms_primitive and self.sliding_symbols):
            raise ValueError("sufficient verdict needs a primitive one-symbol matrix and a sliding symbol")
        return self
