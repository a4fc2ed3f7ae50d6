"""Run configuration: chat backend selection, budget, debugger, timeouts.

Defaults pin the loop at 75 iterations, temperature 0.0, and a $1.00 cost
ceiling. Config files are JSON with nested sections (backend, budget,
debugger, timeouts, context); credentials may be overridden through the
SANREPAIR_API_KEY / SANREPAIR_ENDPOINT / SANREPAIR_MODEL environment
variables so they never need to live on disk.
"""

import dataclasses
import json
import os
from decimal import Decimal, InvalidOperation
from typing import Optional, Tuple

from .errors import ManifestError
from .oracle import Budget, HttpBackend, PriceTable, ScriptedBackend

DEFAULT_MAX_ITERATIONS = 75
DEFAULT_TEMPERATURE = Decimal("0.0")
DEFAULT_MAX_COST_USD = Decimal("1.00")

ENV_API_KEY = "SANREPAIR_API_KEY"
ENV_ENDPOINT = "SANREPAIR_ENDPOINT"
ENV_MODEL = "SANREPAIR_MODEL"

BACKEND_KINDS = ("scripted", "http")
DEBUGGER_BACKENDS = ("forward", "replay", "fake")


@dataclasses.dataclass
class Config:
    backend_kind: str = "scripted"
    transcript_path: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key: Optional[str] = None
    price_table: dict = dataclasses.field(default_factory=dict)

    max_iterations: int = DEFAULT_MAX_ITERATIONS
    temperature: Decimal = DEFAULT_TEMPERATURE
    max_cost_usd: Decimal = DEFAULT_MAX_COST_USD

    debugger_backend: str = "forward"
    fake_script: Optional[str] = None
    passthrough: Tuple[str, ...] = ()
    debugger_output_cap: int = 64 * 1024
    recording_root: Optional[str] = None

    command_timeout: float = 30.0
    run_timeout: float = 120.0
    build_timeout: float = 600.0
    poc_timeout: float = 120.0
    tests_timeout: float = 600.0

    inline_cap: Optional[int] = None
    max_frames: int = 12
    feedback_distillation: str = "mechanical"
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.backend_kind not in BACKEND_KINDS:
            raise ManifestError(f"config: backend kind must be one of {BACKEND_KINDS}")
        if self.debugger_backend not in DEBUGGER_BACKENDS:
            raise ManifestError(
                f"config: debugger backend must be one of {DEBUGGER_BACKENDS}"
            )
        if self.feedback_distillation not in ("mechanical", "llm"):
            raise ManifestError("config: feedback_distillation must be mechanical or llm")

    def make_budget(self) -> Budget:
        return Budget(
            max_iterations=self.max_iterations,
            max_cost_usd=self.max_cost_usd,
            temperature=self.temperature,
        )

    def make_backend(self):
        if self.backend_kind == "scripted":
            if not self.transcript_path:
                raise ManifestError("config: scripted backend needs a transcript path")
            if not os.path.isfile(self.transcript_path):
                raise ManifestError(
                    f"config: transcript does not exist: {self.transcript_path}"
                )
            return ScriptedBackend.from_file(self.transcript_path)
        if not self.endpoint or not self.model:
            raise ManifestError("config: http backend needs an endpoint and a model")
        return HttpBackend(
            base_url=self.endpoint,
            model=self.model,
            api_key=self.api_key,
            price_table=PriceTable.from_mapping(self.price_table) if self.price_table else None,
        )


def _decimal(value, field: str) -> Decimal:
    try:
        return Decimal(str(value))
    except InvalidOperation as exc:
        raise ManifestError(f"config: {field} is not a number: {value!r}") from exc


def load_config(path: Optional[str] = None, env=os.environ) -> Config:
    """Build a Config from an optional JSON file plus env credential overrides."""
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ManifestError(f"config: cannot read {path}: {exc}") from exc
        except ValueError as exc:
            raise ManifestError(f"config: {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ManifestError("config: top level must be a JSON object")
    base = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()

    def resolve(value):
        if value is None:
            return None
        return value if os.path.isabs(value) else os.path.join(base, value)

    backend = doc.get("backend", {})
    budget = doc.get("budget", {})
    debugger = doc.get("debugger", {})
    timeouts = doc.get("timeouts", {})
    context = doc.get("context", {})
    for name, section in (("backend", backend), ("budget", budget),
                          ("debugger", debugger), ("timeouts", timeouts),
                          ("context", context)):
        if not isinstance(section, dict):
            raise ManifestError(f"config: section '{name}' must be an object")

    cfg = Config(
        backend_kind=backend.get("kind", "scripted"),
        transcript_path=resolve(backend.get("transcript")),
        endpoint=env.get(ENV_ENDPOINT) or backend.get("endpoint"),
        model=env.get(ENV_MODEL) or backend.get("model"),
        api_key=env.get(ENV_API_KEY) or backend.get("api_key"),
        price_table=backend.get("price_table", {}),
        max_iterations=int(budget.get("max_iterations", DEFAULT_MAX_ITERATIONS)),
        temperature=_decimal(budget.get("temperature", DEFAULT_TEMPERATURE), "temperature"),
        max_cost_usd=_decimal(budget.get("max_cost_usd", DEFAULT_MAX_COST_USD), "max_cost_usd"),
        debugger_backend=debugger.get("backend", "forward"),
        fake_script=resolve(debugger.get("fake_script")),
        passthrough=tuple(debugger.get("passthrough", ())),
        debugger_output_cap=int(debugger.get("output_cap", 64 * 1024)),
        recording_root=resolve(debugger.get("recording_root")),
        command_timeout=float(timeouts.get("command", 30.0)),
        run_timeout=float(timeouts.get("run", 120.0)),
        build_timeout=float(timeouts.get("build", 600.0)),
        poc_timeout=float(timeouts.get("poc", 120.0)),
        tests_timeout=float(timeouts.get("tests", 600.0)),
        inline_cap=context.get("inline_cap"),
        max_frames=int(context.get("max_frames", 12)),
        feedback_distillation=doc.get("feedback_distillation", "mechanical"),
        output_dir=resolve(doc.get("output_dir")),
    )
    return cfg


@dataclasses.dataclass
class RuntimeConfig:
    """Per-task bundle the repair loop consumes: live backend + fresh budget."""

    backend: object
    budget: Budget
    output_dir: Optional[str]
    debugger_backend: str
    fake_script: Optional[str]
    passthrough: Tuple[str, ...]
    debugger_output_cap: int
    recording_root: Optional[str]
    command_timeout: float
    run_timeout: float
    build_timeout: float
    poc_timeout: float
    tests_timeout: float
    inline_cap: Optional[int]
    max_frames: int
    feedback_distillation: str


def runtime_for_task(cfg: Config, output_dir: Optional[str] = None) -> RuntimeConfig:
    return RuntimeConfig(
        backend=cfg.make_backend(),
        budget=cfg.make_budget(),
        output_dir=output_dir or cfg.output_dir,
        debugger_backend=cfg.debugger_backend,
        fake_script=cfg.fake_script,
        passthrough=cfg.passthrough,
        debugger_output_cap=cfg.debugger_output_cap,
        recording_root=cfg.recording_root,
        command_timeout=cfg.command_timeout,
        run_timeout=cfg.run_timeout,
        build_timeout=cfg.build_timeout,
        poc_timeout=cfg.poc_timeout,
        tests_timeout=cfg.tests_timeout,
        inline_cap=cfg.inline_cap,
        max_frames=cfg.max_frames,
        feedback_distillation=cfg.feedback_distillation,
    )
