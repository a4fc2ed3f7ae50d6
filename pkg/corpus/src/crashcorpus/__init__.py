"""Seeded-vulnerability C fixtures with ground-truth patches."""

from crashcorpus.fixtures import (
    DATA_ROOT,
    Fixture,
    FixtureError,
    FixtureReport,
    InvariantResult,
    SourceLocation,
    ToolchainMissing,
    discover,
    fixture_check,
    load,
    materialize,
    require_toolchain,
    stage,
)

__all__ = [
    "DATA_ROOT",
    "Fixture",
    "FixtureError",
    "FixtureReport",
    "InvariantResult",
    "SourceLocation",
    "ToolchainMissing",
    "discover",
    "fixture_check",
    "load",
    "materialize",
    "require_toolchain",
    "stage",
]
