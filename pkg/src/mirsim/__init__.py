"""mirsim: an interactive, reversible simulator for the MIR miniature IR."""

from .heap import GuestFault, HeapState, PtrVal, SnapshotRef, canonical_digest
from .machine import Machine, MachineSnapshot, StepEvent
from .mir import (
    CodePtr,
    FrameLayout,
    ParseError,
    ProgramUnit,
    SimulatorError,
    frame_layout,
    instr_at,
    parse_program,
    print_program,
)
from .session import ChoicePending, Session, SessionError, TraceMismatch

__all__ = [
    "CodePtr",
    "ChoicePending",
    "FrameLayout",
    "GuestFault",
    "HeapState",
    "Machine",
    "MachineSnapshot",
    "ParseError",
    "ProgramUnit",
    "PtrVal",
    "Session",
    "SessionError",
    "SimulatorError",
    "SnapshotRef",
    "StepEvent",
    "TraceMismatch",
    "canonical_digest",
    "frame_layout",
    "instr_at",
    "parse_program",
    "print_program",
]

__version__ = "0.1.0"
