"""Python access to the melodica core library."""

import json as _json

from ._melodica import (
    MelodicaError,
    detect,
    evaluate_dir,
    extract_features,
    forward_kinematics,
    inverse_kinematics,
    judge,
    levenshtein,
    likelihood,
    note_frequency,
    read_wav,
    replay_log,
    synth_eda,
    synthesize,
    write_wav,
)
from ._melodica import run_session as _run_session

__all__ = [
    "MelodicaError",
    "detect",
    "evaluate_dir",
    "extract_features",
    "forward_kinematics",
    "inverse_kinematics",
    "judge",
    "levenshtein",
    "likelihood",
    "note_frequency",
    "read_wav",
    "replay_log",
    "run_session",
    "synth_eda",
    "synthesize",
    "write_wav",
]


def run_session(kind, persona="perfect", seed=0, participant="P1"):
    """Run a scripted session; returns (jsonl log, summary dict)."""
    log, summary = _run_session(kind, persona, seed, participant)
    return log, _json.loads(summary)
