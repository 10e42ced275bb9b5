"""Prediction interchange files: one JSON line per scenario carrying the K
predicted future trajectories and their scores, in the scenario's normalized
target frame.

The format is shared by the predict, evaluate, ensemble, and plot commands.
"""

import json

import numpy as np

SCHEMA_VERSION = 1

SCORE_SUM_TOL = 1e-6


def save_predictions(path, entries):
    """Write scenario_id -> (trajectories [K x T_f x 2], scores [K]) sorted by
    id.  Floats are emitted with repr, so files round-trip exactly."""
    with open(path, "w") as fh:
        for sid in sorted(entries):
            trajs, scores = entries[sid]
            trajs = np.asarray(trajs, dtype=np.float64)
            scores = np.asarray(scores, dtype=np.float64)
            if trajs.ndim != 3 or trajs.shape[-1] != 2 or trajs.shape[0] != scores.shape[0]:
                raise ValueError(f"{sid}: malformed prediction shapes {trajs.shape}, {scores.shape}")
            record = {
                "version": SCHEMA_VERSION,
                "scenario_id": sid,
                "trajectories": trajs.tolist(),
                "scores": scores.tolist(),
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_predictions(path):
    """Read an interchange file back into {scenario_id: (trajectories, scores)}.

    Validates the schema version, shape consistency across lines, score
    normalization, and finiteness; errors carry the line number.
    """
    entries = {}
    shape = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not valid JSON ({exc})") from None
            if record.get("version") != SCHEMA_VERSION:
                raise ValueError(
                    f"{path}:{lineno}: unsupported version {record.get('version')!r}"
                )
            try:
                sid = record["scenario_id"]
                trajs = np.asarray(record["trajectories"], dtype=np.float64)
                scores = np.asarray(record["scores"], dtype=np.float64)
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
            if sid in entries:
                raise ValueError(f"{path}:{lineno}: duplicate scenario_id {sid!r}")
            if trajs.ndim != 3 or trajs.shape[-1] != 2 or scores.shape != (trajs.shape[0],):
                raise ValueError(f"{path}:{lineno}: bad shapes {trajs.shape}, {scores.shape}")
            if shape is None:
                shape = trajs.shape
            elif trajs.shape != shape:
                raise ValueError(
                    f"{path}:{lineno}: shape {trajs.shape} differs from earlier {shape}"
                )
            if not (np.all(np.isfinite(trajs)) and np.all(np.isfinite(scores))):
                raise ValueError(f"{path}:{lineno}: non-finite values")
            if abs(scores.sum() - 1.0) > SCORE_SUM_TOL or np.any(scores < 0.0):
                raise ValueError(f"{path}:{lineno}: scores are not a probability vector")
            entries[sid] = (trajs, scores)
    return entries
