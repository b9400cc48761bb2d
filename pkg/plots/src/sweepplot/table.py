"""Parsing and validation of sweep CSVs.

The expected payload is the experiment runner's sweep schema: `#`-prefixed
comment lines carrying the resolved configuration, one exact header row, and
one data row per (cell, episode). Any deviation from the column schema is
rejected rather than guessed at.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EXPECTED_HEADER = "env,loss,gamma,n_samples,param,seed,episode_cost,success,failed"


class SchemaError(ValueError):
    """The CSV does not match the sweep schema."""


@dataclass
class SweepTable:
    env: np.ndarray           # str
    loss: np.ndarray          # str
    gamma: np.ndarray         # float
    n_samples: np.ndarray     # int
    param: np.ndarray         # float
    seed: np.ndarray          # uint64
    episode_cost: np.ndarray  # float
    success: np.ndarray       # bool
    failed: np.ndarray        # bool
    comments: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.gamma.shape[0]

    def without_failures(self) -> "SweepTable":
        keep = ~self.failed
        return SweepTable(
            env=self.env[keep],
            loss=self.loss[keep],
            gamma=self.gamma[keep],
            n_samples=self.n_samples[keep],
            param=self.param[keep],
            seed=self.seed[keep],
            episode_cost=self.episode_cost[keep],
            success=self.success[keep],
            failed=self.failed[keep],
            comments=self.comments,
        )

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())


def parse_sweep_csv(text: str) -> SweepTable:
    comments = []
    header = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        if header is None:
            header = line
            if header != EXPECTED_HEADER:
                raise SchemaError(
                    f"line {lineno}: header {header!r} does not match the sweep schema"
                )
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise SchemaError(f"line {lineno}: expected 9 columns, got {len(parts)}")
        rows.append(parts)
    if header is None:
        raise SchemaError("no header row found")

    def col(i):
        return [r[i] for r in rows]

    try:
        return SweepTable(
            env=np.array(col(0), dtype=object),
            loss=np.array(col(1), dtype=object),
            gamma=np.array(col(2), dtype=np.float64),
            n_samples=np.array(col(3), dtype=np.int64),
            param=np.array(col(4), dtype=np.float64),
            seed=np.array(col(5), dtype=np.uint64),
            episode_cost=np.array(col(6), dtype=np.float64),
            success=np.array(col(7), dtype=np.int64).astype(bool),
            failed=np.array(col(8), dtype=np.int64).astype(bool),
            comments=comments,
        )
    except ValueError as exc:
        raise SchemaError(f"malformed data row: {exc}") from exc


def load_sweep_csv(path) -> SweepTable:
    with open(path, encoding="utf-8") as fh:
        return parse_sweep_csv(fh.read())
