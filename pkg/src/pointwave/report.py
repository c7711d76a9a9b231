"""
Error report of an ε-sweep and its log-log slope fits
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

REPORT_COLUMNS = ["eps", "E_free", "E_eff", "E_free_excl", "E_eff_excl"]
ERROR_COLUMNS = REPORT_COLUMNS[1:]

MIN_FIT_POINTS = 3
CONFIDENCE = 0.95


@dataclass(frozen=True)
class SlopeFit:
    """log E = s·log ε + b with a Student-t confidence interval on s"""
    column: str
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    points: int
    drop_finest_delta: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "column": self.column,
            "slope": self.slope,
            "intercept": self.intercept,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "points": self.points,
            "drop_finest_delta": self.drop_finest_delta,
        }


def _fit(eps: np.ndarray, err: np.ndarray):
    result = stats.linregress(np.log(eps), np.log(err))
    dof = len(eps) - 2
    half = stats.t.ppf(0.5 + CONFIDENCE / 2, dof) * result.stderr if dof > 0 else math.nan
    return result.slope, result.intercept, half


def fit_slope(table: pd.DataFrame, column: str) -> Optional[SlopeFit]:
    """
    Least-squares slope of log E against log ε

    Rows with non-positive error are left out. Returns None with fewer than
    three usable rows. drop_finest_delta is the slope change when the
    smallest ε is removed (NaN when that leaves fewer than two rows).
    """
    usable = table[(table[column] > 0) & np.isfinite(table[column])]
    if len(usable) < MIN_FIT_POINTS:
        return None
    eps = usable["eps"].to_numpy(dtype=float)
    err = usable[column].to_numpy(dtype=float)
    slope, intercept, half = _fit(eps, err)

    keep = eps > eps.min()
    delta = math.nan
    if keep.sum() >= 2:
        delta = _fit(eps[keep], err[keep])[0] - slope

    return SlopeFit(
        column=column,
        slope=float(slope),
        intercept=float(intercept),
        ci_low=float(slope - half),
        ci_high=float(slope + half),
        points=len(usable),
        drop_finest_delta=float(delta),
    )


@dataclass(frozen=True, eq=False)
class ErrorReport:
    """
    Per-ε error norms, sorted by ε descending

    table holds exactly REPORT_COLUMNS; per-run details (T, implied τ, h_g,
    K, timings) go to runs and only ever reach the JSON sidecar.
    """
    table: pd.DataFrame
    runs: List[Dict[str, Any]] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    version: str = ""

    def __post_init__(self):
        table = self.table.reindex(columns=REPORT_COLUMNS).astype(float)
        table = table.sort_values("eps", ascending=False, kind="mergesort").reset_index(drop=True)
        object.__setattr__(self, "table", table)

    @classmethod
    def empty(cls, **kwargs) -> "ErrorReport":
        return cls(pd.DataFrame(columns=REPORT_COLUMNS), **kwargs)

    @classmethod
    def from_rows(cls, rows: List[Dict[str, float]], **kwargs) -> "ErrorReport":
        if not rows:
            return cls.empty(**kwargs)
        return cls(pd.DataFrame(rows)[REPORT_COLUMNS], **kwargs)

    def __len__(self) -> int:
        return len(self.table)

    @property
    def slopes(self) -> Dict[str, Optional[SlopeFit]]:
        return {column: fit_slope(self.table, column) for column in ERROR_COLUMNS}

    def ordering_failures(self, excl: bool = True) -> List[float]:
        """ε values where the effective field is not closer than the free field"""
        free, eff = ("E_free_excl", "E_eff_excl") if excl else ("E_free", "E_eff")
        bad = self.table[~(self.table[eff] < self.table[free])]
        return bad["eps"].tolist()
