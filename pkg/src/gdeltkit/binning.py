"""Equal-width and equal-frequency discretisation of numeric variables.

A fitted :class:`BinSet` stores ``edges`` ``e0 < e1 < ... < eL`` where ``e0``
is the fitted minimum and ``eL`` the fitted maximum.  Bin ``k`` (1-based) is
``[e(k-1), ek)``; the last bin is closed.  Index 0 is reserved for missing
values.  Values outside the fitted range clamp to the first or last bin.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Any, Iterable

EQUAL_WIDTH = "equal_width"
EQUAL_FREQUENCY = "equal_frequency"
_METHOD_ALIASES = {
    "width": EQUAL_WIDTH,
    "equal_width": EQUAL_WIDTH,
    "equal_interval": EQUAL_WIDTH,
    "freq": EQUAL_FREQUENCY,
    "frequency": EQUAL_FREQUENCY,
    "equal_frequency": EQUAL_FREQUENCY,
}


def canonical_method(method: str) -> str:
    try:
        return _METHOD_ALIASES[method]
    except KeyError:
        raise ValueError(f"unknown bin method {method!r}") from None


def is_missing(value: Any) -> bool:
    if value is None or value == "":
        return True
    return isinstance(value, float) and math.isnan(value)


def _as_float(value: Any) -> float:
    if isinstance(value, bool):
        raise TypeError(f"boolean is not numeric: {value!r}")
    x = float(value)
    if not math.isfinite(x):
        raise ValueError(f"non-finite numeric value {value!r}")
    return x


@dataclass(frozen=True)
class BinSet:
    variable: str
    method: str
    requested_bins: int
    edges: tuple[float, ...]
    fitted_on: int

    @property
    def effective_bins(self) -> int:
        return max(len(self.edges) - 1, 1)

    @property
    def shrunk(self) -> bool:
        return self.effective_bins < self.requested_bins

    @property
    def boundaries(self) -> tuple[float, ...]:
        """Upper edges b1..bL of the effective bins."""
        return self.edges[1:]

    def interval(self, k: int) -> tuple[float, float]:
        if not 1 <= k <= self.effective_bins:
            raise IndexError(k)
        if len(self.edges) == 2 and self.edges[0] == self.edges[1]:
            return self.edges[0], self.edges[1]
        return self.edges[k - 1], self.edges[k]

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "method": self.method,
            "requested_bins": self.requested_bins,
            "effective_bins": self.effective_bins,
            "edges": list(self.edges),
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinSet":
        return cls(d["variable"], d["method"], d["requested_bins"], tuple(d["edges"]), d["fitted_on"])


def fit_values(values: Iterable[Any], method: str, n_bins: int, variable: str = "") -> BinSet:
    """Fit ``n_bins`` bins on the non-missing ``values``.

    Equal-width bins split [min, max] evenly.  Equal-frequency interior edges
    sit at the sorted values of rank ``floor(i * n / n_bins)``.  Edges that
    coincide (ties, constant data) are collapsed, so the effective bin count
    can be smaller than requested.
    """
    method = canonical_method(method)
    if n_bins < 1:
        raise ValueError(f"{variable or 'variable'}: bin count must be >= 1, got {n_bins}")
    xs = sorted(_as_float(v) for v in values if not is_missing(v))
    if not xs:
        raise ValueError(f"{variable or 'variable'}: no non-missing values to fit bins on")
    lo, hi = xs[0], xs[-1]
    n = len(xs)

    if method == EQUAL_WIDTH:
        candidates = [lo + (hi - lo) * i / n_bins for i in range(1, n_bins)]
    else:
        candidates = [xs[(i * n) // n_bins] for i in range(1, n_bins)]

    interior: list[float] = []
    for c in candidates:
        if lo < c < hi and (not interior or c > interior[-1]):
            interior.append(c)
    edges = (lo, *interior, hi)
    return BinSet(variable, method, n_bins, edges, n)


def apply_bins(value: Any, bins: BinSet) -> int:
    """Bin index of ``value``: 0 when missing, otherwise 1..effective_bins."""
    if is_missing(value):
        return 0
    x = _as_float(value)
    interior = bins.edges[1:-1]
    return 1 + bisect_right(interior, x)


def bin_label(bins: BinSet, k: int) -> str:
    lo, hi = bins.interval(k)
    closing = "]" if k == bins.effective_bins else ")"
    return f"[{lo:g}, {hi:g}{closing}"

