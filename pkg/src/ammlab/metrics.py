"""Loss and accuracy accounting for market-maker runs.

The monetary loss of a trade is measured against the hidden external
price at trade time: pnl = (p_eff - p_ext) * dx from the pool's side, so
selling above the true price is profit and buying above it is loss.
Percentage loss normalizes by the trade notional p_ext * |dx|.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import TradeRecord


def trade_pnl(record: TradeRecord, p_ext: float) -> tuple[float, float]:
    """(pnl, notional) of one executed trade versus the hidden price."""
    pnl = (record.p_eff - p_ext) * record.dx
    notional = p_ext * abs(record.dx)
    return pnl, notional


def oracle_rmsd(estimates: np.ndarray, hidden: np.ndarray) -> float:
    """Root mean squared deviation of price recommendations from truth."""
    estimates = np.asarray(estimates, dtype=float)
    hidden = np.asarray(hidden, dtype=float)
    if estimates.shape != hidden.shape or estimates.size == 0:
        raise ValueError("estimate and hidden sequences must have equal nonzero length")
    return float(np.sqrt(np.mean((estimates - hidden) ** 2)))


def reference_mse(kind: str, sigma: float, eta: float, T: int) -> float:
    """Closed-form end-of-block MSE: Kalman tracker vs static curve."""
    if T < 1:
        raise ValueError("need at least one trade per block")
    if kind == "kf":
        return eta**2 * sigma**2 / (T * sigma**2 + eta**2)
    if kind == "static":
        return eta**2
    raise ValueError(f"unknown reference kind {kind!r}")


@dataclass
class LossLedger:
    """Per-trade pnl series for one run, merged associatively across runs."""

    t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    pnl: np.ndarray = field(default_factory=lambda: np.empty(0))
    notional: np.ndarray = field(default_factory=lambda: np.empty(0))
    pct: np.ndarray = field(default_factory=lambda: np.empty(0))

    @classmethod
    def from_arrays(cls, t: np.ndarray, pnl: np.ndarray, notional: np.ndarray) -> "LossLedger":
        pct = np.where(notional > 0, pnl / np.where(notional > 0, notional, 1.0), 0.0)
        return cls(t=np.asarray(t, dtype=np.int64), pnl=np.asarray(pnl, dtype=float),
                   notional=np.asarray(notional, dtype=float), pct=pct)

    @classmethod
    def from_records(cls, records: list[TradeRecord], p_ext: np.ndarray) -> "LossLedger":
        pnl = np.empty(len(records))
        notional = np.empty(len(records))
        t = np.empty(len(records), dtype=np.int64)
        for i, rec in enumerate(records):
            pnl[i], notional[i] = trade_pnl(rec, float(p_ext[i]))
            t[i] = rec.t
        return cls.from_arrays(t, pnl, notional)

    @property
    def trades(self) -> int:
        return int(self.t.size)

    @property
    def cumulative_pnl(self) -> float:
        return float(self.pnl.sum())

    def mean_pct(self, burn_in: int = 0, weighting: str = "trades") -> float:
        """Mean per-trade percentage loss (in percent, positive = profit).

        Zero-notional trades are excluded.  ``weighting="notional"``
        switches to notional-weighted averaging.
        """
        pct = self.pct[burn_in:]
        notional = self.notional[burn_in:]
        live = notional > 0
        if not np.any(live):
            return 0.0
        if weighting == "notional":
            return float(np.average(pct[live], weights=notional[live]) * 100.0)
        if weighting != "trades":
            raise ValueError("weighting must be 'trades' or 'notional'")
        return float(np.mean(pct[live]) * 100.0)

    def se_pct(self, burn_in: int = 0) -> float:
        """Standard error of the mean percentage loss over trades."""
        pct = self.pct[burn_in:]
        live = self.notional[burn_in:] > 0
        n = int(live.sum())
        if n < 2:
            return float("inf")
        return float(np.std(pct[live], ddof=1) / np.sqrt(n) * 100.0)

    def merge(self, other: "LossLedger") -> "LossLedger":
        return LossLedger(
            t=np.concatenate([self.t, other.t]),
            pnl=np.concatenate([self.pnl, other.pnl]),
            notional=np.concatenate([self.notional, other.notional]),
            pct=np.concatenate([self.pct, other.pct]),
        )
