"""Shared fixtures: deterministic synthetic CSVs for data and CLI tests.

Everything here is seeded; two calls with the same arguments produce
byte-identical files, which the end-to-end determinism test relies on.
"""
from __future__ import annotations

import csv
import datetime as dt

import numpy as np
import pytest


def trading_days(start: str, n: int) -> list[str]:
    """n weekday date strings starting at the first weekday >= start."""
    day = dt.date.fromisoformat(start)
    out: list[str] = []
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += dt.timedelta(days=1)
    return out


# ticker -> (industry_id, drift) covering every classifiable board prefix
FIXTURE_TICKERS = {
    "600519": (12, 0.0004),
    "000001": (45, 0.0002),
    "002230": (45, -0.0001),
    "300750": (7, 0.0006),
    "688111": (7, 0.0),
    "830799": (99, 0.0003),
    "870436": (99, -0.0002),
    "601318": (23, 0.0001),
}


def make_price_rows(n_days: int = 180, seed: int = 1234) -> list[tuple[str, str, str, int]]:
    """Long-format (date, ticker, close, industry_id) rows.

    300750 carries a 2-day interior gap (interpolable) and 688111 an 8-day
    one (forward-filled, counts as a long gap).  Closes are geometric walks.
    """
    dates = trading_days("2021-01-04", n_days)
    rng = np.random.default_rng(seed)
    rows: list[tuple[str, str, str, int]] = []
    for ticker, (industry, drift) in FIXTURE_TICKERS.items():
        steps = drift + 0.015 * rng.standard_normal(n_days)
        closes = 20.0 * np.exp(np.cumsum(steps))
        for i, date in enumerate(dates):
            if ticker == "300750" and 40 <= i < 42:
                close = ""
            elif ticker == "688111" and 80 <= i < 88:
                close = ""
            else:
                close = f"{closes[i]:.4f}"
            rows.append((date, ticker, close, industry))
    return rows


def write_prices_csv(path, n_days: int = 180, seed: int = 1234) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "ticker", "close", "industry_id"])
        writer.writerows(make_price_rows(n_days, seed))


def write_panel_csv(path, n_dates: int = 6, n_tickers: int = 8, seed: int = 77) -> None:
    """Full-grid prediction panel with scores and realized returns."""
    rng = np.random.default_rng(seed)
    dates = trading_days("2022-03-01", n_dates)
    tickers = [f"60{i:04d}" for i in range(n_tickers)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "ticker", "score", "realized_return"])
        for date in dates:
            scores = rng.standard_normal(n_tickers)
            rets = 0.01 * rng.standard_normal(n_tickers)
            for ticker, s, r in zip(tickers, scores, rets):
                writer.writerow([date, ticker, f"{s:.6f}", f"{r:.6f}"])


@pytest.fixture
def prices_csv(tmp_path):
    path = tmp_path / "prices.csv"
    write_prices_csv(path)
    return path


@pytest.fixture
def panel_csv(tmp_path):
    path = tmp_path / "panel.csv"
    write_panel_csv(path)
    return path
