"""Trading-day clock for a two-session exchange day (09:30-11:30, 13:00-15:00)."""

from __future__ import annotations

from dataclasses import dataclass

MORNING_OPEN = 9 * 3600 + 30 * 60
MORNING_CLOSE = 11 * 3600 + 30 * 60
AFTERNOON_OPEN = 13 * 3600
AFTERNOON_CLOSE = 15 * 3600

DAY_SECONDS = 14400
HALF_DAY = 7200


class OutOfSession(ValueError):
    """Timestamp lies outside both continuous-auction sessions."""


@dataclass(frozen=True)
class DayClock:
    sessions: tuple[tuple[int, int], ...] = (
        (MORNING_OPEN, MORNING_CLOSE),
        (AFTERNOON_OPEN, AFTERNOON_CLOSE),
    )
    day_seconds: int = DAY_SECONDS

    def in_session(self, seconds: int) -> bool:
        return any(lo <= seconds <= hi for lo, hi in self.sessions)

    def trading_seconds(self, seconds: float) -> float:
        """Seconds of trading elapsed since the open; the midday break is skipped."""
        elapsed = 0.0
        for lo, hi in self.sessions:
            if lo <= seconds <= hi:
                return elapsed + (seconds - lo)
            elapsed += hi - lo
        raise OutOfSession(f"{format_time(int(seconds))} is outside the trading sessions")

    def normalize(self, seconds: float) -> float:
        return self.trading_seconds(seconds) / self.day_seconds

    def second_index(self, seconds: int) -> int:
        """Index of the one-second grid cell holding `seconds`.

        Each session owns its own cells, so the closing instant of a session
        falls into that session's last cell rather than the next session's first.
        """
        start = 0
        for lo, hi in self.sessions:
            if lo <= seconds <= hi:
                return start + min(seconds - lo, hi - lo - 1)
            start += hi - lo
        raise OutOfSession(f"{format_time(seconds)} is outside the trading sessions")

    def wall_time(self, trading_second: int) -> int:
        """Inverse of `second_index` for cell starts."""
        elapsed = 0
        for lo, hi in self.sessions:
            if trading_second < elapsed + (hi - lo):
                return lo + trading_second - elapsed
            elapsed += hi - lo
        if trading_second == elapsed:
            return self.sessions[-1][1]
        raise OutOfSession(f"trading second {trading_second} is past the close")


CLOCK = DayClock()


def normalize_time(seconds: float) -> float:
    """Map an intraday wall-clock time (seconds after midnight) to t/D in [0, 1]."""
    return CLOCK.normalize(seconds)


def parse_time(text: str) -> int:
    hh, mm, ss = text.split(":")
    if len(hh) != 2 or len(mm) != 2 or len(ss) != 2:
        raise ValueError(f"bad time {text!r}")
    h, m, s = int(hh), int(mm), int(ss)
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ValueError(f"bad time {text!r}")
    return h * 3600 + m * 60 + s


def format_time(seconds: int) -> str:
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"
