"""Normal/Suspicious classification from a stream of per-interval verdicts."""
from __future__ import annotations

from typing import Sequence

from .model import Health, HealthState, HealthVerdict, VerdictReason


def health_transition(
    current: HealthState,
    verdict: HealthVerdict,
    history: Sequence[HealthVerdict],
    recovery_window_r: int = 3,
) -> HealthState:
    """Apply one verdict to the health state machine.

    *history* holds the verdicts that preceded this one, oldest first; the
    current verdict is passed separately. Any unavailable or incorrect verdict
    flips to Suspicious in one step. Recovery requires the last
    ``recovery_window_r`` verdicts (including this one) to all be clean.
    ``since_ms`` moves only when the state actually changes; ``last_reason``
    keeps the most recent cause while Suspicious.
    """
    if recovery_window_r < 1:
        raise ValueError("recovery_window_r must be >= 1")

    if not verdict.clean:
        if current.state is Health.Suspicious:
            return HealthState(Health.Suspicious, current.since_ms, verdict.reason)
        return HealthState(Health.Suspicious, verdict.evaluated_at_ms, verdict.reason)

    if current.state is Health.Normal:
        return current

    tail = list(history[-(recovery_window_r - 1):]) if recovery_window_r > 1 else []
    if len(tail) == recovery_window_r - 1 and all(v.clean for v in tail):
        return HealthState(Health.Normal, verdict.evaluated_at_ms, VerdictReason.ok)
    return current
