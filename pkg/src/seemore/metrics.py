"""Run metrics: latency samples, message counters and view-change downtime."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class LatencySample:
    request_id: int
    client: str
    ts: int
    mode: str
    view: int
    submitted: int
    completed: int

    @property
    def latency(self) -> int:
        return self.completed - self.submitted


@dataclass(frozen=True)
class ViewChangeSpan:
    view: int
    start: int
    end: int
    downtime: int | None


@dataclass
class RunMetrics:
    samples: list[LatencySample] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    spans: list[ViewChangeSpan] = field(default_factory=list)
    duration: int = 0

    def record_send(self, kind: str, mode: str) -> None:
        self.counters[(kind, mode)] += 1

    def record_completion(self, client: str, ts: int, mode: str, view: int, submitted: int, completed: int) -> None:
        self.samples.append(LatencySample(len(self.samples) + 1, client, ts, mode, view, submitted, completed))

    @property
    def completed(self) -> int:
        return len(self.samples)

    @property
    def total_messages(self) -> int:
        return sum(self.counters.values())

    @property
    def throughput(self) -> float:
        """Completed requests per simulated time unit."""
        return self.completed / self.duration if self.duration > 0 else 0.0

    def messages_of(self, kind: str) -> int:
        return sum(n for (k, _), n in self.counters.items() if k == kind)

    def latencies(self, mode: str | None = None) -> list[int]:
        return [s.latency for s in self.samples if mode is None or s.mode == mode]


def per_request_message_count(metrics: RunMetrics) -> float:
    """Network sends per completed request, client Request and every Reply included."""
    if metrics.completed == 0:
        return 0
    total = metrics.total_messages
    return total // metrics.completed if total % metrics.completed == 0 else total / metrics.completed


def phase_latency(metrics: RunMetrics, mode: str | None = None) -> int:
    """Worst client-observed latency among samples of ``mode``."""
    values = metrics.latencies(mode)
    return max(values) if values else 0


def view_change_spans(starts: list[tuple[int, int]], installs: list[tuple[int, int]], completions: list[int]) -> list[ViewChangeSpan]:
    """Pair view-change starts with the first installation of the view that ended them.

    ``starts`` and ``installs`` hold (view, time); ``completions`` holds client
    completion times. Downtime is the gap between the last completion before
    the span and the first completion after it.
    """
    first_install: dict[int, int] = {}
    for view, t in installs:
        if view > 0 and (view not in first_install or t < first_install[view]):
            first_install[view] = t
    done = sorted(completions)
    spans = []
    previous_end = -1
    for view in sorted(first_install):
        end = first_install[view]
        window = [t for v, t in starts if v <= view and previous_end <= t <= end]
        start = min(window) if window else end
        before = [t for t in done if t <= start]
        after = [t for t in done if t > end]
        downtime = None
        if after:
            downtime = after[0] - (before[-1] if before else start)
        spans.append(ViewChangeSpan(view, start, end, downtime))
        previous_end = end
    return spans


LATENCY_COLUMNS = ("request_id", "ts", "mode", "view", "latency_sim_ms", "client", "submitted", "completed")
MESSAGE_COLUMNS = ("type", "mode", "count")
VIEW_CHANGE_COLUMNS = ("view", "start", "end", "downtime")


def emit_csv(metrics: RunMetrics, path: str | Path) -> list[Path]:
    """Write the latency, message-counter and view-change tables next to ``path``.

    ``path`` names the latency table; the other two tables get ``_messages``
    and ``_viewchanges`` suffixes on the same stem.
    """
    path = Path(path)
    if path.suffix != ".csv":
        path = path.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    msg_path = path.with_name(path.stem + "_messages.csv")
    vc_path = path.with_name(path.stem + "_viewchanges.csv")

    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(LATENCY_COLUMNS)
        for s in metrics.samples:
            out.writerow((s.request_id, s.ts, s.mode, s.view, s.latency, s.client, s.submitted, s.completed))
    with open(msg_path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(MESSAGE_COLUMNS)
        for (kind, mode), count in sorted(metrics.counters.items()):
            out.writerow((kind, mode, count))
    with open(vc_path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(VIEW_CHANGE_COLUMNS)
        for span in metrics.spans:
            out.writerow((span.view, span.start, span.end, "" if span.downtime is None else span.downtime))
    return [path, msg_path, vc_path]
