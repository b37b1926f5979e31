"""Comparison-table rendering for aggregated results.

Rows are architectures, columns are CR plus either per-bottleneck mean
utilizations (routing) or the failure rate (junction). Metrics that do
not exist for a row, such as utilization averages when no run converged,
render as "-". A machine-readable payload accompanies the text and
round-trips through ``parse_tables``.
"""

import json

from .errors import ConfigError
from .harness import AggregateMetrics

ABSENT = "-"


def _fmt(value, percent=False) -> str:
    if value is None:
        return ABSENT
    if percent:
        return f"{100 * value:.2f}%"
    return f"{value:.3f}"


def render_tables(aggregates) -> tuple[str, str]:
    """Render a list of AggregateMetrics; returns (text, json payload)."""
    aggregates = list(aggregates)
    if not aggregates:
        raise ConfigError("no aggregates to render")

    link_ids = sorted({lid for a in aggregates if a.mlu for lid in a.mlu})
    has_fr = any(a.fr is not None for a in aggregates)
    columns = ["architecture", "CR"]
    columns += [f"MLU_{lid}" for lid in link_ids]
    if link_ids:
        columns.append("gap")
    if has_fr:
        columns.append("FR")

    rows = []
    for agg in aggregates:
        row = [agg.architecture, _fmt(agg.cr)]
        for lid in link_ids:
            row.append(_fmt(agg.mlu.get(lid) if agg.mlu else None))
        if link_ids:
            row.append(_fmt(agg.oracle_gap))
        if has_fr:
            row.append(_fmt(agg.fr, percent=True))
        rows.append(row)

    widths = [max(len(columns[i]), *(len(r[i]) for r in rows)) for i in range(len(columns))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    text = "\n".join(lines) + "\n"

    payload = json.dumps({
        "env": aggregates[0].env,
        "aggregates": [a.to_dict() for a in aggregates],
    }, indent=2, sort_keys=True)
    return text, payload


def parse_tables(payload: str) -> list[AggregateMetrics]:
    """Inverse of the machine-readable half of ``render_tables``."""
    try:
        doc = json.loads(payload)
        return [AggregateMetrics(**entry) for entry in doc["aggregates"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"not a results payload: {exc}") from None
