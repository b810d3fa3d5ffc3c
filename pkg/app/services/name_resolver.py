import logging
from typing import Dict, Iterable, Optional

from thefuzz import fuzz, process

from app.core.errors import UnsupportedMetric, UsageError
from app.core.metrics import MetricKind
from app.storage.predictions import CSV, JSONL

DEFAULT_THRESHOLD = 80


class NameResolver:
    """
    Maps loosely typed user input (aliases, typos, odd casing) onto canonical names.
    Exact aliases win; otherwise the closest alias above the similarity threshold.
    Similarity is whole-string edit distance: "confusion" does not match "conf".
    """
    def __init__(self, aliases: Dict[str, str]):
        self._aliases = {alias.lower(): canonical for alias, canonical in aliases.items()}

    @property
    def choices(self) -> Iterable[str]:
        return sorted(set(self._aliases.values()))

    def get_best_match(self, query: str, threshold: int = DEFAULT_THRESHOLD) -> Optional[str]:
        """
        Find the canonical name for a query.

        Args:
            query: the name as typed by the user
            threshold: minimum similarity score (0-100) to accept a fuzzy match

        Returns:
            The canonical name if found above threshold, None otherwise
        """
        key = query.strip().lower()
        if key in self._aliases:
            return self._aliases[key]
        match = process.extractOne(key, list(self._aliases), scorer=fuzz.ratio)
        if match and match[1] >= threshold:
            logging.info(f"Resolved '{query}' to '{self._aliases[match[0]]}' (score {match[1]})")
            return self._aliases[match[0]]
        return None


def suggest(query: str, choices: Iterable[str], threshold: int = 60) -> Optional[str]:
    """Closest choice for a 'did you mean' hint."""
    match = process.extractOne(query, list(choices))
    if match and match[1] >= threshold:
        return match[0]
    return None


metric_resolver = NameResolver(
    {
        "correctness": MetricKind.CORRECTNESS.value,
        "corr": MetricKind.CORRECTNESS.value,
        "correct": MetricKind.CORRECTNESS.value,
        "confidence": MetricKind.CONFIDENCE.value,
        "conf": MetricKind.CONFIDENCE.value,
        "entropy": MetricKind.ENTROPY.value,
        "entr": MetricKind.ENTROPY.value,
        "modified_entropy": MetricKind.MODIFIED_ENTROPY.value,
        "modified-entropy": MetricKind.MODIFIED_ENTROPY.value,
        "modified entropy": MetricKind.MODIFIED_ENTROPY.value,
        "mentr": MetricKind.MODIFIED_ENTROPY.value,
    }
)

format_resolver = NameResolver({"csv": CSV, "jsonl": JSONL, "ndjson": JSONL, "json lines": JSONL})


def resolve_metric(name: str) -> MetricKind:
    canonical = metric_resolver.get_best_match(name)
    if canonical is None:
        hint = suggest(name, metric_resolver.choices)
        raise UnsupportedMetric(
            f"unknown metric '{name}'"
            + (f"; did you mean '{hint}'?" if hint else "")
            + f" (expected one of {', '.join(metric_resolver.choices)})"
        )
    return MetricKind(canonical)


def resolve_format(name: Optional[str]) -> Optional[str]:
    if name is None:
        return None
    canonical = format_resolver.get_best_match(name)
    if canonical is None:
        raise UsageError(f"unknown format '{name}', expected one of {', '.join(format_resolver.choices)}")
    return canonical
