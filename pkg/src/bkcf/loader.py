from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bkcf.domain import BinaryInteractionMatrix

_log = logging.getLogger(__name__)

FORMATS = ("auto", "triples_tsv", "triples_csv", "triples_dat", "triples_space")

_SEPARATORS = {
    "triples_tsv": "\t",
    "triples_csv": ",",
    "triples_dat": "::",
    "triples_space": None,
}


class DataError(RuntimeError):
    pass


class DataParseError(DataError):
    def __init__(self, path: Path, line_no: int, message: str) -> None:
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class DatasetStats:
    name: str
    users: int
    items: int
    interactions: int
    # Density as printed in the reference table, when it differs from the counts.
    printed_density: float | None = None

    @property
    def density(self) -> float:
        cells = self.users * self.items
        return self.interactions / cells if cells else 0.0

    def compare(self, expected: "DatasetStats") -> dict[str, float]:
        """Relative difference of each count against ``expected``."""

        out: dict[str, float] = {}
        for key in ("users", "items", "interactions"):
            want = getattr(expected, key)
            got = getattr(self, key)
            out[key] = (got - want) / want if want else float(got != want)
        return out


# Reference statistics of the evaluation datasets. BookCrossing and Netflix are
# reduced versions; "1M" / "3.3M" rating counts are rounded in the source table.
CANONICAL_DATASETS: dict[str, DatasetStats] = {
    "movielens": DatasetStats("MovieLens", 6040, 3706, 1_000_209, printed_density=0.0134),
    "bookcrossing": DatasetStats("BookCrossing", 2802, 5892, 70_593, printed_density=0.00004),
    "ciao": DatasetStats("Ciao", 17615, 16121, 72_664, printed_density=0.00025),
    "netflix": DatasetStats("Netflix", 93705, 3561, 3_300_000, printed_density=0.0099),
    "filmtrust": DatasetStats("FilmTrust", 1508, 2071, 35_496, printed_density=0.0113),
    "jester": DatasetStats("Jester", 24430, 100, 1_000_000, printed_density=0.4224),
}


def canonical_dataset(name: str) -> DatasetStats | None:
    key = re.sub(r"[^a-z]", "", str(name).casefold())
    if key.startswith("movielens") or key.startswith("ml"):
        key = "movielens"
    return CANONICAL_DATASETS.get(key)


def _detect_format(line: str) -> str:
    if "::" in line:
        return "triples_dat"
    if "\t" in line:
        return "triples_tsv"
    if "," in line:
        return "triples_csv"
    return "triples_space"


def _split(line: str, fmt: str) -> list[str]:
    sep = _SEPARATORS[fmt]
    parts = line.split() if sep is None else line.split(sep)
    return [p.strip() for p in parts]


def _is_number(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False


def load_interactions(
    path: Path | str,
    format: str = "auto",
    *,
    min_value: float | None = 0.0,
) -> BinaryInteractionMatrix:
    """Read ``user, item[, value[, ...]]`` lines into an items x users binary matrix.

    A pair becomes an interaction when its value is strictly above ``min_value``
    (``None`` keeps every listed pair; two-column lines count as value 1).
    Tokens get dense indices in order of first appearance among kept pairs;
    duplicate pairs collapse. A first line whose value field is not numeric is
    treated as a header, and so is a two-column first line of non-numeric
    tokens followed by a line with numeric user and item ids.
    """

    path = Path(path)
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {', '.join(FORMATS)}")
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    fmt = format
    seen_first = False
    # Two-column first line with non-numeric ids: a header only if the next line has numeric ids.
    pending: tuple[int, list[str]] | None = None
    dropped = 0

    def add(line_no: int, fields: list[str]) -> None:
        nonlocal dropped
        if len(fields) >= 3 and fields[2] != "":
            try:
                value = float(fields[2])
            except ValueError:
                raise DataParseError(path, line_no, f"value {fields[2]!r} is not a number") from None
        else:
            value = 1.0
        if min_value is not None and not value > min_value:
            dropped += 1
            return
        users.append(user_index.setdefault(fields[0], len(user_index)))
        items.append(item_index.setdefault(fields[1], len(item_index)))

    with path.open("r", encoding="utf-8-sig") as fh:
        for line_no, raw_line in enumerate(fh, start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            if fmt == "auto":
                fmt = _detect_format(line)
            fields = _split(line, fmt)
            if len(fields) < 2 or not fields[0] or not fields[1]:
                raise DataParseError(path, line_no, f"expected 'user, item[, value]', got {line!r}")
            has_value = len(fields) >= 3 and fields[2] != ""
            if not seen_first:
                seen_first = True
                if has_value and not _is_number(fields[2]):
                    _log.debug("skipping header line in %s: %r", path, line)
                    continue
                if not has_value and not _is_number(fields[0]) and not _is_number(fields[1]):
                    pending = (line_no, fields)
                    continue
            if pending is not None:
                if _is_number(fields[0]) and _is_number(fields[1]):
                    _log.debug("skipping header line in %s: %r", path, pending[1])
                else:
                    add(*pending)
                pending = None
            add(line_no, fields)
    if pending is not None:
        add(*pending)

    if not users:
        raise DataError(f"no interactions found in {path}")

    X = BinaryInteractionMatrix.from_pairs(
        items,
        users,
        item_count=len(item_index),
        user_count=len(user_index),
        item_labels=tuple(item_index),
        user_labels=tuple(user_index),
    )
    _log.info(
        "loaded %s: %d users, %d items, %d interactions (%.4f%% dense, %d pairs below threshold)",
        path.name,
        X.user_count,
        X.item_count,
        X.interaction_count,
        100.0 * X.density,
        dropped,
    )
    return X


def _rebuild(X: BinaryInteractionMatrix, keep_items: np.ndarray, keep_users: np.ndarray) -> BinaryInteractionMatrix:
    """Restrict ``X`` to boolean masks of items and users, reindexing densely."""

    item_map = np.cumsum(keep_items) - 1
    user_map = np.cumsum(keep_users) - 1
    items, users = X.pairs()
    mask = keep_items[items] & keep_users[users]
    item_labels = tuple(np.asarray(X.item_labels, dtype=object)[keep_items]) if X.item_labels else ()
    user_labels = tuple(np.asarray(X.user_labels, dtype=object)[keep_users]) if X.user_labels else ()
    return BinaryInteractionMatrix.from_pairs(
        item_map[items[mask]],
        user_map[users[mask]],
        item_count=int(keep_items.sum()),
        user_count=int(keep_users.sum()),
        item_labels=item_labels,
        user_labels=user_labels,
    )


def filter_max_ratings(X: BinaryInteractionMatrix, cap: int) -> BinaryInteractionMatrix:
    """Drop users (variables) with strictly more than ``cap`` interactions."""

    if cap < 1:
        raise DataError(f"rating cap must be >= 1, got {cap}")
    degrees = X.user_degrees()
    keep_users = degrees <= cap
    removed = int((~keep_users).sum())
    if removed == 0:
        return X
    _log.info("removed %d users with more than %d ratings", removed, cap)
    return _rebuild(X, np.ones(X.item_count, dtype=bool), keep_users)


def subsample_items(X: BinaryInteractionMatrix, max_items: int, seed: int) -> BinaryInteractionMatrix:
    """Keep a seeded uniform subset of ``max_items`` items; users are kept."""

    if max_items < 1:
        raise DataError(f"item sample size must be >= 1, got {max_items}")
    if X.item_count <= max_items:
        return X
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(X.item_count, size=max_items, replace=False)
    keep_items = np.zeros(X.item_count, dtype=bool)
    keep_items[chosen] = True
    _log.info("subsampled %d of %d items (seed %d)", max_items, X.item_count, seed)
    return _rebuild(X, keep_items, np.ones(X.user_count, dtype=bool))


def dataset_stats(X: BinaryInteractionMatrix, name: str = "") -> DatasetStats:
    return DatasetStats(name=name, users=X.user_count, items=X.item_count, interactions=X.interaction_count)
