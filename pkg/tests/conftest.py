import sys
from pathlib import Path

import numpy as np
from pytest import fixture

SRC = Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from bkcf.domain import BinaryInteractionMatrix  # noqa: E402


def random_binary(rng: np.random.Generator, m: int, n: int, density: float = 0.4) -> np.ndarray:
    return (rng.random((m, n)) < density).astype(np.int64)


@fixture
def toy_matrix() -> BinaryInteractionMatrix:
    # 4 items x 5 users
    return BinaryInteractionMatrix.from_dense(
        [
            [1, 1, 0, 0, 1],
            [1, 0, 1, 0, 0],
            [0, 1, 1, 1, 0],
            [1, 1, 0, 0, 1],
        ]
    )


def write_ratings(path: Path, rows, sep: str = "\t", header: str | None = None) -> Path:
    lines = [header] if header else []
    lines += [sep.join(str(f) for f in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def dense_ratings(users: int, items: int, per_user: int, seed: int = 0) -> list[tuple[str, str, int]]:
    """Every user rates ``per_user`` distinct random items with a positive value."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(users):
        for i in rng.choice(items, size=per_user, replace=False):
            rows.append((f"u{u}", f"i{int(i)}", int(rng.integers(1, 6))))
    return rows
