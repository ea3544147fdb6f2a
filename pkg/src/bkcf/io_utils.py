from __future__ import annotations

import csv
import io
import re
from collections.abc import Iterable, Sequence
from pathlib import Path


class OutputError(RuntimeError):
    pass


def slugify(name: str) -> str:
    """File-name friendly lowercase token for a dataset or kernel label."""

    s = re.sub(r"[^0-9a-zA-Z]+", "_", str(name)).strip("_").lower()
    return s or "dataset"


def atomic_write_text(dest: Path, text: str) -> Path:
    """Write ``text`` next to ``dest`` and rename over it, so readers never see a partial file."""

    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_name(dest.name + ".tmp")
    if tmp.exists():
        try:
            tmp.unlink()
        except Exception:
            pass
    try:
        tmp.write_text(text, encoding="utf-8", newline="")
        tmp.replace(dest)
    except OSError as e:
        raise OutputError(f"cannot write {dest}: {e}") from e
    return dest


def write_csv(dest: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """UTF-8 CSV with a header row, ``\\n`` line endings and ``.`` decimals."""

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return atomic_write_text(dest, buf.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def format_float(value: float) -> str:
    return f"{value:.10f}"
