from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from bkcf.domain import KernelFamily, KernelSpec, RankerConfig
from bkcf.loader import FORMATS


class ConfigError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    dataset_name: str = ""
    dataset_path: str = "none"
    dataset_format: str = "auto"
    # Binarization threshold (strict >); None keeps every listed pair.
    min_value: float | None = 0.0
    max_user_ratings: int = 0
    max_items: int = 0

    families: list[str] = None  # populated in defaults()
    arities: list[int] = None  # populated in defaults()
    normalized: bool = True

    lambda_p: float = 0.1
    max_iters: int = 1000
    tol: float = 1e-8

    fold_count: int = 5
    seeds: list[int] = None  # populated in defaults()
    top_k: int = 10
    tie_credit: bool = False
    min_train_ratings: int = 5

    out_dir: str = "results"
    write_manifests: bool = True
    memory_budget_gb: float = 8.0
    workers: int = 1

    @staticmethod
    def defaults() -> "ExperimentConfig":
        cfg = ExperimentConfig()
        cfg.families = [f.value for f in KernelFamily]
        cfg.arities = [1, 2, 3, 4, 5]
        cfg.seeds = [42]
        return cfg

    @property
    def dataset_label(self) -> str:
        if self.dataset_name:
            return self.dataset_name
        if self.dataset_path and self.dataset_path.lower() != "none":
            return Path(self.dataset_path).stem
        return "dataset"

    def kernel_families(self) -> list[KernelFamily]:
        out: list[KernelFamily] = []
        for name in self.families or []:
            try:
                family = KernelFamily.parse(name)
            except ValueError:
                raise ConfigError(f"unknown kernel family {name!r}") from None
            if family not in out:
                out.append(family)
        return out

    def kernel_specs(self) -> list[KernelSpec]:
        """One spec per (family, arity); arity-free families contribute one spec each."""

        specs: list[KernelSpec] = []
        for family in self.kernel_families():
            if family.uses_arity:
                specs.extend(KernelSpec(family, d, self.normalized) for d in self.arities or [])
            else:
                specs.append(KernelSpec(family, 1, self.normalized))
        return specs

    def ranker_config(self) -> RankerConfig:
        return RankerConfig(lambda_p=self.lambda_p, max_iters=self.max_iters, tol=self.tol)

    def validate(self) -> None:
        if not self.dataset_path or self.dataset_path.lower() == "none":
            raise ConfigError("no dataset configured: set Path in the [Dataset] section")
        if not Path(self.dataset_path).is_file():
            raise ConfigError(f"dataset file not found: {self.dataset_path}")
        if self.dataset_format not in FORMATS:
            raise ConfigError(f"Format must be one of {', '.join(FORMATS)}, got {self.dataset_format!r}")
        families = self.kernel_families()
        if any(f.uses_arity for f in families) and not self.arities:
            raise ConfigError("Arities is empty but an arity-based kernel family is configured")
        if any(d < 1 for d in self.arities or []):
            raise ConfigError(f"arities must be >= 1, got {self.arities}")
        if self.max_user_ratings < 0 or self.max_items < 0:
            raise ConfigError("MaxUserRatings and MaxItems must be >= 0")
        if self.lambda_p < 0:
            raise ConfigError(f"LambdaP must be >= 0, got {self.lambda_p}")
        if self.max_iters < 1:
            raise ConfigError(f"MaxIters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ConfigError(f"Tol must be > 0, got {self.tol}")
        if self.fold_count < 2:
            raise ConfigError(f"Folds must be >= 2, got {self.fold_count}")
        if not self.seeds:
            raise ConfigError("Seeds is empty")
        if self.top_k < 1:
            raise ConfigError(f"TopK must be >= 1, got {self.top_k}")
        if self.min_train_ratings < 1:
            raise ConfigError(f"MinTrainRatings must be >= 1, got {self.min_train_ratings}")
        if self.workers == 0 or self.workers < -1:
            raise ConfigError(f"Workers must be >= 1 or -1 (all cores), got {self.workers}")
        if not self.memory_budget_gb > 0:
            raise ConfigError(f"MemoryBudgetGB must be > 0, got {self.memory_budget_gb}")

    @staticmethod
    def _to_ini_sections(cfg: "ExperimentConfig") -> dict[str, dict[str, str]]:
        return {
            "Dataset": {
                "Name": cfg.dataset_name or "",
                "Path": cfg.dataset_path or "none",
                "Format": cfg.dataset_format or "auto",
                "MinValue": "none" if cfg.min_value is None else _format_number(cfg.min_value),
                "MaxUserRatings": str(int(cfg.max_user_ratings)),
                "MaxItems": str(int(cfg.max_items)),
            },
            "Kernels": {
                "Families": "|".join(cfg.families or []),
                "Arities": _format_arities(cfg.arities or []),
                "Normalized": "True" if cfg.normalized else "False",
            },
            "Ranker": {
                "LambdaP": _format_number(cfg.lambda_p),
                "MaxIters": str(int(cfg.max_iters)),
                "Tol": _format_number(cfg.tol),
            },
            "Eval": {
                "Folds": str(int(cfg.fold_count)),
                "Seeds": "|".join(str(s) for s in cfg.seeds or []),
                "TopK": str(int(cfg.top_k)),
                "TieCredit": "True" if cfg.tie_credit else "False",
                "MinTrainRatings": str(int(cfg.min_train_ratings)),
            },
            "Output": {
                "Dir": cfg.out_dir or "results",
                "WriteManifests": "True" if cfg.write_manifests else "False",
                "MemoryBudgetGB": _format_number(cfg.memory_budget_gb),
                "Workers": str(int(cfg.workers)),
            },
        }

    @staticmethod
    def _upgrade_ini_if_missing_keys(path: Path, *, defaults: "ExperimentConfig") -> None:
        """Ensure an existing ini contains all known keys.

        Existing lines are kept as they are; missing keys are inserted at the end
        of their section, and missing sections are appended to the file.
        """

        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except Exception:
            return

        lines = text.splitlines()
        present = _read_sections(lines)
        expected = ExperimentConfig._to_ini_sections(defaults)

        # Last line index belonging to each section already in the file.
        section_end: dict[str, int] = {}
        current: str | None = None
        for idx, raw_line in enumerate(lines):
            header = _section_header(raw_line)
            if header is not None:
                current = header
                section_end[current] = idx
            elif current is not None and raw_line.strip():
                section_end[current] = idx

        inserts: list[tuple[int, list[str]]] = []
        appended: list[str] = []
        for section, keys in expected.items():
            missing = [k for k in keys if k not in present.get(section.lower(), {})]
            if not missing:
                continue
            new_lines = [f"{k}={keys[k]}" for k in missing]
            end = next((i for name, i in section_end.items() if name.lower() == section.lower()), None)
            if end is None:
                appended.extend(["", f"[{section}]", *new_lines])
            else:
                inserts.append((end + 1, new_lines))

        if not inserts and not appended:
            return

        for at, new_lines in sorted(inserts, reverse=True):
            lines[at:at] = new_lines
        lines.extend(appended)

        try:
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        except Exception:
            return

    @staticmethod
    def load_or_create(path: Path) -> "ExperimentConfig":
        if not path.exists():
            ExperimentConfig.defaults().save(path)
            return ExperimentConfig.load(path)
        # Upgrade existing ini files by adding any newly-introduced settings.
        defaults = ExperimentConfig.defaults()
        ExperimentConfig._upgrade_ini_if_missing_keys(path, defaults=defaults)
        return ExperimentConfig.load(path)

    @staticmethod
    def load(path: Path) -> "ExperimentConfig":
        cfg = ExperimentConfig.defaults()
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except Exception as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e

        sections = _read_sections(text.splitlines())
        dataset = sections.get("dataset", {})
        kernels = sections.get("kernels", {})
        ranker = sections.get("ranker", {})
        evaluation = sections.get("eval", {})
        output = sections.get("output", {})

        cfg.dataset_name = dataset.get("Name", cfg.dataset_name).strip()
        cfg.dataset_path = dataset.get("Path", cfg.dataset_path).strip() or "none"
        if cfg.dataset_path.lower() != "none" and not Path(cfg.dataset_path).is_absolute():
            # Relative dataset paths are resolved against the config file.
            cfg.dataset_path = str((path.parent / cfg.dataset_path).resolve())
        fmt = (dataset.get("Format", cfg.dataset_format) or "").strip().lower()
        cfg.dataset_format = fmt or "auto"
        cfg.min_value = _parse_optional_float(dataset.get("MinValue"), default=cfg.min_value)
        cfg.max_user_ratings = _parse_int(dataset.get("MaxUserRatings"), default=cfg.max_user_ratings)
        cfg.max_items = _parse_int(dataset.get("MaxItems"), default=cfg.max_items)

        cfg.families = _parse_string_list(kernels.get("Families"), default=cfg.families)
        cfg.arities = _parse_arities(kernels.get("Arities"), default=cfg.arities)
        cfg.normalized = _parse_bool(kernels.get("Normalized"), default=cfg.normalized)

        cfg.lambda_p = _parse_float(ranker.get("LambdaP"), default=cfg.lambda_p)
        cfg.max_iters = _parse_int(ranker.get("MaxIters"), default=cfg.max_iters)
        cfg.tol = _parse_float(ranker.get("Tol"), default=cfg.tol)

        cfg.fold_count = _parse_int(evaluation.get("Folds"), default=cfg.fold_count)
        seeds = _parse_string_list(evaluation.get("Seeds"), default=[str(s) for s in cfg.seeds])
        cfg.seeds = [s for s in (_parse_int(v, default=-1) for v in seeds) if s >= 0]
        cfg.top_k = _parse_int(evaluation.get("TopK"), default=cfg.top_k)
        cfg.tie_credit = _parse_bool(evaluation.get("TieCredit"), default=cfg.tie_credit)
        cfg.min_train_ratings = _parse_int(evaluation.get("MinTrainRatings"), default=cfg.min_train_ratings)

        out_dir = output.get("Dir", cfg.out_dir).strip() or "results"
        if not Path(out_dir).is_absolute():
            out_dir = str((path.parent / out_dir).resolve())
        cfg.out_dir = out_dir
        cfg.write_manifests = _parse_bool(output.get("WriteManifests"), default=cfg.write_manifests)
        cfg.memory_budget_gb = _parse_float(output.get("MemoryBudgetGB"), default=cfg.memory_budget_gb)
        cfg.workers = _parse_int(output.get("Workers"), default=cfg.workers)
        return cfg

    def save(self, path: Path) -> None:
        out: list[str] = []
        for section, kv in ExperimentConfig._to_ini_sections(self).items():
            if out:
                out.append("")
            out.append(f"[{section}]")
            out.extend(f"{k}={v}" for k, v in kv.items())
        path.write_text("\n".join(out) + "\n", encoding="utf-8")


def _section_header(raw_line: str) -> str | None:
    line = raw_line.strip()
    if line.startswith("[") and line.endswith("]"):
        return line[1:-1].strip()
    return None


def _read_sections(lines: list[str]) -> dict[str, dict[str, str]]:
    """Map lowercased section name -> {key: value}; keys before any header are ignored."""

    data: dict[str, dict[str, str]] = {}
    current: str | None = None
    for raw_line in lines:
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("#") or line.startswith(";"):
            continue
        header = _section_header(line)
        if header is not None:
            current = header.lower()
            data.setdefault(current, {})
            continue
        if current is None or "=" not in line:
            continue
        k, v = line.split("=", 1)
        data[current][k.strip()] = v.strip()
    return data


def _format_number(value: float) -> str:
    return repr(float(value)) if float(value) != int(value) else str(int(value))


def _parse_int(value: str | None, *, default: int) -> int:
    if value is None:
        return default
    try:
        return int(value.strip())
    except Exception:
        return default


def _parse_float(value: str | None, *, default: float) -> float:
    if value is None:
        return default
    try:
        return float(value.strip())
    except Exception:
        return default


def _parse_optional_float(value: str | None, *, default: float | None) -> float | None:
    if value is None:
        return default
    v = value.strip().lower()
    if v in {"none", "any", "all"}:
        return None
    return _parse_float(v, default=default if default is not None else 0.0)


def _parse_bool(value: str | None, *, default: bool) -> bool:
    if value is None:
        return default
    v = value.strip().lower()
    if v in {"true", "1", "yes", "y", "on"}:
        return True
    if v in {"false", "0", "no", "n", "off"}:
        return False
    return default


def _parse_string_list(value: str | None, *, default: list[str]) -> list[str]:
    if value is None:
        return list(default)

    raw = value.strip()
    if not raw:
        return []

    # Prefer '|' as a delimiter; fall back to comma.
    parts = raw.split("|") if "|" in raw else raw.split(",")
    out: list[str] = []
    for p in parts:
        s = p.strip()
        if not s:
            continue
        if s not in out:
            out.append(s)
    return out


def _parse_arities(value: str | None, *, default: list[int]) -> list[int]:
    """Parse ``1-5|38`` style arity lists; malformed entries are a config error."""

    if value is None:
        return list(default)
    out: list[int] = []
    for token in _parse_string_list(value, default=[]):
        try:
            if "-" in token:
                lo_s, hi_s = token.split("-", 1)
                lo, hi = int(lo_s), int(hi_s)
                if lo > hi:
                    raise ValueError
                values = range(lo, hi + 1)
            else:
                values = [int(token)]
        except ValueError:
            raise ConfigError(f"invalid arity range {token!r}") from None
        for d in values:
            if d < 1:
                raise ConfigError(f"arities must be >= 1, got {d}")
            if d not in out:
                out.append(d)
    return sorted(out)


def _format_arities(arities: list[int]) -> str:
    """Compress sorted arities into ranges: [1, 2, 3, 38] -> '1-3|38'."""

    values = sorted(set(arities))
    parts: list[str] = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[j + 1] == values[j] + 1:
            j += 1
        parts.append(str(values[i]) if i == j else f"{values[i]}-{values[j]}")
        i = j + 1
    return "|".join(parts)
