"""Manifest parsing, subject filtering, variant labelling and data splits."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)


class SoundCategory(str, enum.Enum):
    """The nine recorded sound types, in report-column order."""

    BREATHING_DEEP = "breathing-deep"
    BREATHING_SHALLOW = "breathing-shallow"
    COUGH_HEAVY = "cough-heavy"
    COUGH_SHALLOW = "cough-shallow"
    COUNTING_FAST = "counting-fast"
    COUNTING_NORMAL = "counting-normal"
    VOWEL_A = "vowel-a"
    VOWEL_E = "vowel-e"
    VOWEL_O = "vowel-o"


SOUND_CATEGORIES: tuple[SoundCategory, ...] = tuple(SoundCategory)


class Category(str, enum.Enum):
    HEALTHY = "healthy"
    POSITIVE = "positive"  # COVID-19 positive, variant not yet assigned
    DELTA = "delta"
    OMICRON = "omicron"
    OTHER = "other"  # any manifest category we do not analyse


class Severity(str, enum.Enum):
    ASYMPTOMATIC = "asymptomatic"
    MILD = "mild"
    MODERATE = "moderate"


SYMPTOMS: tuple[str, ...] = (
    "cough",
    "fever",
    "sore-throat",
    "muscle-pain",
    "loss-of-smell",
    "breathing-difficulty",
    "diarrhea",
    "cold",
    "fatigue",
)

GENDERS = ("male", "female", "other")

REQUIRED_COLUMNS: tuple[str, ...] = (
    "subject_id",
    "category",
    "age",
    "gender",
    "country",
    "severity",
    "symptoms",
    "record_date",
    "quality_ok",
) + tuple(s.value for s in SOUND_CATEGORIES)

DEFAULT_VARIANT_CUTOFF = dt.date(2021, 12, 1)


class ManifestError(ValueError):
    """The manifest as a whole cannot be read (bad header, bad encoding)."""


class VariantAssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    category: Category
    age: int
    gender: str
    country: str
    severity: Severity | None
    symptoms: frozenset[str]
    record_timestamp: dt.date | None
    quality_ok: bool
    sound_paths: Mapping[SoundCategory, Path] = field(default_factory=dict)

    @property
    def is_positive(self) -> bool:
        return self.category in (Category.POSITIVE, Category.DELTA, Category.OMICRON)


@dataclass(frozen=True)
class RowError:
    row: int  # 1-based line number in the file, header is line 1
    message: str


@dataclass(frozen=True)
class FilterConfig:
    country: str | None = "India"
    min_age: int = 15
    max_age: int = 90
    require_quality: bool = True
    require_all_sounds: bool = True
    categories: frozenset[Category] = frozenset(
        {Category.HEALTHY, Category.POSITIVE, Category.DELTA, Category.OMICRON}
    )


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y", "t"):
        return True
    if t in ("0", "false", "no", "n", "f", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_row(row: Mapping[str, str], base: Path) -> SubjectRecord:
    subject_id = row["subject_id"].strip()
    if not subject_id:
        raise ValueError("empty subject_id")

    cat_text = row["category"].strip().lower()
    try:
        category = Category(cat_text)
    except ValueError:
        category = Category.OTHER

    try:
        age = int(row["age"].strip())
    except ValueError:
        raise ValueError(f"age is not an integer: {row['age']!r}") from None

    gender = row["gender"].strip().lower()
    if gender not in GENDERS:
        raise ValueError(f"unknown gender {row['gender']!r}")

    sev_text = row["severity"].strip().lower()
    severity = Severity(sev_text) if sev_text else None
    if category in (Category.POSITIVE, Category.DELTA, Category.OMICRON) and severity is None:
        raise ValueError("positive subject without severity")
    if category is Category.HEALTHY and severity is not None:
        raise ValueError("healthy subject with a severity grade")

    tags = frozenset(t.strip().lower() for t in row["symptoms"].split(";") if t.strip())
    unknown = tags - set(SYMPTOMS)
    if unknown:
        raise ValueError(f"unknown symptom tags {sorted(unknown)}")

    date_text = row["record_date"].strip()
    try:
        timestamp = dt.date.fromisoformat(date_text) if date_text else None
    except ValueError:
        raise ValueError(f"unparseable record_date {date_text!r}") from None

    paths = {}
    for sc in SOUND_CATEGORIES:
        p = row[sc.value].strip()
        if p:
            paths[sc] = base / p

    return SubjectRecord(
        subject_id=subject_id,
        category=category,
        age=age,
        gender=gender,
        country=row["country"].strip(),
        severity=severity,
        symptoms=tags,
        record_timestamp=timestamp,
        quality_ok=_parse_bool(row["quality_ok"]),
        sound_paths=paths,
    )


def load_manifest(path: str | Path) -> tuple[list[SubjectRecord], list[RowError]]:
    """Read a manifest CSV.

    Sound paths are resolved relative to the manifest's directory. Rows that
    fail to parse are reported in the second return value with their line
    number; they never abort the load.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent

    records: list[SubjectRecord] = []
    errors: list[RowError] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: missing header")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"{path}: missing required columns {missing}")
        seen: set[str] = set()
        for row in reader:
            lineno = reader.line_num
            if None in row.values():
                errors.append(RowError(lineno, "too few fields"))
                continue
            try:
                rec = _parse_row(row, base)
            except (ValueError, KeyError) as exc:
                errors.append(RowError(lineno, str(exc)))
                continue
            if rec.subject_id in seen:
                errors.append(RowError(lineno, f"duplicate subject_id {rec.subject_id!r}"))
                continue
            seen.add(rec.subject_id)
            records.append(rec)
    if errors:
        log.warning("%s: %d malformed rows", path, len(errors))
    return records, errors


def filter_subjects(records: Iterable[SubjectRecord], rules: FilterConfig = FilterConfig()) -> list[SubjectRecord]:
    out = []
    for r in records:
        if rules.require_quality and not r.quality_ok:
            continue
        if rules.require_all_sounds and len(r.sound_paths) != len(SOUND_CATEGORIES):
            continue
        if rules.country is not None and r.country.strip().lower() != rules.country.lower():
            continue
        if not rules.min_age <= r.age <= rules.max_age:
            continue
        if r.category not in rules.categories:
            continue
        out.append(r)
    return out


def assign_variant(record: SubjectRecord, cutoff: dt.date = DEFAULT_VARIANT_CUTOFF) -> Category:
    """Variant proxy from the contribution date: Delta before ``cutoff``, Omicron from it on."""
    if not record.is_positive:
        raise VariantAssignmentError(f"{record.subject_id}: not a positive subject")
    if record.record_timestamp is None:
        raise VariantAssignmentError(f"{record.subject_id}: no record date")
    return Category.DELTA if record.record_timestamp < cutoff else Category.OMICRON


def label_variants(records: Iterable[SubjectRecord], cutoff: dt.date = DEFAULT_VARIANT_CUTOFF) -> list[SubjectRecord]:
    """Replace the POSITIVE category of each positive subject with its variant."""
    out = []
    for r in records:
        if r.category is Category.POSITIVE:
            r = replace(r, category=assign_variant(r, cutoff))
        out.append(r)
    return out


# -- splits -----------------------------------------------------------------

TEST_SEED = 0
DEFAULT_RATIOS = (0.65, 0.15, 0.20)


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]

    def as_dict(self) -> dict[str, list[str]]:
        return {"train": sorted(self.train), "val": sorted(self.val), "test": sorted(self.test)}

    def part_of(self, subject_id: str) -> str:
        for name in ("train", "val", "test"):
            if subject_id in getattr(self, name):
                return name
        raise KeyError(subject_id)


def _stratum(r: SubjectRecord) -> tuple[str, str]:
    return (r.category.value, r.severity.value if r.severity else "")


def _split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    return n_train, n_val, n - n_train - n_val


def make_splits(
    records: Iterable[SubjectRecord],
    seed: int,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
) -> SplitAssignment:
    """Stratified train/val/test assignment.

    Each (category, severity) stratum is split on its own and the pieces are
    unioned. The test subset is drawn with the reserved ``TEST_SEED`` so it
    does not move when ``seed`` changes; ``seed`` only shuffles the remainder
    between train and val.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot split an empty subject pool")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")

    strata: dict[tuple[str, str], list[str]] = defaultdict(list)
    for r in records:
        strata[_stratum(r)].append(r.subject_id)

    test_rng = np.random.default_rng(TEST_SEED)
    tv_rng = np.random.default_rng([seed, 1])
    train: set[str] = set()
    val: set[str] = set()
    test: set[str] = set()
    for key in sorted(strata):
        ids = sorted(strata[key])
        if len(ids) < 3:
            log.warning("stratum %s has only %d subjects; split by rounding alone", key, len(ids))
        n_train, n_val, n_test = _split_counts(len(ids), ratios)
        order = test_rng.permutation(len(ids))
        test.update(ids[i] for i in order[:n_test])
        rest = [ids[i] for i in sorted(order[n_test:])]
        order = tv_rng.permutation(len(rest))
        train.update(rest[i] for i in order[:n_train])
        val.update(rest[i] for i in order[n_train:])
    return SplitAssignment(seed, frozenset(train), frozenset(val), frozenset(test))


def write_splits(splits: Iterable[SplitAssignment], path: str | Path) -> None:
    payload = {str(s.seed): s.as_dict() for s in splits}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def read_splits(path: str | Path) -> list[SplitAssignment]:
    payload = json.loads(Path(path).read_text())
    return [
        SplitAssignment(int(k), frozenset(v["train"]), frozenset(v["val"]), frozenset(v["test"]))
        for k, v in sorted(payload.items(), key=lambda kv: int(kv[0]))
    ]


# -- odds ratios ------------------------------------------------------------


@dataclass(frozen=True)
class OddsRatio:
    """2x2 symptom-by-class table.

    a: symptom and target, b: symptom and not target,
    c: no symptom and target, d: no symptom and not target.
    """

    a: int
    b: int
    c: int
    d: int

    @property
    def value(self) -> float:
        """(a*d)/(b*c); +inf when only the denominator vanishes, nan when both do."""
        num = self.a * self.d
        den = self.b * self.c
        if den == 0:
            return math.nan if num == 0 else math.inf
        return num / den

    @property
    def flag(self) -> str:
        if self.b * self.c != 0:
            return ""
        return "degenerate" if self.a * self.d == 0 else "infinite"

    def flipped(self) -> "OddsRatio":
        """Same table with symptom presence and absence swapped."""
        return OddsRatio(self.c, self.d, self.a, self.b)


OddsRatioTable = dict  # symptom tag -> OddsRatio


def odds_ratios(
    records: Iterable[SubjectRecord],
    target: Callable[[SubjectRecord], bool],
    symptoms: Iterable[str] = SYMPTOMS,
) -> dict[str, OddsRatio]:
    records = list(records)
    if not records:
        raise ValueError("odds ratios need a non-empty population")
    table = {}
    for s in symptoms:
        cnt = Counter((s in r.symptoms, bool(target(r))) for r in records)
        table[s] = OddsRatio(cnt[True, True], cnt[True, False], cnt[False, True], cnt[False, False])
    return table


def write_odds_ratios(table: Mapping[str, OddsRatio], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["symptom", "a", "b", "c", "d", "odds_ratio"])
        for s, t in table.items():
            w.writerow([s, t.a, t.b, t.c, t.d, repr(t.value)])


def metadata_tables(records: Iterable[SubjectRecord]) -> dict[str, dict[str, dict[str, int]]]:
    """Per-category counts of subjects, genders and severities."""
    records = list(records)
    by_cat: dict[str, list[SubjectRecord]] = defaultdict(list)
    for r in records:
        by_cat[r.category.value].append(r)
    return {
        "subjects": {k: len(v) for k, v in sorted(by_cat.items())},
        "gender": {k: dict(sorted(Counter(r.gender for r in v).items())) for k, v in sorted(by_cat.items())},
        "severity": {
            k: dict(sorted(Counter(r.severity.value for r in v if r.severity).items()))
            for k, v in sorted(by_cat.items())
            if k != Category.HEALTHY.value
        },
    }


def write_manifest(records: Iterable[SubjectRecord], path: str | Path) -> None:
    """Inverse of :func:`load_manifest`; sound paths are written relative to ``path``'s directory."""
    path = Path(path)
    base = path.parent.resolve()
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for r in records:
            sounds = []
            for sc in SOUND_CATEGORIES:
                p = r.sound_paths.get(sc)
                if p is None:
                    sounds.append("")
                else:
                    p = Path(p).resolve()
                    try:
                        sounds.append(p.relative_to(base).as_posix())
                    except ValueError:
                        sounds.append(str(p))
            w.writerow(
                [
                    r.subject_id,
                    r.category.value,
                    r.age,
                    r.gender,
                    r.country,
                    r.severity.value if r.severity else "",
                    ";".join(sorted(r.symptoms)),
                    r.record_timestamp.isoformat() if r.record_timestamp else "",
                    "1" if r.quality_ok else "0",
                    *sounds,
                ]
            )
