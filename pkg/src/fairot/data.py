"""Tabular dataset loading, legitimate-feature levels and stratified splitting."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInput, SchemaError

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no"}


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    """Column roles of a CSV file.

    ``features=None`` means every column that is not the sensitive column,
    the target or listed in ``ignore``; numeric legitimate columns are
    features too unless excluded.  ``bins`` discretizes every numeric legitimate column
    into that many equal-frequency levels (``None`` keeps raw values as
    levels).  ``merge`` maps column -> {raw value: replacement} and is
    applied before anything else.  ``coordinates`` maps a legitimate column
    to {raw value: coordinate} for categorical levels with a natural order.
    """

    sensitive: str
    target: str
    legitimate: tuple
    features: tuple | None = None
    ignore: tuple = ()
    bins: int | None = None
    merge: dict = field(default_factory=dict)
    coordinates: dict = field(default_factory=dict)
    sensitive_positive: str | None = None
    on_missing: str = "error"

    def __post_init__(self):
        legit = (self.legitimate,) if isinstance(self.legitimate, str) else tuple(self.legitimate)
        object.__setattr__(self, "legitimate", legit)
        if self.features is not None:
            object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "ignore", tuple(self.ignore))
        if not self.sensitive or not self.target:
            raise SchemaError("schema needs one sensitive and one target column")
        if not legit:
            raise SchemaError("schema needs at least one legitimate column")
        roles = [self.sensitive, self.target, *legit]
        if len(set(roles)) != len(roles):
            raise SchemaError("a column cannot be sensitive, target and legitimate at once")
        if self.sensitive in self.ignore or self.target in self.ignore or set(legit) & set(self.ignore):
            raise SchemaError("a required column is listed under ignore")
        if self.bins is not None and self.bins < 2:
            raise SchemaError("discretize.bins must be at least 2")
        if self.on_missing not in ("error", "drop"):
            raise SchemaError("on_missing must be 'error' or 'drop'")

    @classmethod
    def from_dict(cls, cfg):
        """Build from a parsed config with ``columns.*`` and ``discretize.bins`` keys."""
        cols = cfg.get("columns", {})
        try:
            sensitive = cols["sensitive"]
            target = cols["target"]
            legit = cols["legitimate"]
        except KeyError as exc:
            raise SchemaError(f"config is missing columns.{exc.args[0]}") from None
        bins = cfg.get("discretize", {}).get("bins")
        return cls(
            sensitive=sensitive,
            target=target,
            legitimate=legit,
            features=cols.get("features"),
            ignore=cols.get("ignore", ()),
            bins=int(bins) if bins else None,
            merge=cfg.get("merge", {}),
            coordinates=cfg.get("coordinates", {}),
            sensitive_positive=cols.get("sensitive_positive"),
            on_missing=cfg.get("on_missing", "error"),
        )

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(read_config(path))

    def to_dict(self):
        out = {
            "columns": {
                "sensitive": self.sensitive,
                "target": self.target,
                "legitimate": list(self.legitimate),
            },
            "on_missing": self.on_missing,
        }
        if self.features is not None:
            out["columns"]["features"] = list(self.features)
        if self.ignore:
            out["columns"]["ignore"] = list(self.ignore)
        if self.sensitive_positive is not None:
            out["columns"]["sensitive_positive"] = self.sensitive_positive
        if self.bins:
            out["discretize"] = {"bins": self.bins}
        if self.merge:
            out["merge"] = self.merge
        if self.coordinates:
            out["coordinates"] = self.coordinates
        return out


def read_config(path):
    """Parse a JSON or TOML config file by extension."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InvalidInput(f"config file not found: {path}") from None
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise InvalidInput(f"cannot parse config {path}: {exc}") from None


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Rows of (features, sensitive bit, legitimate level, target).

    ``levels`` holds integer level ids indexing ``level_coords`` (one row of
    numeric coordinates per level) and ``level_labels`` (the raw values
    that define the level).  ``legit_raw`` keeps the raw legitimate values
    so the dataset can be written back to CSV.
    """

    features: np.ndarray
    sensitive: np.ndarray
    levels: np.ndarray
    target: np.ndarray
    level_coords: np.ndarray
    level_labels: tuple
    feature_names: tuple
    legit_raw: np.ndarray
    schema: Schema
    columns: tuple
    sensitive_labels: tuple = ("0", "1")

    def __post_init__(self):
        n = self.sensitive.shape[0]
        if not (self.features.shape[0] == self.levels.shape[0] == self.target.shape[0] == n):
            raise InvalidInput("dataset columns differ in length")
        if self.features.shape[1] != len(self.feature_names):
            raise InvalidInput("feature names do not match the feature matrix")
        if not np.isin(self.sensitive, (0, 1)).all():
            raise InvalidInput("sensitive attribute must be binary")

    def __len__(self):
        return self.sensitive.shape[0]

    @property
    def n_levels(self):
        return self.level_coords.shape[0]

    def unshared_levels(self):
        """(levels only seen with A=0, levels only seen with A=1)."""
        s0 = set(np.unique(self.levels[self.sensitive == 0]).tolist())
        s1 = set(np.unique(self.levels[self.sensitive == 1]).tolist())
        return tuple(sorted(s0 - s1)), tuple(sorted(s1 - s0))

    def has_common_support(self):
        only0, only1 = self.unshared_levels()
        return not only0 and not only1 and (self.sensitive == 0).any() and (self.sensitive == 1).any()

    def level_name(self, k):
        lab = self.level_labels[k]
        return "|".join(str(v) for v in lab)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            features=self.features[idx],
            sensitive=self.sensitive[idx],
            levels=self.levels[idx],
            target=self.target[idx],
            legit_raw=self.legit_raw[idx],
        )

    def equals(self, other):
        return (
            isinstance(other, TabularDataset)
            and self.feature_names == other.feature_names
            and self.columns == other.columns
            and self.level_labels == other.level_labels
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.sensitive, other.sensitive)
            and np.array_equal(self.levels, other.levels)
            and np.array_equal(self.target, other.target)
            and np.array_equal(self.level_coords, other.level_coords)
        )


def _parse_float(text, col, row):
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"row {row}: column {col!r} value {text!r} is not numeric") from None


def _is_numeric(values):
    try:
        np.asarray(values, dtype=float)
        return True
    except ValueError:
        return False


def _sensitive_bits(raw, schema):
    vals = sorted(set(raw))
    if len(vals) > 2:
        raise SchemaError(f"sensitive column {schema.sensitive!r} has {len(vals)} distinct values; it must be binary")
    if schema.sensitive_positive is not None:
        pos = str(schema.sensitive_positive)
        if pos not in vals:
            raise SchemaError(f"sensitive_positive {pos!r} does not occur in column {schema.sensitive!r}")
        neg = [v for v in vals if v != pos]
        labels = (neg[0] if neg else "", pos)
        bits = np.array([1 if v == pos else 0 for v in raw], dtype=np.int8)
        return bits, labels
    low = [v.strip().lower() for v in raw]
    if not all(v in _TRUE or v in _FALSE for v in low):
        raise SchemaError(
            f"sensitive column {schema.sensitive!r} is not 0/1; set columns.sensitive_positive"
        )
    bits = np.array([1 if v in _TRUE else 0 for v in low], dtype=np.int8)
    neg = [r for r, b in zip(raw, bits) if b == 0]
    pos = [r for r, b in zip(raw, bits) if b == 1]
    return bits, (neg[0] if neg else "0", pos[0] if pos else "1")


def discretize_quantiles(column, k):
    """Equal-frequency bins of a numeric column.

    Rows are ranked by value (stable, so ties keep row order) and the rank
    range is cut into ``k`` equal parts.  Tied values always share a bin:
    a run of ties joins the bin where its first member falls.  Bins left
    empty that way are dropped with a warning.  Returns (level ids, bin
    coordinates, bin edges) where a coordinate is the midpoint of the
    smallest and largest value in the bin and ``edges[i]`` /
    ``edges[i + 1]`` are those extremes.
    """
    x = np.asarray(column, dtype=float).ravel()
    if k < 2:
        raise InvalidInput("need at least two bins")
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise InvalidInput("column must be non-empty and finite")
    if np.all(x == x[0]):
        raise InvalidInput("cannot discretize a constant column")
    n = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    raw_bin = (np.arange(n) * k) // n
    first = np.searchsorted(xs, xs, side="left")
    sorted_bin = raw_bin[first]
    used, ids_sorted = np.unique(sorted_bin, return_inverse=True)
    if used.size < k:
        warnings.warn(f"only {used.size} distinct bins could be formed out of {k} requested", stacklevel=2)
    ids = np.empty(n, dtype=np.int64)
    ids[order] = ids_sorted
    lo = np.array([xs[ids_sorted == b].min() for b in range(used.size)])
    hi = np.array([xs[ids_sorted == b].max() for b in range(used.size)])
    coords = (lo + hi) / 2.0
    return ids, coords, np.column_stack((lo, hi))


def _levels_for_column(raw, col, schema):
    """Per-column level index, labels and coordinates."""
    if schema.bins is not None and _is_numeric(raw) and col not in schema.coordinates:
        vals = np.asarray(raw, dtype=float)
        ids, coords, edges = discretize_quantiles(vals, schema.bins)
        labels = [f"[{lo:g}, {hi:g}]" for lo, hi in edges]
        return ids, labels, coords
    uniq = sorted(set(raw), key=lambda v: (float(v), v) if _is_numeric([v]) else (np.inf, v))
    index = {v: i for i, v in enumerate(uniq)}
    ids = np.array([index[v] for v in raw], dtype=np.int64)
    if col in schema.coordinates:
        cmap = schema.coordinates[col]
        missing = [v for v in uniq if v not in cmap]
        if missing:
            raise SchemaError(f"coordinates for column {col!r} lack values {missing}")
        coords = np.array([float(cmap[v]) for v in uniq])
    elif _is_numeric(uniq):
        coords = np.array([float(v) for v in uniq])
    else:
        coords = np.arange(len(uniq), dtype=float)
    return ids, list(uniq), coords


def build_levels(legit_raw, schema):
    """Cross the legitimate columns into one level id per row."""
    per_col = [_levels_for_column(list(legit_raw[:, c]), name, schema) for c, name in enumerate(schema.legitimate)]
    if len(per_col) == 1:
        ids, labels, coords = per_col[0]
        return ids, tuple((lab,) for lab in labels), coords[:, None]
    combo = np.column_stack([p[0] for p in per_col])
    uniq, inverse = np.unique(combo, axis=0, return_inverse=True)
    labels = tuple(tuple(per_col[c][1][u[c]] for c in range(len(per_col))) for u in uniq)
    coords = np.column_stack([per_col[c][2][uniq[:, c]] for c in range(len(per_col))])
    return inverse.ravel().astype(np.int64), labels, coords


def load_csv(path, schema: Schema) -> TabularDataset:
    """Read a UTF-8, comma-separated file with a header row.

    Rows with an empty required field raise :class:`SchemaError` naming the
    rows (data rows are numbered from 1), or are dropped with a warning when
    ``schema.on_missing == "drop"``.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{path}: empty file") from None
            except csv.Error as exc:
                raise SchemaError(f"{path}: line {reader.line_num}: {exc}") from None
            rows = []
            try:
                for rec in reader:
                    if not rec:
                        continue
                    if len(rec) != len(header):
                        raise SchemaError(
                            f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(rec)}"
                        )
                    rows.append(rec)
            except csv.Error as exc:
                raise SchemaError(f"{path}: line {reader.line_num}: {exc}") from None
    except FileNotFoundError:
        raise InvalidInput(f"data file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not valid UTF-8 ({exc})") from None
    return from_records(header, rows, schema, source=str(path))


def from_records(header, rows, schema: Schema, source="<records>") -> TabularDataset:
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise SchemaError(f"{source}: duplicate column names")
    pos = {h: i for i, h in enumerate(header)}
    for col in (schema.sensitive, schema.target, *schema.legitimate, *(schema.features or ())):
        if col not in pos:
            raise SchemaError(f"{source}: column {col!r} not found (have {header})")
    columns = tuple(h for h in header if h not in set(schema.ignore))
    if schema.features is not None:
        feats = list(schema.features)
    else:
        skip = {schema.sensitive, schema.target, *schema.ignore}
        feats = [h for h in header if h not in skip]
    required = list(dict.fromkeys([schema.sensitive, schema.target, *schema.legitimate, *feats]))

    cells = [[v.strip() for v in r] for r in rows]
    for col, mapping in schema.merge.items():
        if col not in pos:
            raise SchemaError(f"{source}: merge map names unknown column {col!r}")
        j = pos[col]
        for r in cells:
            r[j] = str(mapping.get(r[j], r[j]))

    missing = [i + 1 for i, r in enumerate(cells) if any(r[pos[c]] == "" for c in required)]
    if missing:
        if schema.on_missing == "error":
            shown = ", ".join(map(str, missing[:10]))
            more = "" if len(missing) <= 10 else f" and {len(missing) - 10} more"
            raise SchemaError(f"{source}: {len(missing)} row(s) with missing required values: row {shown}{more}")
        warnings.warn(f"{source}: dropped {len(missing)} row(s) with missing required values", stacklevel=2)
        drop = set(m - 1 for m in missing)
        cells = [r for i, r in enumerate(cells) if i not in drop]
    if not cells:
        raise SchemaError(f"{source}: no data rows")
    if schema.features is None:
        # categorical legitimate columns enter the model only through their level
        feats = [c for c in feats if c not in schema.legitimate or _is_numeric([r[pos[c]] for r in cells])]

    X = np.empty((len(cells), len(feats)))
    for c, col in enumerate(feats):
        j = pos[col]
        for i, r in enumerate(cells):
            X[i, c] = _parse_float(r[j], col, i + 1)
    j = pos[schema.target]
    y = np.array([_parse_float(r[j], schema.target, i + 1) for i, r in enumerate(cells)])
    A, labels = _sensitive_bits([r[pos[schema.sensitive]] for r in cells], schema)
    if A.min() == A.max():
        raise SchemaError(f"{source}: only one sensitive group present")
    legit_raw = np.array([[r[pos[c]] for c in schema.legitimate] for r in cells], dtype=object)
    levels, level_labels, coords = build_levels(legit_raw, schema)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SchemaError(f"{source}: non-finite numeric values")
    return TabularDataset(
        features=X,
        sensitive=A,
        levels=levels,
        target=y,
        level_coords=coords,
        level_labels=level_labels,
        feature_names=tuple(feats),
        legit_raw=legit_raw,
        schema=replace(schema, ignore=()),
        columns=columns,
        sensitive_labels=labels,
    )


def _fmt(v):
    return repr(float(v))


def to_csv(dataset: TabularDataset, path):
    """Write the dataset in the column layout it was loaded from."""
    sch = dataset.schema
    fpos = {name: k for k, name in enumerate(dataset.feature_names)}
    lpos = {name: k for k, name in enumerate(sch.legitimate)}
    # merged categories are written back in merged form; the merge map is idempotent on them
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.columns)
        for i in range(len(dataset)):
            row = []
            for col in dataset.columns:
                if col in lpos:
                    row.append(dataset.legit_raw[i, lpos[col]])
                elif col == sch.sensitive:
                    row.append(dataset.sensitive_labels[int(dataset.sensitive[i])])
                elif col == sch.target:
                    row.append(_fmt(dataset.target[i]))
                else:
                    row.append(_fmt(dataset.features[i, fpos[col]]))
            w.writerow(row)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split(dataset: TabularDataset, fractions=(0.6, 0.2, 0.2), seed=0):
    """Train/validation/test split stratified by (A, L) cell.

    Every cell is shuffled and cut by largest remainder, so each split keeps
    the cell proportions.  A cell too small to give every non-empty split a
    row triggers a warning and is allocated best-effort.  Row order inside a
    split follows the original dataset.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise InvalidInput("fractions must be three non-negative numbers summing to 1")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    small = 0
    cell = dataset.sensitive.astype(np.int64) * (dataset.n_levels + 1) + dataset.levels
    for key in np.unique(cell):
        idx = np.flatnonzero(cell == key)
        idx = idx[rng.permutation(idx.size)]
        raw = fr * idx.size
        counts = np.floor(raw).astype(int)
        rem = idx.size - counts.sum()
        if rem:
            order = np.argsort(-(raw - counts), kind="stable")
            counts[order[:rem]] += 1
        want = fr > 0
        if np.any(counts[want] == 0):
            small += 1
            if idx.size >= want.sum():
                for s in np.flatnonzero(want & (counts == 0)):
                    donor = int(np.argmax(counts))
                    counts[donor] -= 1
                    counts[s] += 1
        start = 0
        for s in range(3):
            parts[s].append(idx[start : start + counts[s]])
            start += counts[s]
    if small:
        warnings.warn(f"{small} (A, L) cell(s) too small to appear in every split", stacklevel=2)
    return tuple(dataset.subset(np.sort(np.concatenate(p)) if p else np.array([], dtype=np.int64)) for p in parts)


def make_dataset(features, sensitive, levels, target, level_coords=None, feature_names=None, legit_name="L"):
    """Wrap in-memory arrays as a :class:`TabularDataset`.

    ``levels`` are integer ids ``0..K-1``; ``level_coords`` defaults to the
    ids themselves.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    A = np.asarray(sensitive).astype(np.int8)
    lv = np.asarray(levels, dtype=np.int64)
    y = np.asarray(target, dtype=float)
    K = int(lv.max()) + 1 if lv.size else 0
    if lv.size and lv.min() < 0:
        raise InvalidInput("level ids must be non-negative")
    coords = np.arange(K, dtype=float)[:, None] if level_coords is None else np.asarray(level_coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    schema = Schema(sensitive="A", target="Y", legitimate=(legit_name,), features=names)
    cols = (*names, "A", legit_name, "Y") if legit_name not in names else (*names, "A", "Y")
    labels = tuple((repr(float(c[0])) if coords.shape[1] == 1 else str(k),) for k, c in enumerate(coords))
    raw = np.array([[labels[k][0]] for k in lv], dtype=object).reshape(-1, 1)
    return TabularDataset(
        features=X,
        sensitive=A,
        levels=lv,
        target=y,
        level_coords=coords,
        level_labels=labels,
        feature_names=names,
        legit_raw=raw,
        schema=schema,
        columns=cols,
    )
