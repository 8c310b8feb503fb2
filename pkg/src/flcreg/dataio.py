"""Long-format CSV ingestion/emission, lag augmentation, config parsing.

Data files are tidy long CSVs with header ``subject_id,time,series,value``;
one series name carries the response and every other series is a
covariate.  Subjects may be observed on unequal grids, which is why the
wide format is not offered.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset import FunctionalDataset

__all__ = [
    "ingest_long_csv",
    "write_long_csv",
    "lag_augment",
    "parse_config_file",
]

HEADER = ["subject_id", "time", "series", "value"]


def ingest_long_csv(
    path,
    response: str,
    covariates: list[str] | None = None,
    domain: tuple[float, float] | None = None,
) -> FunctionalDataset:
    """Read a long-format CSV into a functional dataset.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV with header ``subject_id,time,series,value``.
    response : str
        Series name of the response.
    covariates : list of str, optional
        Expected covariate names.  When given, any other series name in
        the file is an error; when omitted, covariates are discovered in
        order of first appearance.
    domain : (float, float), optional
        Time domain; defaults to the observed min/max.

    Raises
    ------
    ValueError
        On duplicate (subject, time, series) triples (reported with row
        numbers), unknown series names, or non-numeric fields.
    """
    path = Path(path)
    rows: dict[str, dict[str, list[tuple[float, float]]]] = {}
    subject_order: list[str] = []
    series_order: list[str] = []
    seen: dict[tuple[str, float, str], int] = {}

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise ValueError(
                f"expected header {','.join(HEADER)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ValueError(f"row {lineno}: expected 4 fields, got {len(row)}")
            sid, t_raw, series, v_raw = (c.strip() for c in row)
            try:
                t = float(t_raw)
                v = float(v_raw)
            except ValueError:
                raise ValueError(
                    f"row {lineno}: non-numeric time or value "
                    f"({t_raw!r}, {v_raw!r})"
                ) from None
            key = (sid, t, series)
            if key in seen:
                raise ValueError(
                    f"duplicate observation for (subject={sid!r}, time={t!r}, "
                    f"series={series!r}) at rows {seen[key]} and {lineno}"
                )
            seen[key] = lineno
            if sid not in rows:
                rows[sid] = {}
                subject_order.append(sid)
            if series not in series_order:
                series_order.append(series)
            rows[sid].setdefault(series, []).append((t, v))

    if response not in series_order:
        raise ValueError(f"response series {response!r} not present in {path.name}")
    discovered = [s for s in series_order if s != response]
    if covariates is not None:
        unknown = [s for s in discovered if s not in covariates]
        if unknown:
            raise ValueError(
                f"unknown series {unknown}; known names are "
                f"{[response] + list(covariates)}"
            )
        cov_names = [c for c in covariates if c in discovered]
        missing = [c for c in covariates if c not in discovered]
        if missing:
            raise ValueError(f"declared covariates never observed: {missing}")
    else:
        cov_names = discovered

    rt, rv, ct, cv = [], [], [], []
    for sid in subject_order:
        series_map = rows[sid]
        if response not in series_map:
            raise ValueError(f"subject {sid!r} has no response observations")
        pairs = sorted(series_map[response])
        rt.append(np.array([p[0] for p in pairs]))
        rv.append(np.array([p[1] for p in pairs]))
        tt, vv = [], []
        for name in cov_names:
            cps = sorted(series_map.get(name, []))
            if not cps:
                raise ValueError(f"subject {sid!r} has no observations of {name!r}")
            tt.append(np.array([p[0] for p in cps]))
            vv.append(np.array([p[1] for p in cps]))
        ct.append(tt)
        cv.append(vv)

    if domain is None:
        allt = np.concatenate(rt + [x for row in ct for x in row])
        domain = (float(allt.min()), float(allt.max()))
    return FunctionalDataset(
        domain=domain, covariate_names=cov_names,
        response_times=rt, response_values=rv,
        covariate_times=ct, covariate_values=cv,
    )


def write_long_csv(data: FunctionalDataset, path, response: str = "response") -> None:
    """Emit a dataset as a long CSV; values round-trip bit exactly."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for i in range(data.n_subjects):
            sid = f"s{i:05d}"
            for t, v in zip(data.response_times[i], data.response_values[i]):
                w.writerow([sid, repr(float(t)), response, repr(float(v))])
            for j, name in enumerate(data.covariate_names):
                for t, v in zip(data.covariate_times[i][j], data.covariate_values[i][j]):
                    w.writerow([sid, repr(float(t)), name, repr(float(v))])


def lag_augment(data: FunctionalDataset, lag_window: int) -> FunctionalDataset:
    """Append lagged copies of every covariate.

    Requires all subjects on one shared dense regular grid.  For each lag
    ``l`` in ``1..lag_window`` a covariate named ``<name>_lag<l>`` holds
    the original values shifted forward by ``l`` grid steps; the common
    grid (response included) is truncated by ``lag_window`` points at the
    start so every lagged value exists.
    """
    if lag_window < 0:
        raise ValueError("lag_window must be nonnegative")
    if lag_window == 0:
        return data
    grid = np.asarray(data.response_times[0], dtype=float)
    m = grid.size
    for i in range(data.n_subjects):
        if (len(data.response_times[i]) != m
                or not np.allclose(data.response_times[i], grid, atol=1e-12)):
            raise ValueError("lag augmentation needs one shared grid for all subjects")
    if not data.covariates_on_response_grid():
        raise ValueError("lag augmentation needs covariates on the response grid")
    gaps = np.diff(grid)
    if not np.allclose(gaps, gaps[0], rtol=1e-8):
        raise ValueError("lag augmentation needs a regular grid")
    if lag_window >= m:
        raise ValueError(f"lag_window {lag_window} must be below the grid size {m}")

    keep = slice(lag_window, m)
    names = list(data.covariate_names)
    for lag in range(1, lag_window + 1):
        names += [f"{n}_lag{lag}" for n in data.covariate_names]

    new_ct, new_cv, new_rt, new_rv = [], [], [], []
    for i in range(data.n_subjects):
        base_t = grid[keep]
        vals = [np.asarray(v, dtype=float) for v in data.covariate_values[i]]
        row_vals = [v[keep] for v in vals]
        for lag in range(1, lag_window + 1):
            row_vals += [v[lag_window - lag: m - lag] for v in vals]
        new_rt.append(base_t)
        new_rv.append(np.asarray(data.response_values[i], dtype=float)[keep])
        new_ct.append([base_t] * len(names))
        new_cv.append(row_vals)
    return FunctionalDataset(
        domain=data.domain, covariate_names=names,
        response_times=new_rt, response_values=new_rv,
        covariate_times=new_ct, covariate_values=new_cv,
    )


def parse_config_file(path) -> dict:
    """Parse a flat ``key = value`` text file.

    Values become int, float, bool, a tuple of numbers (comma separated),
    or a plain string; ``#`` starts a comment.
    """
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        out[key] = _parse_value(val)
    return out


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    if "," in text:
        return tuple(_parse_scalar(p.strip()) for p in text.split(",") if p.strip())
    return _parse_scalar(text)


def _parse_scalar(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text
