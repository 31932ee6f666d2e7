"""Space-time observation panels on a fixed site set, plus CSV round-trips.

A panel holds one value per (month, site) cell with NaN for missing cells,
together with the per-month covariates (year, calendar month, ENSO index)
that drive the dependence range. The CSV layout is long format::

    # scale=data
    site_id,t,year,month,enso,value
    1,1,1979,1,-0.34,12.75
    ...

sorted by (t, site_id), with an empty value field for missing cells. Site
coordinates travel in a sidecar file ``<name>.sites.csv`` with header
``site_id,lon,lat`` because panel rows carry no geometry.
"""

from __future__ import annotations

import csv
import dataclasses
import os

import numpy as np

SCALES = ("data", "frechet", "gumbel")


@dataclasses.dataclass
class GridPanel:
    """Values on a (time, site) grid with per-time covariates.

    values[i, j] is the observation at time index i (label ``t[i]``) and site
    ``site_ids[j]``; NaN marks missing. ``scale`` records what the values
    are: raw data, standard Frechet, or standard Gumbel.
    """

    site_ids: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    t: np.ndarray
    year: np.ndarray
    month: np.ndarray
    enso: np.ndarray
    values: np.ndarray
    scale: str = "data"

    def __post_init__(self):
        self.site_ids = np.asarray(self.site_ids, dtype=int)
        self.lon = np.asarray(self.lon, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.t = np.asarray(self.t, dtype=int)
        self.year = np.asarray(self.year, dtype=int)
        self.month = np.asarray(self.month, dtype=int)
        self.enso = np.asarray(self.enso, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        D, T = self.site_ids.size, self.t.size
        if len(np.unique(self.site_ids)) != D:
            raise ValueError("site ids must be unique")
        if self.lon.shape != (D,) or self.lat.shape != (D,):
            raise ValueError("lon/lat must match site_ids")
        if len(np.unique(self.t)) != T:
            raise ValueError("time labels must be unique")
        for name, arr in (("year", self.year), ("month", self.month),
                          ("enso", self.enso)):
            if arr.shape != (T,):
                raise ValueError(f"{name} must have one entry per time point")
        if self.month.size and (self.month.min() < 1 or self.month.max() > 12):
            raise ValueError("month entries must lie in 1..12")
        if self.values.shape != (T, D):
            raise ValueError(
                f"values must be (T, D) = ({T}, {D}), got {self.values.shape}"
            )
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")

    @property
    def n_sites(self) -> int:
        return self.site_ids.size

    @property
    def n_times(self) -> int:
        return self.t.size

    @property
    def coords(self) -> np.ndarray:
        """(D, 2) array of site coordinates in (lon, lat) order."""
        return np.column_stack([self.lon, self.lat])

    def with_values(self, values: np.ndarray, scale: str) -> "GridPanel":
        """Same grid and covariates, new value matrix."""
        return dataclasses.replace(self, values=np.asarray(values, float),
                                   scale=scale)

    def subset_sites(self, keep: np.ndarray) -> "GridPanel":
        """Restrict to the sites selected by a boolean mask or index array."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return dataclasses.replace(
            self, site_ids=self.site_ids[keep], lon=self.lon[keep],
            lat=self.lat[keep], values=self.values[:, keep])

    def subset_times(self, keep: np.ndarray) -> "GridPanel":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return dataclasses.replace(
            self, t=self.t[keep], year=self.year[keep],
            month=self.month[keep], enso=self.enso[keep],
            values=self.values[keep, :])


def make_grid(nx: int, ny: int, spacing: float = 1.0,
              origin=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regular nx-by-ny site grid; returns (site_ids, lon, lat) row-major."""
    xs = origin[0] + spacing * np.arange(nx)
    ys = origin[1] + spacing * np.arange(ny)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    ids = np.arange(1, nx * ny + 1)
    return ids, X.ravel(), Y.ravel()


def month_of(t: np.ndarray) -> np.ndarray:
    """Calendar month for 1-based month counter t: t mod 12 with 0 -> 12."""
    m = np.asarray(t, dtype=int) % 12
    return np.where(m == 0, 12, m)


def synthetic_covariates(T: int, seed=None, first_year: int = 1,
                         ar_coef: float = 0.8, sd: float = 0.9):
    """Month counter, year, calendar month and an AR(1) stand-in ENSO series.

    The ENSO series is stationary AR(1) with marginal standard deviation
    ``sd``, which puts typical values inside roughly (-2.5, 2.5), bracketing
    the default range-model knots.
    """
    t = np.arange(1, T + 1)
    month = month_of(t)
    year = first_year + (t - 1) // 12
    rng = np.random.default_rng(seed)
    innov_sd = sd * np.sqrt(1.0 - ar_coef**2)
    enso = np.empty(T)
    prev = rng.normal(0.0, sd)
    for i in range(T):
        prev = ar_coef * prev + rng.normal(0.0, innov_sd)
        enso[i] = prev
    return t, year, month, enso


def _fmt(x: float) -> str:
    """Shortest decimal string that round-trips the IEEE-754 double."""
    return repr(float(x))


def sites_path_for(path: str) -> str:
    base, _ = os.path.splitext(path)
    return base + ".sites.csv"


def write_panel_csv(panel: GridPanel, path: str,
                    write_sites: bool = True) -> None:
    """Write the long-format panel CSV (and the coordinate sidecar)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# scale={panel.scale}\n")
        w = csv.writer(fh)
        w.writerow(["site_id", "t", "year", "month", "enso", "value"])
        for i in range(panel.n_times):
            row_head = [int(panel.t[i]), int(panel.year[i]),
                        int(panel.month[i]), _fmt(panel.enso[i])]
            for j in range(panel.n_sites):
                v = panel.values[i, j]
                w.writerow([int(panel.site_ids[j])] + row_head
                           + ["" if np.isnan(v) else _fmt(v)])
    if write_sites:
        write_sites_csv(panel, sites_path_for(path))


def write_sites_csv(panel: GridPanel, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "lon", "lat"])
        for j in range(panel.n_sites):
            w.writerow([int(panel.site_ids[j]), _fmt(panel.lon[j]),
                        _fmt(panel.lat[j])])


def read_sites_csv(path: str):
    ids, lon, lat = [], [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != ["site_id", "lon", "lat"]:
            raise ValueError(f"unexpected sites header in {path}: {header}")
        for row in rd:
            if not row:
                continue
            ids.append(int(row[0]))
            lon.append(float(row[1]))
            lat.append(float(row[2]))
    return np.array(ids), np.array(lon), np.array(lat)


def read_panel_csv(path: str, sites_path: str | None = None) -> GridPanel:
    """Read a panel CSV written by :func:`write_panel_csv`.

    Rows may come in any order; every (t, site) cell must appear at most
    once. Sites absent from the sidecar, or vice versa, are an error.
    """
    scale = "data"
    records = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("# scale="):
            scale = first.strip().split("=", 1)[1]
            if scale not in SCALES:
                raise ValueError(f"unknown scale tag {scale!r} in {path}")
        else:
            fh.seek(0)
        rd = csv.reader(fh)
        header = next(rd)
        if header != ["site_id", "t", "year", "month", "enso", "value"]:
            raise ValueError(f"unexpected panel header in {path}: {header}")
        for row in rd:
            if not row:
                continue
            records.append(row)
    if sites_path is None:
        sites_path = sites_path_for(path)
    site_ids, lon, lat = read_sites_csv(sites_path)

    t_vals = sorted({int(r[1]) for r in records})
    t_index = {tv: i for i, tv in enumerate(t_vals)}
    s_index = {int(s): j for j, s in enumerate(site_ids)}
    T, D = len(t_vals), len(site_ids)
    values = np.full((T, D), np.nan)
    seen = np.zeros((T, D), dtype=bool)
    year = np.zeros(T, dtype=int)
    month = np.zeros(T, dtype=int)
    enso = np.full(T, np.nan)
    for r in records:
        sid, tv = int(r[0]), int(r[1])
        if sid not in s_index:
            raise ValueError(f"panel row references site {sid} "
                             f"missing from {sites_path}")
        i, j = t_index[tv], s_index[sid]
        if seen[i, j]:
            raise ValueError(f"duplicate cell (t={tv}, site={sid}) in {path}")
        seen[i, j] = True
        yr, mo, en = int(r[2]), int(r[3]), float(r[4])
        if year[i] == 0:
            year[i], month[i], enso[i] = yr, mo, en
        elif (year[i], month[i]) != (yr, mo) or enso[i] != en:
            raise ValueError(f"inconsistent covariates at t={tv} in {path}")
        values[i, j] = float(r[5]) if r[5] != "" else np.nan
    return GridPanel(site_ids=site_ids, lon=lon, lat=lat,
                     t=np.array(t_vals), year=year, month=month, enso=enso,
                     values=values, scale=scale)
