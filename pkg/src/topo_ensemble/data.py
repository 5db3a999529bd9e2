"""Datasets: the in-memory bundle, on-disk formats and synthetic generators.

On-disk layout of a dataset directory::

    sensors.csv            id,lat,lon
    series.json/.bin       tensor container (TSER: T,N,W,C; traffic: T_total,N,K)
    labels.json/.bin       TSER only: T,N,5 intensity targets
    events.csv             synthetic TSER only: generating event parameters
    meta.json              task, sample rate, horizons, split seed

A tensor container is a JSON manifest next to a raw little-endian payload.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geodesy import GeoCoordinate, build_distance_matrix, vincenty_distance

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
TASK_DIMS = {"tser": ("T", "N", "W", "C"), "traffic": ("T_total", "N", "K"), "labels": ("T", "N", "IM"),
             "distances": ("N", "N2")}
IM_NAMES = ("pga", "pgv", "sa03", "sa10", "sa30")


class DataError(ValueError):
    """Malformed or inconsistent input files."""


class TooFewEvents(ValueError):
    pass


# ---------------------------------------------------------------- file formats

def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_container(stem, array: np.ndarray, task: str, dtype: str = "f64", channels=None) -> None:
    """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (row-major payload)."""
    stem = Path(stem)
    names = TASK_DIMS[task]
    if array.ndim != len(names):
        raise DataError(f"{task} tensor needs {len(names)} axes {names}, got shape {array.shape}")
    manifest = {
        "task": task,
        "dims": dict(zip(names, map(int, array.shape))),
        "dtype": dtype,
        "byte_order": "little",
        "channels": list(channels) if channels is not None else [],
    }
    atomic_write_bytes(stem.with_suffix(".bin"), np.ascontiguousarray(array, dtype=DTYPES[dtype]).tobytes())
    atomic_write_text(stem.with_suffix(".json"), json.dumps(manifest, indent=2))


def read_container(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    try:
        manifest = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        payload = stem.with_suffix(".bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{stem}: cannot read container: {exc}") from exc
    task = manifest.get("task")
    if task not in TASK_DIMS:
        raise DataError(f"{stem}.json: unknown task {task!r}")
    if manifest.get("byte_order") != "little" or manifest.get("dtype") not in DTYPES:
        raise DataError(f"{stem}.json: unsupported dtype/byte order")
    names = TASK_DIMS[task]
    dims = manifest.get("dims", {})
    if list(dims) != list(names):
        raise DataError(f"{stem}.json: dims {list(dims)} do not match {task} layout {list(names)}")
    shape = tuple(int(dims[k]) for k in names)
    dt = DTYPES[manifest["dtype"]]
    expected = int(np.prod(shape)) * dt.itemsize
    if len(payload) != expected:
        raise DataError(f"{stem}.bin: payload has {len(payload)} bytes, manifest implies {expected}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(np.float64), manifest


def read_sensors_csv(path) -> tuple[list[str], list[GeoCoordinate]]:
    """Sensor table with header ``id,lat,lon`` (decimal degrees)."""
    ids, coords = [], []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "lat", "lon"]:
                raise DataError(f"{path}: expected header id,lat,lon")
            for line, row in enumerate(reader, start=2):
                try:
                    coords.append(GeoCoordinate(float(row["lat"]), float(row["lon"])))
                except (TypeError, ValueError) as exc:
                    raise DataError(f"{path}:{line}: {exc}") from exc
                ids.append(row["id"])
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return ids, coords


def write_sensors_csv(path, ids, coords) -> None:
    lines = ["id,lat,lon"] + [f"{i},{c.latitude!r},{c.longitude!r}" for i, c in zip(ids, coords)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_matrix_csv(path, M: np.ndarray) -> None:
    atomic_write_text(path, "\n".join(",".join(repr(float(x)) for x in row) for row in M) + "\n")


def read_speed_csv(path, sensor_ids=None) -> np.ndarray:
    """Traffic speeds as ``(T_total, N, 1)``.

    Layout: header ``timestamp,<sensor id>,...``, one row per 5-minute step.
    Columns are reordered to ``sensor_ids`` when given.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in r[1:]] for r in reader if r]
    cols = header[1:]
    data = np.array(rows, dtype=float)
    if sensor_ids is not None:
        try:
            data = data[:, [cols.index(s) for s in sensor_ids]]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
    return data[:, :, None]


# ---------------------------------------------------------------- normalization & splits

def zscore_stats(x: np.ndarray) -> dict:
    """Per-channel (last axis) mean and standard deviation."""
    flat = x.reshape(-1, x.shape[-1])
    std = flat.std(axis=0)
    return {"mean": flat.mean(axis=0), "std": np.where(std > 0, std, 1.0)}


def normalize(x, stats):
    return (x - stats["mean"]) / stats["std"]


def denormalize(x, stats):
    return x * stats["std"] + stats["mean"]


def kfold_partition(indices, k: int) -> list[np.ndarray]:
    """Split ``indices`` into ``k`` contiguous folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"cross-validation needs k >= 2, got {k}")
    indices = np.asarray(indices)
    if len(indices) < k:
        raise TooFewEvents(f"{len(indices)} events cannot fill {k} folds")
    return [np.asarray(f) for f in np.array_split(indices, k)]


def tser_splits(n_events: int, seed: int, k: int = 5, fold: int = 0, test_fraction: float = 0.2) -> dict:
    """Shuffled event split: held-out test portion, then fold ``fold`` of the rest for validation."""
    perm = np.random.default_rng([seed, 101]).permutation(n_events)
    n_test = int(round(test_fraction * n_events))
    test, rest = perm[:n_test], perm[n_test:]
    folds = kfold_partition(rest, k)
    val = folds[fold]
    train = np.concatenate([f for i, f in enumerate(folds) if i != fold])
    return {"train": np.sort(train), "val": np.sort(val), "test": np.sort(test)}


def chronological_splits(n_samples: int, fractions=(0.7, 0.1, 0.2)) -> dict:
    n_train = int(round(fractions[0] * n_samples))
    n_val = int(round(fractions[1] * n_samples))
    idx = np.arange(n_samples)
    return {"train": idx[:n_train], "val": idx[n_train:n_train + n_val], "test": idx[n_train + n_val:]}


# ---------------------------------------------------------------- bundle

@dataclass
class DatasetBundle:
    """Series, targets, sensor positions, splits and training-split statistics.

    Inputs handed to models are Z-scored with ``norm_stats``. TSER labels are
    used as given; traffic targets are future windows of the same Z-scored
    series and are denormalized for metrics.
    """

    task: str
    series: np.ndarray
    coordinates: list[GeoCoordinate]
    labels: np.ndarray | None = None
    splits: dict = field(default_factory=dict)
    norm_stats: dict | None = None
    sample_rate: float = 100.0
    t_in: int = 12
    t_out: int = 12
    sensor_ids: list[str] | None = None
    channels: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in ("tser", "traffic"):
            raise DataError(f"unknown task {self.task!r}")
        expected = 4 if self.task == "tser" else 3
        if self.series.ndim != expected:
            raise DataError(f"{self.task} series needs {expected} axes, got shape {self.series.shape}")
        if self.series.shape[1] != len(self.coordinates):
            raise DataError(f"series has {self.series.shape[1]} sensors, coordinates list {len(self.coordinates)}")
        if self.task == "tser" and (self.labels is None or self.labels.shape[:2] != self.series.shape[:2]):
            raise DataError("TSER labels must be (T, N, targets) matching the series")
        if self.sensor_ids is None:
            self.sensor_ids = [str(i) for i in range(self.n_sensors)]
        if not self.splits:
            if self.task == "tser":
                self.splits = tser_splits(self.n_samples, self.meta.get("split_seed", 0))
            else:
                self.splits = chronological_splits(self.n_samples)
        self._check_splits()
        if self.norm_stats is None:
            self.norm_stats = self._training_stats()

    def _check_splits(self):
        seen = set()
        for name, idx in self.splits.items():
            idx = set(np.asarray(idx).tolist())
            if seen & idx:
                raise DataError(f"split {name!r} overlaps another split")
            seen |= idx

    def _training_stats(self) -> dict:
        train = np.asarray(self.splits["train"])
        if self.task == "tser":
            return zscore_stats(self.series[train])
        # every time step touched by a training window
        end = int(train.max()) + self.t_in + self.t_out if len(train) else self.series.shape[0]
        return zscore_stats(self.series[:end])

    @property
    def n_sensors(self) -> int:
        return self.series.shape[1]

    @property
    def n_samples(self) -> int:
        if self.task == "tser":
            return self.series.shape[0]
        return self.series.shape[0] - self.t_in - self.t_out + 1

    @property
    def window_seconds(self) -> float:
        return self.series.shape[2] / self.sample_rate

    def distance_matrix(self) -> np.ndarray:
        return build_distance_matrix(self.coordinates)

    def with_splits(self, **splits) -> "DatasetBundle":
        """Copy with new splits and statistics recomputed from the new training split."""
        return replace(self, splits={k: np.asarray(v) for k, v in splits.items()}, norm_stats=None)

    def truncated(self, n_samples_window: int) -> "DatasetBundle":
        """TSER copy keeping the first ``n_samples_window`` samples of every waveform."""
        if self.task != "tser":
            raise ValueError("window truncation applies to TSER data")
        return replace(self, series=self.series[:, :, :n_samples_window].copy(), norm_stats=None)

    def inputs(self, indices) -> np.ndarray:
        indices = np.asarray(indices)
        if self.task == "tser":
            return normalize(self.series[indices], self.norm_stats)
        z = normalize(self.series, self.norm_stats)
        return np.stack([z[s:s + self.t_in] for s in indices])

    def targets(self, indices) -> np.ndarray:
        """TSER labels, or Z-scored future windows ``(B, T_out, N, K)`` for traffic."""
        indices = np.asarray(indices)
        if self.task == "tser":
            return self.labels[indices]
        z = normalize(self.series, self.norm_stats)
        return np.stack([z[s + self.t_in:s + self.t_in + self.t_out] for s in indices])

    def raw_targets(self, indices) -> np.ndarray:
        if self.task == "tser":
            return self.labels[np.asarray(indices)]
        return np.stack([self.series[s + self.t_in:s + self.t_in + self.t_out] for s in np.asarray(indices)])

    def to_original_units(self, pred: np.ndarray) -> np.ndarray:
        return pred if self.task == "tser" else denormalize(pred, self.norm_stats)

    # -- disk

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        write_sensors_csv(out / "sensors.csv", self.sensor_ids, self.coordinates)
        write_container(out / "series", self.series, self.task, channels=self.channels)
        if self.labels is not None:
            write_container(out / "labels", self.labels, "labels", channels=IM_NAMES[: self.labels.shape[-1]])
        meta = dict(self.meta, task=self.task, sample_rate=self.sample_rate, t_in=self.t_in, t_out=self.t_out)
        atomic_write_text(out / "meta.json", json.dumps(meta, indent=2, sort_keys=True))
        return out

    @classmethod
    def load(cls, directory) -> "DatasetBundle":
        src = Path(directory)
        try:
            meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{src / 'meta.json'}: {exc}") from exc
        ids, coords = read_sensors_csv(src / "sensors.csv")
        series, manifest = read_container(src / "series")
        labels = read_container(src / "labels")[0] if (src / "labels.json").exists() else None
        task = meta.get("task", manifest["task"])
        if manifest["task"] != task:
            raise DataError(f"{src}: series container is for task {manifest['task']!r}, meta says {task!r}")
        extra = {k: v for k, v in meta.items() if k not in ("task", "sample_rate", "t_in", "t_out")}
        return cls(task=task, series=series, coordinates=coords, labels=labels,
                   sample_rate=float(meta.get("sample_rate", 100.0)), t_in=int(meta.get("t_in", 12)),
                   t_out=int(meta.get("t_out", 12)), sensor_ids=ids, channels=manifest.get("channels", []),
                   meta=extra)


# ---------------------------------------------------------------- synthetic data

@dataclass
class SyntheticSpec:
    task: str = "tser"
    n_sensors: int = 12
    geometry: str = "cluster"
    bbox: tuple[float, float, float, float] = (42.3, 12.8, 42.8, 13.4)  # lat_min, lon_min, lat_max, lon_max
    noise_std: float = 0.01
    seed: int = 0
    # TSER
    n_events: int = 40
    sample_rate: float = 20.0
    window_seconds: float = 10.0
    wave_speed_km_s: float = 8.0
    # traffic
    n_steps: int = 2000
    period: int = 96
    t_in: int = 12
    t_out: int = 12

    def __post_init__(self):
        if self.n_sensors < 3:
            raise ValueError("synthetic networks need at least 3 sensors")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.geometry not in ("cluster", "ring", "grid"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.task not in ("tser", "traffic"):
            raise ValueError(f"unknown task {self.task!r}")


def place_sensors(spec: SyntheticSpec, rng: np.random.Generator) -> list[GeoCoordinate]:
    lat0, lon0, lat1, lon1 = spec.bbox
    n = spec.n_sensors
    if spec.geometry == "ring":
        clat, clon = (lat0 + lat1) / 2, (lon0 + lon1) / 2
        r = 0.4 * min(lat1 - lat0, lon1 - lon0)
        theta = 2 * np.pi * np.arange(n) / n + rng.uniform(-0.05, 0.05, n)
        lats = clat + r * np.sin(theta)
        lons = clon + r * np.cos(theta) / np.cos(np.radians(clat))
    elif spec.geometry == "grid":
        side = int(math.ceil(math.sqrt(n)))
        gy, gx = np.divmod(np.arange(n), side)
        jitter = rng.uniform(-0.02, 0.02, (2, n))
        lats = lat0 + (gy + 0.5 + jitter[0]) * (lat1 - lat0) / side
        lons = lon0 + (gx + 0.5 + jitter[1]) * (lon1 - lon0) / side
    else:
        k = max(2, n // 5)
        centers = rng.uniform((lat0, lon0), (lat1, lon1), size=(k, 2))
        owner = rng.integers(0, k, n)
        spread = 0.08 * np.array([lat1 - lat0, lon1 - lon0])
        pts = np.clip(centers[owner] + rng.normal(0, 1, (n, 2)) * spread, (lat0, lon0), (lat1, lon1))
        lats, lons = pts[:, 0], pts[:, 1]
    return [GeoCoordinate(float(a), float(b)) for a, b in zip(lats, lons)]


# attenuation exponent and site offset per intensity target
_IM_DECAY = np.array([1.6, 1.3, 1.5, 1.2, 1.0])
_IM_OFFSET = np.array([0.5, -0.3, 0.6, 0.2, -0.4])
_CHANNEL_FREQS = np.array([1.5, 2.0, 3.0])
_DEPTH_KM = 10.0


def im_labels(log_amplitude: float, hypo_km: np.ndarray) -> np.ndarray:
    """Intensity targets ``log A - decay_k * log10(r) + offset_k`` per sensor, shape ``(N, 5)``."""
    return log_amplitude - np.outer(np.log10(hypo_km), _IM_DECAY) + _IM_OFFSET


def _synthetic_tser(spec: SyntheticSpec, rng, coords):
    lat0, lon0, lat1, lon1 = spec.bbox
    w = int(round(spec.window_seconds * spec.sample_rate))
    t = np.arange(w) / spec.sample_rate
    n = len(coords)
    series = np.zeros((spec.n_events, n, w, 3))
    labels = np.zeros((spec.n_events, n, 5))
    events = []
    for e in range(spec.n_events):
        elat, elon = rng.uniform((lat0, lon0), (lat1, lon1))
        log_amp = rng.uniform(0.0, 1.5)
        epic_km = np.array([vincenty_distance((elat, elon), c) for c in coords]) / 1000.0
        hypo_km = np.sqrt(epic_km ** 2 + _DEPTH_KM ** 2)
        labels[e] = im_labels(log_amp, hypo_km)
        arrival = hypo_km / spec.wave_speed_km_s
        amp = 10.0 ** log_amp / hypo_km
        lag = t[None, :] - arrival[:, None]
        envelope = np.where(lag >= 0, np.exp(-np.clip(lag, 0, None) / 1.5), 0.0) * amp[:, None]
        for c, f in enumerate(_CHANNEL_FREQS):
            series[e, :, :, c] = envelope * np.sin(2 * np.pi * f * np.clip(lag, 0, None))
        series[e] += spec.noise_std * rng.normal(size=series[e].shape) * amp.mean()
        events.append((float(elat), float(elon), float(log_amp)))
    return series, labels, events


def _synthetic_traffic(spec: SyntheticSpec, rng, coords):
    from .graphgen import normalize_edge_weights, propagation_operator, rips_skeleton
    from .persistence import compute_h0

    D = build_distance_matrix(coords)
    eps = max(p.death for p in compute_h0(D) if math.isfinite(p.death))
    P = propagation_operator(rips_skeleton(D, normalize_edge_weights(D), eps, 0))
    n = len(coords)
    phase = rng.uniform(0, 2 * np.pi, n)
    amp = rng.uniform(0.6, 1.0, n)
    x = np.zeros((spec.n_steps, n))
    state = np.zeros(n)
    for s in range(spec.n_steps):
        drive = amp * np.sin(2 * np.pi * s / spec.period + phase)
        state = 0.5 * (P @ state) + drive + spec.noise_std * rng.normal(size=n)
        x[s] = state
    return (60.0 + 8.0 * x)[:, :, None]


def generate_synthetic(spec: SyntheticSpec, out_dir=None) -> DatasetBundle:
    """Build a seeded synthetic dataset; written to ``out_dir`` when given.

    TSER events are point sources inside the bounding box. Each sensor
    records a decaying oscillation that arrives after ``r / wave_speed``
    seconds with amplitude ``A / r`` (``r`` the hypocentral distance), and
    its targets follow :func:`im_labels`. Traffic speeds follow a periodic
    drive plus an autoregressive diffusion over the connected Rips graph of
    the sensors.
    """
    rng = np.random.default_rng([spec.seed, 7])
    coords = place_sensors(spec, rng)
    ids = [f"S{i:03d}" for i in range(len(coords))]
    meta = {"synthetic": {k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.__dict__.items()},
            "split_seed": spec.seed}
    if spec.task == "tser":
        series, labels, events = _synthetic_tser(spec, rng, coords)
        bundle = DatasetBundle("tser", series, coords, labels=labels, sample_rate=spec.sample_rate,
                               sensor_ids=ids, channels=["E", "N", "Z"], meta=meta)
    else:
        series = _synthetic_traffic(spec, rng, coords)
        events = None
        bundle = DatasetBundle("traffic", series, coords, sample_rate=1.0 / 300.0, t_in=spec.t_in,
                               t_out=spec.t_out, sensor_ids=ids, channels=["speed"], meta=meta)
    if out_dir is not None:
        out = bundle.save(out_dir)
        if events is not None:
            lines = ["event,lat,lon,log_amplitude"] + [f"{i},{a!r},{b!r},{c!r}" for i, (a, b, c) in enumerate(events)]
            atomic_write_text(out / "events.csv", "\n".join(lines) + "\n")
    bundle.meta["events"] = events
    return bundle
