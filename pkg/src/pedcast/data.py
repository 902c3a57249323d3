"""Annotation files, scenes, coordinate normalization and window cutting.

An annotation file is a delimited text file with one observation per
line, default column order (frame, ped, x, y), whitespace or comma
separated.  Frames are sampled every 0.4 s; the integer frame ids must
advance with one uniform stride across the whole file.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (ConfigError, ContractError, NormalizationError,
                     ParseError, StrideError)
from .model import NORMALIZED, WORLD, Position

DATASET_NAMES = ("eth", "hotel", "zara01", "zara02", "ucy")

COLUMN_NAMES = ("frame", "ped", "x", "y")


@dataclass(frozen=True)
class FormatConfig:
    """How to read one annotation file."""
    columns: tuple = COLUMN_NAMES
    delimiter: str | None = None      # None: any whitespace
    stride: int | None = None         # expected frame-id step; None: infer

    def __post_init__(self):
        if sorted(self.columns) != sorted(COLUMN_NAMES):
            raise ConfigError(f"columns must be a permutation of "
                              f"{COLUMN_NAMES}, got {self.columns}")


@dataclass(frozen=True)
class NormTransform:
    """Aspect-preserving map of a scene bounding box into [-1, 1]^2.

    One scale for both axes: the longer side of the box spans [-1, 1],
    the shorter a centered sub-interval, so distance ratios survive.
    """
    cx: float
    cy: float
    scale: float

    def to_normalized(self, p: Position) -> Position:
        if p.units != WORLD:
            raise ConfigError("to_normalized expects a world position")
        return Position((p.x - self.cx) * self.scale,
                        (p.y - self.cy) * self.scale, NORMALIZED)

    def to_world(self, p: Position) -> Position:
        if p.units != NORMALIZED:
            raise ConfigError("to_world expects a normalized position")
        return Position(p.x / self.scale + self.cx,
                        p.y / self.scale + self.cy, WORLD)

    def normalize_array(self, xy: np.ndarray) -> np.ndarray:
        return (xy - np.array([self.cx, self.cy])) * self.scale

    def denormalize_array(self, xy: np.ndarray) -> np.ndarray:
        return xy / self.scale + np.array([self.cx, self.cy])


@dataclass
class Scene:
    """All observations of one dataset on a uniform frame grid."""
    name: str
    frame_ids: np.ndarray                  # (T,) int64, strictly increasing
    frames: list                           # per frame: (ids (n,) int64, xy (n, 2))
    stride: int
    transform: NormTransform | None = None

    @property
    def n_frames(self) -> int:
        return len(self.frame_ids)

    @property
    def n_pedestrians(self) -> int:
        ids = set()
        for fids, _ in self.frames:
            ids.update(int(i) for i in fids)
        return len(ids)

    def crowded_frames(self) -> int:
        """Frames holding more than one pedestrian."""
        return sum(1 for fids, _ in self.frames if len(fids) > 1)

    def bounding_box(self):
        all_xy = [xy for _, xy in self.frames if len(xy)]
        if not all_xy:
            raise ContractError(f"scene {self.name!r} holds no observations")
        xy = np.vstack(all_xy)
        return xy.min(axis=0), xy.max(axis=0)


def _parse_float(tok: str, path, lineno, what):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: bad {what} value {tok!r}") from None


def load_dataset(path, fmt: FormatConfig = FormatConfig(),
                 name: str | None = None) -> Scene:
    """Read one annotation file into a Scene.

    Exact duplicate records collapse silently; two records for the same
    (frame, ped) with different coordinates are a parse error.  Frame ids
    must sit on one uniform grid (declared stride, or the smallest gap
    when inferred); ids off the grid raise StrideError naming the
    offenders.  Grid frames nobody was annotated in stay in the scene as
    empty frames, as in recordings of sparse scenes.
    """
    col = {c: i for i, c in enumerate(fmt.columns)}
    records = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split(fmt.delimiter) if fmt.delimiter else line.split()
            toks = [t for t in toks if t]
            if len(toks) != 4:
                raise ParseError(
                    f"{path}:{lineno}: expected 4 fields, got {len(toks)}")
            fr = _parse_float(toks[col["frame"]], path, lineno, "frame")
            pid = _parse_float(toks[col["ped"]], path, lineno, "ped")
            if fr != int(fr) or pid != int(pid):
                raise ParseError(
                    f"{path}:{lineno}: frame/ped ids must be integers")
            x = _parse_float(toks[col["x"]], path, lineno, "x")
            y = _parse_float(toks[col["y"]], path, lineno, "y")
            key = (int(fr), int(pid))
            if key in records:
                if records[key] != (x, y):
                    raise ParseError(
                        f"{path}:{lineno}: conflicting duplicate for "
                        f"frame {key[0]} ped {key[1]}")
                continue
            records[key] = (x, y)

    scene_name = name if name is not None else str(path)
    if not records:
        return Scene(scene_name, np.array([], dtype=np.int64), [], stride=1)

    observed = np.array(sorted({f for f, _ in records}), dtype=np.int64)
    if len(observed) > 1:
        gaps = np.diff(observed)
        stride = fmt.stride if fmt.stride is not None else int(gaps.min())
        if stride <= 0:
            raise StrideError(f"{path}: frame stride must be positive, "
                              f"got {stride}")
        bad = observed[(observed - observed[0]) % stride != 0]
        if len(bad):
            raise StrideError(
                f"{path}: frame ids off the uniform {stride}-frame grid: "
                f"{bad[:10].tolist()}")
        frame_ids = np.arange(observed[0], observed[-1] + 1, stride,
                              dtype=np.int64)
    else:
        stride = fmt.stride if fmt.stride is not None else 1
        frame_ids = observed

    frames = []
    by_frame = {}
    for (fr, pid), xy in records.items():
        by_frame.setdefault(fr, []).append((pid, xy))
    for fr in frame_ids:
        entries = sorted(by_frame.get(int(fr), []))
        ids = np.array([p for p, _ in entries], dtype=np.int64)
        xy = np.array([c for _, c in entries], dtype=np.float64).reshape(-1, 2)
        frames.append((ids, xy))
    return Scene(scene_name, frame_ids, frames, stride=stride)


def normalize_scene(scene: Scene) -> Scene:
    """Attach the bounding-box transform; coordinates stay in world units."""
    lo, hi = scene.bounding_box()
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if extent <= 0.0:
        raise NormalizationError(
            f"scene {scene.name!r}: degenerate bounding box {lo} .. {hi}")
    tr = NormTransform(float((lo[0] + hi[0]) / 2.0),
                       float((lo[1] + hi[1]) / 2.0), 2.0 / extent)
    return replace(scene, transform=tr)


# ---------------------------------------------------------------------------
# windows

@dataclass
class TrajectoryWindow:
    """A fixed-length slice of a scene in dense (frame, pedestrian) layout.

    world/norm are (T, U, 2) with NaN where a pedestrian is absent.
    targets are pedestrians present in every frame; observed_full those
    present throughout the observation span (the predictable set).
    """
    scene_name: str
    frame_ids: np.ndarray          # (T,)
    obs_len: int
    pred_len: int
    ped_ids: np.ndarray            # (U,) int64 sorted
    present: np.ndarray            # (T, U) bool
    world: np.ndarray              # (T, U, 2)
    norm: np.ndarray               # (T, U, 2)
    target_idx: np.ndarray         # indices into ped_ids
    observed_full_idx: np.ndarray  # indices into ped_ids
    transform: NormTransform

    @property
    def total_len(self) -> int:
        return self.obs_len + self.pred_len

    def present_indices(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.present[t])


def cut_windows(scene: Scene, obs_len: int = 8, pred_len: int = 12,
                stride: int = 1) -> list[TrajectoryWindow]:
    """Slide a (obs_len + pred_len)-frame window over the scene.

    Windows keep every pedestrian seen in any of their frames; windows
    with no full-presence target are dropped.
    """
    if obs_len < 1 or pred_len < 1 or stride < 1:
        raise ConfigError(
            f"bad window geometry obs={obs_len} pred={pred_len} stride={stride}")
    if scene.transform is None:
        raise ContractError(
            f"scene {scene.name!r} must be normalized before window cutting")
    total = obs_len + pred_len
    tr = scene.transform
    windows = []
    for start in range(0, scene.n_frames - total + 1, stride):
        span = scene.frames[start:start + total]
        universe = sorted({int(i) for ids, _ in span for i in ids})
        if not universe:
            continue
        index = {pid: k for k, pid in enumerate(universe)}
        u = len(universe)
        present = np.zeros((total, u), dtype=bool)
        world = np.full((total, u, 2), np.nan)
        for t, (ids, xy) in enumerate(span):
            for pid, p in zip(ids, xy):
                k = index[int(pid)]
                present[t, k] = True
                world[t, k] = p
        target_idx = np.flatnonzero(present.all(axis=0))
        if len(target_idx) == 0:
            continue
        observed_full = np.flatnonzero(present[:obs_len].all(axis=0))
        norm = np.where(np.isnan(world), np.nan,
                        (world - np.array([tr.cx, tr.cy])) * tr.scale)
        windows.append(TrajectoryWindow(
            scene_name=scene.name,
            frame_ids=scene.frame_ids[start:start + total].copy(),
            obs_len=obs_len, pred_len=pred_len,
            ped_ids=np.array(universe, dtype=np.int64),
            present=present, world=world, norm=norm,
            target_idx=target_idx, observed_full_idx=observed_full,
            transform=tr))
    return windows


# ---------------------------------------------------------------------------
# splits and manifests

@dataclass(frozen=True)
class SplitPlan:
    train: tuple
    test: str


def leave_one_out(dataset_names, held_out: str) -> SplitPlan:
    """Hold one of the five datasets out, train on the other four."""
    names = list(dataset_names)
    if len(names) != len(set(names)):
        raise ConfigError(f"duplicate dataset names: {names}")
    if len(names) != 5:
        raise ConfigError(
            f"leave-one-out needs exactly five datasets, got {len(names)}")
    if held_out not in names:
        raise ConfigError(
            f"unknown hold-out {held_out!r}; datasets are {sorted(names)}")
    return SplitPlan(tuple(n for n in names if n != held_out), held_out)


@dataclass(frozen=True)
class DatasetSource:
    name: str
    path: str
    fmt: FormatConfig = field(default_factory=FormatConfig)


def load_manifest(path) -> list[DatasetSource]:
    """Parse a dataset manifest.

    One dataset per line: `name path [columns=f,p,x,y] [delimiter=comma]
    [stride=10]`.  Relative paths resolve against the manifest directory.
    """
    import os
    base = os.path.dirname(os.path.abspath(path))
    sources = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) < 2:
                raise ParseError(f"{path}:{lineno}: expected `name path ...`")
            name, fpath = toks[0], toks[1]
            if name in seen:
                raise ParseError(f"{path}:{lineno}: duplicate dataset {name!r}")
            seen.add(name)
            kw = {}
            for tok in toks[2:]:
                if "=" not in tok:
                    raise ParseError(f"{path}:{lineno}: bad option {tok!r}")
                key, val = tok.split("=", 1)
                if key == "columns":
                    kw["columns"] = tuple(val.split(","))
                elif key == "delimiter":
                    if val not in ("whitespace", "comma"):
                        raise ParseError(
                            f"{path}:{lineno}: delimiter must be whitespace "
                            f"or comma, got {val!r}")
                    kw["delimiter"] = None if val == "whitespace" else ","
                elif key == "stride":
                    kw["stride"] = int(val)
                else:
                    raise ParseError(f"{path}:{lineno}: unknown option {key!r}")
            if not os.path.isabs(fpath):
                fpath = os.path.join(base, fpath)
            try:
                fmt = FormatConfig(**kw)
            except ConfigError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            sources.append(DatasetSource(name, fpath, fmt))
    if not sources:
        raise ParseError(f"{path}: manifest lists no datasets")
    return sources


def load_scenes(sources) -> dict:
    """Load and normalize every dataset in a manifest."""
    return {src.name: normalize_scene(load_dataset(src.path, src.fmt, src.name))
            for src in sources}
