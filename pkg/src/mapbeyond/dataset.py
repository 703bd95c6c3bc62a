"""Episode-to-corpus pipeline: per-step estimated-map crops paired with
expanded ground-truth crops, an on-disk PGM tree, and per-episode splits."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ManifestCorrupt, MissingExpansion, UnknownEpisode
from .grid import Cell, CropWindow, OccGrid, crop_centered, read_pgm, write_pgm
from .sim import FollowerConfig, LidarSpec, RobotState, follow_path, integrate_scan

BASE_SIDE = 5.0          # meters, the input window
RESOLUTION = 0.05        # meters per cell
INPUT_CELLS = 100        # BASE_SIDE / RESOLUTION
ALLOWED_EXPANSIONS = tuple(round(1.0 + k / 10.0, 2) for k in range(1, 11))

MANIFEST_NAME = "manifest"
MANIFEST_HEADER = "mapbeyond-dataset format=1"


def expansion_tag(expansion: float) -> str:
    """1.1 -> '110'; used for directory names and manifest fields."""
    return f"{round(expansion * 100):d}"


def _check_expansions(expansions) -> tuple[float, ...]:
    out = []
    for e in expansions:
        e = round(float(e), 2)
        if e not in ALLOWED_EXPANSIONS:
            raise MissingExpansion(
                f"expansion {e} not in allowed set {ALLOWED_EXPANSIONS}"
            )
        out.append(e)
    if not out:
        raise MissingExpansion("empty expansion list")
    return tuple(out)


@dataclass(frozen=True)
class SamplePair:
    """One trajectory step: estimated-map input crop plus ground-truth crops."""

    episode_id: int
    step: int
    pose: RobotState
    input: OccGrid
    targets: dict[float, OccGrid]


@dataclass(frozen=True)
class SampleRecord:
    episode_id: int
    step: int
    pose: RobotState
    split: str  # train | test

    @property
    def stem(self) -> str:
        return f"{self.episode_id:04d}_{self.step:05d}"


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    expansions: tuple[float, ...]
    records: tuple[SampleRecord, ...]

    def input_path(self, rec: SampleRecord) -> Path:
        return self.root / "input" / f"{rec.stem}.pgm"

    def target_path(self, rec: SampleRecord, expansion: float) -> Path:
        return self.root / f"gt_{expansion_tag(expansion)}" / f"{rec.stem}.pgm"

    def split_records(self, split: str) -> tuple[SampleRecord, ...]:
        return tuple(r for r in self.records if r.split == split)

    def episode_ids(self) -> tuple[int, ...]:
        return tuple(sorted({r.episode_id for r in self.records}))


def generate_episode(gt: OccGrid, waypoints, spec: LidarSpec, expansions,
                     episode_id: int = 0,
                     ctrl: FollowerConfig = FollowerConfig(),
                     dt: float = 0.1) -> list[SamplePair]:
    """Drive the waypoints, integrating each scan into an initially unknown
    estimated map, and emit one sample per step in trajectory order."""
    expansions = _check_expansions(expansions)
    traj = follow_path(gt, waypoints, spec, ctrl, dt)
    est = OccGrid.full(gt.width, gt.height, gt.resolution, gt.origin,
                       Cell.UNKNOWN)
    samples = []
    for k, (pose, scan) in enumerate(traj):
        est = integrate_scan(est, pose, scan, spec)
        center = pose.position
        inp = crop_centered(est, CropWindow(center, BASE_SIDE))
        targets = {
            e: crop_centered(gt, CropWindow.expanded(center, BASE_SIDE, e))
            for e in expansions
        }
        samples.append(SamplePair(episode_id, k, pose, inp, targets))
    return samples


def write_dataset(samples, root: Path, test_episodes=()) -> DatasetManifest:
    """Write the PGM tree and manifest. Layout: input/EEEE_SSSSS.pgm and one
    gt_<tag>/ directory per expansion; splits are assigned per episode."""
    if not samples:
        raise MissingExpansion("no samples to write")
    root = Path(root)
    expansions = tuple(sorted(samples[0].targets.keys()))
    test_set = set(int(e) for e in test_episodes)
    (root / "input").mkdir(parents=True, exist_ok=True)
    for e in expansions:
        (root / f"gt_{expansion_tag(e)}").mkdir(parents=True, exist_ok=True)

    records = []
    for s in samples:
        if tuple(sorted(s.targets.keys())) != expansions:
            raise MissingExpansion(
                f"sample {s.episode_id}/{s.step} has expansions "
                f"{sorted(s.targets)} but the corpus declares {expansions}"
            )
        split = "test" if s.episode_id in test_set else "train"
        rec = SampleRecord(s.episode_id, s.step, s.pose, split)
        write_pgm(s.input, root / "input" / f"{rec.stem}.pgm")
        for e in expansions:
            write_pgm(s.targets[e], root / f"gt_{expansion_tag(e)}" / f"{rec.stem}.pgm")
        records.append(rec)
    manifest = DatasetManifest(root, expansions, tuple(records))
    save_manifest(manifest)
    return manifest


def save_manifest(manifest: DatasetManifest) -> None:
    lines = [
        MANIFEST_HEADER,
        "expansions=" + ",".join(expansion_tag(e) for e in manifest.expansions),
    ]
    for r in manifest.records:
        lines.append(
            f"episode={r.episode_id} step={r.step} x={r.pose.x!r} "
            f"y={r.pose.y!r} theta={r.pose.theta!r} split={r.split}"
        )
    (manifest.root / MANIFEST_NAME).write_text("\n".join(lines) + "\n",
                                               encoding="ascii")


def read_dataset(root: Path) -> DatasetManifest:
    """Parse and verify the manifest; inconsistent trees raise ManifestCorrupt."""
    root = Path(root)
    mpath = root / MANIFEST_NAME
    if not mpath.exists():
        raise ManifestCorrupt(f"missing manifest {mpath}")
    lines = mpath.read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ManifestCorrupt(f"{mpath}: bad or missing format header")
    if len(lines) < 2 or not lines[1].startswith("expansions="):
        raise ManifestCorrupt(f"{mpath}: missing expansion list")
    expansions = tuple(
        round(int(tag) / 100.0, 2)
        for tag in lines[1].split("=", 1)[1].split(",") if tag
    )
    records = []
    for ln in lines[2:]:
        ln = ln.strip()
        if not ln:
            continue
        kv = dict(f.split("=", 1) for f in ln.split())
        try:
            pose = RobotState(float(kv["x"]), float(kv["y"]), float(kv["theta"]))
            rec = SampleRecord(int(kv["episode"]), int(kv["step"]), pose,
                               kv["split"])
        except (KeyError, ValueError) as e:
            raise ManifestCorrupt(f"{mpath}: bad record {ln!r}: {e}") from e
        if rec.split not in ("train", "test"):
            raise ManifestCorrupt(f"{mpath}: bad split {rec.split!r}")
        records.append(rec)
    manifest = DatasetManifest(root, expansions, tuple(records))

    for rec in manifest.records:
        p = manifest.input_path(rec)
        if not p.exists():
            raise ManifestCorrupt(f"missing file {p}")
        for e in expansions:
            p = manifest.target_path(rec, e)
            if not p.exists():
                raise ManifestCorrupt(f"missing file {p}")
    n = len(manifest.records)
    dirs = ["input"] + [f"gt_{expansion_tag(e)}" for e in expansions]
    for d in dirs:
        count = len(list((root / d).glob("*.pgm")))
        if count != n:
            raise ManifestCorrupt(
                f"{root / d} holds {count} images but the manifest lists {n}"
            )
    return manifest


def load_sample(manifest: DatasetManifest, rec: SampleRecord) -> SamplePair:
    inp = read_pgm(manifest.input_path(rec))
    targets = {
        e: read_pgm(manifest.target_path(rec, e)) for e in manifest.expansions
    }
    return SamplePair(rec.episode_id, rec.step, rec.pose, inp, targets)


def split_by_episode(manifest: DatasetManifest, test_episode_ids) -> DatasetManifest:
    """Reassign splits per episode; every listed id becomes test, rest train."""
    ids = list(int(e) for e in test_episode_ids)
    known = set(manifest.episode_ids())
    seen = set()
    for e in ids:
        if e not in known:
            raise UnknownEpisode(f"episode {e} not in dataset (has {sorted(known)})")
        if e in seen:
            raise UnknownEpisode(f"episode {e} listed twice")
        seen.add(e)
    records = tuple(
        replace(r, split="test" if r.episode_id in seen else "train")
        for r in manifest.records
    )
    return DatasetManifest(manifest.root, manifest.expansions, records)
