"""Dataset types, JSONL persistence, and random-motion data collection.

A data tuple pairs the feature positions and their backward-difference
velocities at the end of a control interval with the end poses at that
instant and the constant end velocity commanded over the interval. The
collector drives both grippers toward destinations sampled inside two
disjoint half-ball workspaces (split by the vertical plane through the
rod center), re-sampling every period, which sweeps a broad range of
equilibrium shapes without ever overstretching the rod.
"""

from __future__ import annotations

import dataclasses
import gzip
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import quatmath, rodsim
from .rodsim import DloParams, Simulation
from .staterep import EndPose, rotate_about_vertical_batch


class DataFormatError(ValueError):
    """Raised on malformed dataset files; carries the offending line."""


@dataclass
class DataTuple:
    """One (x, xdot, r, nu) sample with its timestamp and cable parameters."""

    t: float
    x: np.ndarray      # (m, 3)
    xdot: np.ndarray   # (m, 3)
    r: np.ndarray      # (14,)
    nu: np.ndarray     # (12,)
    dlo: DloParams


@dataclass
class Workspace:
    """Sampling region for gripper destinations.

    Two half balls of the given radius around the center, split by the
    plane orthogonal to x, with a plane margin keeping the grippers
    separated. Orientations are sampled within +/- orientation_range of
    the identity per Euler axis.
    """

    center: np.ndarray
    radius: float
    plane_margin: float
    orientation_range: float = np.pi / 4
    max_separation: float = np.inf

    @classmethod
    def for_rod(cls, length: float, center=(0.0, 0.0, 0.0)) -> "Workspace":
        return cls(
            center=np.asarray(center, dtype=float),
            radius=0.5 * length,
            plane_margin=0.05 * length,
            max_separation=0.95 * length,
        )

    def sample_positions(self, rng: np.random.Generator, planar: bool) -> tuple[np.ndarray, np.ndarray]:
        """One destination per gripper; separation respects max_separation."""
        for _ in range(1000):
            pts = []
            for side in (-1.0, 1.0):
                while True:
                    u = rng.uniform(-1.0, 1.0, size=3)
                    if planar:
                        u[2] = 0.0
                    if np.linalg.norm(u) <= 1.0:
                        break
                p = self.center + self.radius * u
                p[0] = self.center[0] + side * np.clip(
                    abs(p[0] - self.center[0]), self.plane_margin, self.radius
                )
                pts.append(p)
            if np.linalg.norm(pts[1] - pts[0]) <= self.max_separation:
                return pts[0], pts[1]
        raise RuntimeError("could not sample a feasible destination pair")

    def sample_orientation(self, rng: np.random.Generator, planar: bool) -> np.ndarray:
        span = self.orientation_range
        if planar:
            return quatmath.from_axis_angle([0.0, 0.0, 1.0], rng.uniform(-span, span))
        rpy = rng.uniform(-span, span, size=3)
        return quatmath.from_rpy(*rpy)


@dataclass
class Dataset:
    """Columnar tuple storage with per-tuple cable indices."""

    feature_count: int
    x: np.ndarray          # (N, m, 3)
    xdot: np.ndarray       # (N, m, 3)
    r: np.ndarray          # (N, 14)
    nu: np.ndarray         # (N, 12)
    t: np.ndarray          # (N,)
    dlo_index: np.ndarray  # (N,)
    dlos: list[DloParams]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        per_dlo = np.array([d.length for d in self.dlos])
        return per_dlo[self.dlo_index]

    def get(self, i: int) -> DataTuple:
        return DataTuple(
            t=float(self.t[i]), x=self.x[i].copy(), xdot=self.xdot[i].copy(),
            r=self.r[i].copy(), nu=self.nu[i].copy(),
            dlo=self.dlos[int(self.dlo_index[i])],
        )

    def subset(self, count: int) -> "Dataset":
        if count > len(self):
            raise ValueError(f"subset of {count} from {len(self)} tuples")
        return Dataset(
            feature_count=self.feature_count,
            x=self.x[:count].copy(), xdot=self.xdot[:count].copy(),
            r=self.r[:count].copy(), nu=self.nu[:count].copy(),
            t=self.t[:count].copy(), dlo_index=self.dlo_index[:count].copy(),
            dlos=list(self.dlos),
            metadata={**self.metadata, "subset_of": len(self)},
        )

    @staticmethod
    def concatenate(parts: list["Dataset"]) -> "Dataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        m = parts[0].feature_count
        if any(p.feature_count != m for p in parts):
            raise ValueError("feature counts differ across parts")
        dlos: list[DloParams] = []
        index_chunks = []
        for p in parts:
            offset = len(dlos)
            dlos.extend(p.dlos)
            index_chunks.append(p.dlo_index + offset)
        return Dataset(
            feature_count=m,
            x=np.concatenate([p.x for p in parts]),
            xdot=np.concatenate([p.xdot for p in parts]),
            r=np.concatenate([p.r for p in parts]),
            nu=np.concatenate([p.nu for p in parts]),
            t=np.concatenate([p.t for p in parts]),
            dlo_index=np.concatenate(index_chunks),
            dlos=dlos,
            metadata={"concatenated": [p.metadata for p in parts]},
        )


def rotate_sample(sample: DataTuple, angle: float) -> DataTuple:
    """Rotate one tuple about the world vertical axis."""
    x, xdot, r, nu = rotate_about_vertical_batch(
        sample.x[None], sample.xdot[None], sample.r[None], sample.nu[None],
        angles=np.array([angle]),
    )
    return DataTuple(t=sample.t, x=x[0], xdot=xdot[0], r=r[0], nu=nu[0], dlo=sample.dlo)


# ---------------------------------------------------------------------------
# Persistence


class _GzipTextWriter(io.TextIOWrapper):
    """Gzip text writer whose bytes are a pure function of the content.

    Plain gzip.open embeds the current time and the file name in the
    header, which would make byte-for-byte reproducibility depend on
    when and where a dataset was written.
    """

    def __init__(self, path: str):
        self._raw = open(path, "wb")
        gz = gzip.GzipFile(filename="", fileobj=self._raw, mode="wb",
                           mtime=0)
        super().__init__(gz, encoding="utf-8")

    def close(self):
        try:
            super().close()
        finally:
            self._raw.close()


def _open(path: str, mode: str):
    if str(path).endswith(".gz"):
        if "w" in mode:
            return _GzipTextWriter(path)
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write a header line followed by one JSON tuple per line."""
    header = {
        "kind": "dlolab-dataset",
        "version": 1,
        "feature_count": dataset.feature_count,
        "dlos": [dataclasses.asdict(d) for d in dataset.dlos],
        "metadata": dataset.metadata,
    }
    with _open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(len(dataset)):
            rec = {
                "t": float(dataset.t[i]),
                "dlo": int(dataset.dlo_index[i]),
                "x": dataset.x[i].ravel().tolist(),
                "xdot": dataset.xdot[i].ravel().tolist(),
                "r": dataset.r[i].tolist(),
                "nu": dataset.nu[i].tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path: str) -> Dataset:
    with _open(path, "r") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as err:
            raise DataFormatError(f"{path}:1: not a dataset header: {err}") from err
        if header.get("kind") != "dlolab-dataset":
            raise DataFormatError(f"{path}:1: missing dataset header")
        m = int(header["feature_count"])
        dlos = [DloParams(**d) for d in header["dlos"]]
        rows_t, rows_dlo, rows_x, rows_xd, rows_r, rows_nu = [], [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rows_t.append(rec["t"])
                rows_dlo.append(rec["dlo"])
                rows_x.append(rec["x"])
                rows_xd.append(rec["xdot"])
                rows_r.append(rec["r"])
                rows_nu.append(rec["nu"])
            except (json.JSONDecodeError, KeyError) as err:
                raise DataFormatError(f"{path}:{lineno}: malformed tuple: {err}") from err
        n = len(rows_t)
        ds = Dataset(
            feature_count=m,
            x=np.asarray(rows_x, dtype=float).reshape(n, m, 3),
            xdot=np.asarray(rows_xd, dtype=float).reshape(n, m, 3),
            r=np.asarray(rows_r, dtype=float),
            nu=np.asarray(rows_nu, dtype=float),
            t=np.asarray(rows_t, dtype=float),
            dlo_index=np.asarray(rows_dlo, dtype=int),
            dlos=dlos,
            metadata=header.get("metadata", {}),
        )
        if n and (ds.dlo_index.min() < 0 or ds.dlo_index.max() >= len(dlos)):
            raise DataFormatError(f"{path}: tuple references unknown cable index")
        return ds


# ---------------------------------------------------------------------------
# Collection


@dataclass
class CollectConfig:
    duration: float = 600.0     # seconds of recorded motion
    dt: float = 0.1
    period: float = 2.0         # destination re-sampling interval
    feature_count: int = 8
    separation_frac: float = 0.8
    mode: str = "3d"
    seed: int = 0
    max_retries: int = 20

    def validate(self) -> None:
        if self.mode not in ("2d", "3d"):
            raise ValueError(f"mode must be '2d' or '3d', got {self.mode!r}")
        if self.duration <= 0 or self.dt <= 0 or self.period < self.dt:
            raise ValueError("need duration > 0, dt > 0, period >= dt")


def collect_random(params: DloParams, config: CollectConfig) -> Dataset:
    """Drive one rod through random destinations and record tuples.

    Returns exactly round(duration / dt) tuples. Non-converging periods
    (rare) are rolled back and re-sampled with a fresh destination.
    """
    config.validate()
    planar = config.mode == "2d"
    gravity = (0.0, 0.0, 0.0) if planar else rodsim.GRAVITY_DEFAULT
    sim = Simulation.create(
        params, separation_frac=config.separation_frac,
        gravity=gravity, planar=planar,
    )
    workspace = Workspace.for_rod(params.length)
    rng = np.random.default_rng(config.seed)
    m = config.feature_count
    steps_per_period = int(round(config.period / config.dt))
    target = int(round(config.duration / config.dt))

    rows = []
    t = 0.0
    while len(rows) < target:
        snapshot = sim.copy()
        for attempt in range(config.max_retries):
            try:
                new_rows, t_end = _run_period(
                    sim, workspace, rng, m, steps_per_period, config.dt, t, planar
                )
                break
            except rodsim.RodSimError:
                sim = snapshot.copy()
            if attempt == config.max_retries - 1:
                raise rodsim.NonConvergenceError(
                    "collection stuck: every destination retry failed", np.nan, attempt
                )
        rows.extend(new_rows)
        t = t_end

    rows = rows[:target]
    n = len(rows)
    return Dataset(
        feature_count=m,
        x=np.stack([r[1] for r in rows]),
        xdot=np.stack([r[2] for r in rows]),
        r=np.stack([r[3] for r in rows]),
        nu=np.stack([r[4] for r in rows]),
        t=np.array([r[0] for r in rows]),
        dlo_index=np.zeros(n, dtype=int),
        dlos=[params],
        metadata={
            "seed": config.seed, "mode": config.mode, "dt": config.dt,
            "period": config.period, "duration": config.duration,
        },
    )


def _run_period(sim, workspace, rng, m, steps, dt, t0, planar):
    """Advance one destination period; returns rows and the end time."""
    p1_dest, p2_dest = workspace.sample_positions(rng, planar)
    q1_dest = workspace.sample_orientation(rng, planar)
    q2_dest = workspace.sample_orientation(rng, planar)
    horizon = steps * dt
    axis1, ang1 = quatmath.axis_angle_between(sim.ends.q1, q1_dest)
    axis2, ang2 = quatmath.axis_angle_between(sim.ends.q2, q2_dest)
    nu = np.concatenate([
        (p1_dest - sim.ends.p1) / horizon,
        axis1 * (ang1 / horizon),
        (p2_dest - sim.ends.p2) / horizon,
        axis2 * (ang2 / horizon),
    ])
    rows = []
    t = t0
    x_prev = sim.features(m)
    for _ in range(steps):
        sim.step(nu, dt)
        t += dt
        x = sim.features(m)
        rows.append((t, x, (x - x_prev) / dt, sim.ends.as_vector(), nu.copy()))
        x_prev = x
    return rows, t


def collect_domain_randomized(
    dlo_list: list[DloParams], config: CollectConfig
) -> Dataset:
    """Concatenate per-cable collections with independently derived seeds."""
    seeds = np.random.SeedSequence(config.seed).spawn(len(dlo_list))
    parts = []
    for params, seq in zip(dlo_list, seeds):
        sub = dataclasses.replace(config, seed=int(seq.generate_state(1)[0]))
        parts.append(collect_random(params, sub))
    out = Dataset.concatenate(parts)
    out.metadata = {"seed": config.seed, "mode": config.mode,
                    "per_dlo_duration": config.duration}
    return out


# Cable catalog used across the experiments: (length m, diameter mm).
DLO_TABLE = [
    DloParams(0.5, 10.0),
    DloParams(0.3, 16.0),
    DloParams(0.4, 6.0),
    DloParams(0.5, 18.0),
    DloParams(0.6, 8.0),
    DloParams(0.7, 20.0),
    DloParams(0.8, 10.0),
    DloParams(0.9, 22.0),
    DloParams(1.0, 12.0),
    DloParams(1.1, 24.0),
    DloParams(1.2, 14.0),
]
