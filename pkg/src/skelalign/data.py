"""Skeleton sequence data: the NTU-style text format, a synthetic motion
generator with controllable view/subject shift, dataset splits, and JSONL
persistence.

A sequence is an ordered list of frames; each frame holds up to two bodies,
each body a [J, 3] array of joint coordinates in meters.  Joint count and
body-slot count are constant within a sequence.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

NTU_JOINT_COUNT = 25
MAX_BODIES = 2

# fields per line in the text skeleton format
_BODY_INFO_FIELDS = 10
_JOINT_FIELDS = 12


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class SkeletonParseError(ValueError):
    """Malformed skeleton text; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DatasetError(ValueError):
    """A dataset-level problem (bad record, empty set, invalid values)."""

    def __init__(self, message: str, record: Optional[int] = None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


@dataclass
class BodyFrame:
    """One time step: a list of [J, 3] joint arrays, one per body slot."""

    bodies: list

    def __eq__(self, other):
        if not isinstance(other, BodyFrame):
            return NotImplemented
        return len(self.bodies) == len(other.bodies) and all(
            np.array_equal(a, b) for a, b in zip(self.bodies, other.bodies)
        )


@dataclass(eq=False)
class SkeletonSequence:
    frames: list
    label: Optional[int] = None
    domain: Domain = Domain.SOURCE
    subject_id: int = 0
    view_id: int = 0

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (
            self.label == other.label
            and self.domain == other.domain
            and self.subject_id == other.subject_id
            and self.view_id == other.view_id
            and self.frames == other.frames
        )

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def body_slots(self) -> int:
        return len(self.frames[0].bodies) if self.frames else 0

    @property
    def joint_count(self) -> int:
        if not self.frames or not self.frames[0].bodies:
            return 0
        return self.frames[0].bodies[0].shape[0]

    def as_array(self) -> np.ndarray:
        """Stack coordinates into a [T, slots, J, 3] array."""
        return np.stack([np.stack(f.bodies) for f in self.frames])

    def validate(self) -> "SkeletonSequence":
        slots = self.body_slots
        joints = self.joint_count
        for t, frame in enumerate(self.frames):
            if len(frame.bodies) != slots:
                raise DatasetError(
                    f"frame {t} has {len(frame.bodies)} body slots, expected {slots}"
                )
            for body in frame.bodies:
                if body.shape != (joints, 3):
                    raise DatasetError(
                        f"frame {t} has joint array {body.shape}, expected ({joints}, 3)"
                    )
                if not np.all(np.isfinite(body)):
                    raise DatasetError(f"frame {t} contains non-finite coordinates")
        if slots > MAX_BODIES:
            raise DatasetError(f"at most {MAX_BODIES} bodies supported, got {slots}")
        return self


# -- text skeleton format ---------------------------------------------------


class _LineReader:
    def __init__(self, text: str):
        self._lines = text.splitlines()
        self._pos = 0

    @property
    def lineno(self) -> int:
        return self._pos

    def next_line(self) -> tuple[str, int]:
        if self._pos >= len(self._lines):
            raise SkeletonParseError("unexpected end of file", self._pos + 1)
        self._pos += 1
        return self._lines[self._pos - 1], self._pos

    def next_int(self, what: str) -> int:
        line, no = self.next_line()
        try:
            return int(line.strip())
        except ValueError:
            raise SkeletonParseError(f"expected integer {what}, got {line!r}", no) from None

    def next_floats(self, count: int, what: str) -> list[float]:
        line, no = self.next_line()
        parts = line.split()
        if len(parts) != count:
            raise SkeletonParseError(
                f"expected {count} fields in {what}, got {len(parts)}", no
            )
        values = []
        for p in parts:
            try:
                v = float(p)
            except ValueError:
                raise SkeletonParseError(
                    f"non-numeric field {p!r} in {what}", no
                ) from None
            values.append(v)
        return values


def parse_ntu_skeleton(source, label: Optional[int] = None,
                       domain: Domain = Domain.SOURCE) -> SkeletonSequence:
    """Parse the plain-text skeleton layout.

    Layout: frame count; then per frame a body count, and per body one
    10-field info line, a joint-count line, and one 12-field line per joint
    whose first three fields are the x, y, z coordinates.  Everything except
    the coordinates is discarded.  Bodies beyond the second are dropped and
    frames with no bodies become a single all-zero body slot.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    reader = _LineReader(text)
    num_frames = reader.next_int("frame count")
    raw_frames: list[list[np.ndarray]] = []
    joint_count: Optional[int] = None
    for _ in range(num_frames):
        num_bodies = reader.next_int("body count")
        bodies: list[np.ndarray] = []
        for b in range(num_bodies):
            reader.next_floats(_BODY_INFO_FIELDS, "body info")
            declared = reader.next_int("joint count")
            declared_line = reader.lineno
            if joint_count is None:
                joint_count = declared
            elif declared != joint_count:
                raise SkeletonParseError(
                    f"joint count {declared} differs from {joint_count} seen earlier",
                    declared_line,
                )
            joints = np.zeros((declared, 3))
            for j in range(declared):
                fields = reader.next_floats(_JOINT_FIELDS, "joint")
                x, y, z = fields[:3]
                if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
                    raise SkeletonParseError("non-finite coordinate", reader.lineno)
                joints[j] = (x, y, z)
            if b < MAX_BODIES:
                bodies.append(joints)
        raw_frames.append(bodies)

    if joint_count is None:
        joint_count = NTU_JOINT_COUNT  # no body anywhere; keep the usual layout
    slots = max([len(b) for b in raw_frames], default=0)
    slots = min(max(slots, 1), MAX_BODIES) if raw_frames else 0
    frames = []
    for bodies in raw_frames:
        while len(bodies) < slots:
            bodies.append(np.zeros((joint_count, 3)))
        frames.append(BodyFrame(bodies))
    return SkeletonSequence(frames, label=label, domain=domain).validate()


def write_ntu_skeleton(seq: SkeletonSequence) -> str:
    """Serialize a sequence to the text layout accepted by
    :func:`parse_ntu_skeleton`.  Non-coordinate fields are written as zeros;
    coordinates use shortest round-trip formatting so parse(write(s))
    reproduces them exactly.
    """
    out = io.StringIO()
    out.write(f"{seq.num_frames}\n")
    for frame in seq.frames:
        out.write(f"{len(frame.bodies)}\n")
        for body in frame.bodies:
            out.write(" ".join(["0"] * _BODY_INFO_FIELDS) + "\n")
            out.write(f"{body.shape[0]}\n")
            for x, y, z in body:
                coords = f"{float(x)!r} {float(y)!r} {float(z)!r}"
                out.write(coords + " " + " ".join(["0"] * (_JOINT_FIELDS - 3)) + "\n")
    return out.getvalue()


# -- synthetic motion --------------------------------------------------------


@dataclass
class SynthConfig:
    """Parameters of the synthetic stick-figure generator.

    Joint trajectories are class-keyed sinusoids around a shared base pose;
    the domain shift is the composition of a rotation about the vertical
    axis, a uniform scale, a time-axis speedup, and additive noise.  The
    same config, class, and instance index always produce bit-identical
    output.
    """

    num_classes: int = 10
    joints: int = 15
    frames: int = 32
    view_angle: float = 0.0
    subject_scale: float = 1.0
    subject_speed: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.joints < 4:
            raise ValueError(f"joints must be >= 4, got {self.joints}")
        if self.frames < 8:
            raise ValueError(f"frames must be >= 8, got {self.frames}")
        if self.subject_scale <= 0 or self.subject_speed <= 0:
            raise ValueError("subject_scale and subject_speed must be positive")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


_POSE_KEY, _TRAJ_KEY, _INST_KEY, _NOISE_KEY = 0, 1, 2, 3


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _base_pose(cfg: SynthConfig) -> np.ndarray:
    """Class-independent resting pose: a loose figure in a body-sized box."""
    pose = np.zeros((cfg.joints, 3))
    for j in range(cfg.joints):
        r = _rng(cfg.seed, _POSE_KEY, j)
        pose[j] = (r.uniform(-0.3, 0.3), r.uniform(0.0, 1.7), r.uniform(-0.15, 0.15))
    return pose


def _trajectory_params(cfg: SynthConfig, label: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    freq = np.zeros(cfg.joints)
    phase = np.zeros(cfg.joints)
    amp = np.zeros((cfg.joints, 3))
    for j in range(cfg.joints):
        r = _rng(cfg.seed, _TRAJ_KEY, label, j)
        freq[j] = r.uniform(0.5, 3.5)
        phase[j] = r.uniform(0.0, 2.0 * math.pi)
        # motion lives mostly in the horizontal plane so a view rotation
        # (about the vertical axis) genuinely disturbs the signal
        amp[j] = (r.uniform(0.10, 0.40), r.uniform(0.02, 0.08), r.uniform(0.10, 0.40))
    return freq, phase, amp


def gen_synthetic(cfg: SynthConfig, label: int, instance: int,
                  domain: Domain = Domain.SOURCE) -> SkeletonSequence:
    """One stick-figure sequence for ``label`` with the config's domain shift."""
    if not 0 <= label < cfg.num_classes:
        raise ValueError(f"label {label} outside [0, {cfg.num_classes})")
    base = _base_pose(cfg)
    freq, phase, amp = _trajectory_params(cfg, label)

    inst = _rng(cfg.seed, _INST_KEY, label, instance)
    time_shift = inst.uniform(0.0, cfg.frames)
    amp_scale = inst.uniform(0.9, 1.1)

    t = np.arange(cfg.frames)[:, None]
    angle = 2.0 * math.pi * freq[None, :] * (
        cfg.subject_speed * t + time_shift
    ) / cfg.frames + phase[None, :]
    coords = base[None, :, :] + amp_scale * amp[None, :, :] * np.sin(angle)[:, :, None]

    coords = coords * cfg.subject_scale
    c, s = math.cos(cfg.view_angle), math.sin(cfg.view_angle)
    x, z = coords[..., 0].copy(), coords[..., 2].copy()
    coords[..., 0] = c * x + s * z
    coords[..., 2] = -s * x + c * z

    if cfg.noise_sigma > 0:
        noise = _rng(cfg.seed, _NOISE_KEY, label, instance).normal(
            0.0, cfg.noise_sigma, size=coords.shape
        )
        coords = coords + noise

    frames = [BodyFrame([coords[i]]) for i in range(cfg.frames)]
    return SkeletonSequence(
        frames,
        label=label,
        domain=domain,
        subject_id=instance,
        view_id=int(round(math.degrees(cfg.view_angle))),
    ).validate()


def make_synthetic_dataset(cfg: SynthConfig, instances_per_class: int,
                           domain: Domain = Domain.SOURCE) -> list[SkeletonSequence]:
    return [
        gen_synthetic(cfg, label, i, domain=domain)
        for label in range(cfg.num_classes)
        for i in range(instances_per_class)
    ]


# -- splits and persistence ---------------------------------------------------


def split_target(dataset: Sequence[SkeletonSequence], fraction: float,
                 seed: int) -> tuple[list, list]:
    """Seed-deterministic random partition into (train, test).

    The train part gets round(fraction * N) items.  Labels stay on the
    sequences for diagnostics; the trainer is typed so target batches never
    expose them.
    """
    if not dataset:
        raise DatasetError("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0,1), got {fraction}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(round(fraction * len(dataset)))
    train = [dataset[i] for i in perm[:n_train]]
    test = [dataset[i] for i in perm[n_train:]]
    return train, test


def save_jsonl(dataset: Iterable[SkeletonSequence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in dataset:
            record = {
                "label": seq.label,
                "domain": seq.domain.value,
                "subject": seq.subject_id,
                "view": seq.view_id,
                "frames": [[body.tolist() for body in f.bodies] for f in seq.frames],
            }
            fh.write(json.dumps(record) + "\n")


def load_jsonl(path) -> list[SkeletonSequence]:
    dataset = []
    with open(path, "r", encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc}", record=idx) from None
            dataset.append(_sequence_from_record(record, idx))
    return dataset


def _sequence_from_record(record: dict, idx: int) -> SkeletonSequence:
    try:
        domain = Domain(record["domain"])
        label = record.get("label")
        if label is not None:
            label = int(label)
        frames_raw = record["frames"]
        subject = int(record.get("subject", 0))
        view = int(record.get("view", 0))
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"bad record structure: {exc}", record=idx) from None
    frames = []
    for t, frame in enumerate(frames_raw):
        bodies = [np.asarray(body, dtype=np.float64) for body in frame]
        for body in bodies:
            if body.ndim != 2 or body.shape[1] != 3:
                raise DatasetError(
                    f"frame {t} body has shape {body.shape}, expected (J, 3)",
                    record=idx,
                )
        frames.append(BodyFrame(bodies))
    seq = SkeletonSequence(frames, label=label, domain=domain,
                           subject_id=subject, view_id=view)
    try:
        return seq.validate()
    except DatasetError as exc:
        raise DatasetError(str(exc), record=idx) from None


def dataset_fingerprint(dataset: Iterable[SkeletonSequence]) -> str:
    """Order-insensitive content hash; identical splits hash identically."""
    digests = []
    for seq in dataset:
        h = hashlib.sha256()
        h.update(str(seq.label).encode())
        h.update(seq.domain.value.encode())
        h.update(seq.as_array().tobytes())
        digests.append(h.hexdigest())
    top = hashlib.sha256()
    for d in sorted(digests):
        top.update(d.encode())
    return top.hexdigest()
