"""Gaussian point clouds and their binary PLY storage."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import MalformedInput, TruncatedFile

CLOUD_PROPERTIES = (
    ("x", "f8"), ("y", "f8"), ("z", "f8"),
    ("qw", "f8"), ("qx", "f8"), ("qy", "f8"), ("qz", "f8"),
    ("sx", "f8"), ("sy", "f8"), ("sz", "f8"),
    ("opacity", "f8"),
    ("r", "f8"), ("g", "f8"), ("b", "f8"),
    ("label", "i4"),
)

_PLY_TYPES = {"f8": "double", "f4": "float", "i4": "int", "u1": "uchar", "i8": "int64"}
_PLY_TYPES_INV = {
    "double": "f8", "float64": "f8", "float": "f4", "float32": "f4",
    "int": "i4", "int32": "i4", "uchar": "u1", "uint8": "u1", "int64": "i8",
}


@dataclass
class GaussianCloud:
    """Per-point Gaussian attributes. Rotations are unit quaternions (w, x, y, z)."""

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(n, 4)
        self.scales = np.asarray(self.scales, dtype=float).reshape(n, 3)
        self.opacities = np.asarray(self.opacities, dtype=float).reshape(n)
        self.colors = np.asarray(self.colors, dtype=float).reshape(n, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)

    def __len__(self):
        return len(self.positions)

    def copy(self) -> "GaussianCloud":
        return replace(self, **{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def subset(self, index) -> "GaussianCloud":
        return replace(self, **{f.name: getattr(self, f.name)[index] for f in fields(self)})

    def validate(self):
        """Raise ValueError if the attribute invariants do not hold."""
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("rotations must be unit quaternions")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be strictly positive")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValueError("opacities must lie in [0, 1]")

    @staticmethod
    def concatenate(clouds) -> "GaussianCloud":
        clouds = list(clouds)
        return GaussianCloud(**{
            f.name: np.concatenate([getattr(c, f.name) for c in clouds])
            for f in fields(GaussianCloud)
        })

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=[(name, "<" + t) for name, t in CLOUD_PROPERTIES])
        for i, k in enumerate("xyz"):
            rec[k] = self.positions[:, i]
        for i, k in enumerate(("qw", "qx", "qy", "qz")):
            rec[k] = self.rotations[:, i]
        for i, k in enumerate(("sx", "sy", "sz")):
            rec[k] = self.scales[:, i]
        rec["opacity"] = self.opacities
        for i, k in enumerate("rgb"):
            rec[k] = self.colors[:, i]
        rec["label"] = self.labels
        return rec

    @classmethod
    def from_records(cls, rec) -> "GaussianCloud":
        return cls(
            positions=np.stack([rec[k] for k in "xyz"], axis=1),
            rotations=np.stack([rec[k] for k in ("qw", "qx", "qy", "qz")], axis=1),
            scales=np.stack([rec[k] for k in ("sx", "sy", "sz")], axis=1),
            opacities=rec["opacity"],
            colors=np.stack([rec[k] for k in "rgb"], axis=1),
            labels=rec["label"],
        )


def write_ply_records(path, records: np.ndarray):
    """Write a structured array as a binary little-endian PLY vertex element."""
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(records)}"]
    for name in records.dtype.names:
        code = records.dtype[name].str[1:]
        lines.append(f"property {_PLY_TYPES[code]} {name}")
    lines.append("end_header")
    le = records.astype(records.dtype.newbyteorder("<"))
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(le.tobytes())


def read_ply_records(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedInput(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise MalformedInput(f"{path}: only binary_little_endian PLY is supported")
    count = None
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            if parts[1] == "list":
                raise MalformedInput(f"{path}: list properties are not supported")
            props.append((parts[2], "<" + _PLY_TYPES_INV[parts[1]]))
    if count is None:
        raise MalformedInput(f"{path}: missing vertex element")
    dtype = np.dtype(props)
    payload = data[end + len(b"end_header\n"):]
    if len(payload) < count * dtype.itemsize:
        raise TruncatedFile(f"{path}: expected {count} vertices")
    return np.frombuffer(payload, dtype=dtype, count=count).copy()


def write_cloud(path, cloud: GaussianCloud):
    write_ply_records(path, cloud.to_records())


def read_cloud(path) -> GaussianCloud:
    return GaussianCloud.from_records(read_ply_records(path))
