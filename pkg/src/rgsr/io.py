"""File formats: point clouds (ASCII XYZ or binary float32), pair manifests, poses and result records.

Clouds are stored at float32 precision in both formats. ASCII writes nine significant digits,
which round-trips every float32 exactly, so reading either format back yields the same values.
Poses are 16 decimal numbers (row-major 4x4) written with ``repr`` and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .core import PointCloud, RigidTransform
from .metrics import SurveyMarkers

CLOUD_MAGIC = b"RGSRXYZ1"
MANIFEST_VERSION = 1
RESULTS_VERSION = 1


class DataError(Exception):
    """Unreadable or malformed input file (CLI exit code 2)."""


def write_xyz(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    np.savetxt(path, pts, fmt="%.9g", delimiter=" ")


def read_xyz(path) -> np.ndarray:
    try:
        pts = np.loadtxt(path, dtype=np.float32, ndmin=2, comments="#")
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if pts.size == 0:
        return np.zeros((0, 3))
    if pts.shape[1] != 3:
        raise DataError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    return pts.astype(np.float64)


def write_bin(path, points: np.ndarray) -> None:
    """Magic, little-endian u64 point count, then x y z float32 triples."""
    pts = np.ascontiguousarray(np.asarray(points).reshape(-1, 3), dtype="<f4")
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<Q", len(pts)))
        f.write(pts.tobytes())


def read_bin(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if data[:8] != CLOUD_MAGIC or len(data) < 16:
        raise DataError(f"{path}: not a binary cloud file")
    (n,) = struct.unpack_from("<Q", data, 8)
    if len(data) != 16 + 12 * n:
        raise DataError(f"{path}: size does not match point count {n}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(n, 3).astype(np.float64)


def write_cloud(path, points: np.ndarray) -> None:
    (write_bin if str(path).endswith(".bin") else write_xyz)(path, points)


def read_cloud(path, frame: str = "") -> PointCloud:
    pts = read_bin(path) if str(path).endswith(".bin") else read_xyz(path)
    return PointCloud(pts, frame)


def pose_to_list(T: RigidTransform) -> list:
    return [float(x) for x in T.as_matrix().ravel()]


def pose_from_list(values) -> RigidTransform:
    try:
        m = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad pose: {exc}") from exc
    if m.shape != (16,):
        raise DataError("a pose needs 16 numbers (row-major 4x4)")
    try:
        return RigidTransform.from_matrix(m.reshape(4, 4))
    except ValueError as exc:
        raise DataError(f"bad pose: {exc}") from exc


def _encode(obj):
    """JSON-safe copy: non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


_SPECIAL = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def _decode(obj):
    if isinstance(obj, str) and obj in _SPECIAL:
        return _SPECIAL[obj]
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def dumps_line(obj) -> str:
    return json.dumps(_encode(obj), sort_keys=False, allow_nan=False)


def loads_line(line: str):
    return _decode(json.loads(line))


def write_jsonl(path, header: dict, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_line(header) + "\n")
        for r in rows:
            f.write(dumps_line(r) + "\n")


def read_jsonl(path, kind: str, version: int) -> tuple[dict, list]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    try:
        header = loads_line(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad header: {exc}") from exc
    if header.get("kind") != kind:
        raise DataError(f"{path}: expected a {kind} file")
    if header.get("version") != version:
        raise DataError(f"{path}: unsupported version {header.get('version')!r}")
    rows = []
    for k, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            rows.append(loads_line(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{k}: {exc}") from exc
    return header, rows


# -- pair manifests ---------------------------------------------------------------------------

def pair_entry(pair, scan_file: str, aerial_file: str, jitter) -> dict:
    return {
        "scan_id": int(pair.scan_id),
        "site": pair.site,
        "trajectory": pair.trajectory,
        "seed": int(pair.seed),
        "scan": scan_file,
        "aerial": aerial_file,
        "T_ref": pose_to_list(pair.T_ref),
        "T_init": pose_to_list(pair.T_init),
        "odom_pose": pose_to_list(pair.odom_pose),
        "markers_aerial": pair.markers.aerial.tolist(),
        "markers_scan": pair.markers.scan.tolist(),
        "protocol": jitter.protocol,
        "jitter_seed": int(jitter.seed),
        "crop_center": [float(x) for x in pair.T_ref.translation[:2]],
    }


def write_pair_files(pair, out_dir, jitter, fmt: str = "xyz") -> dict:
    """Write the scan and aerial crop of one pair; returns its manifest entry."""
    out = Path(out_dir)
    scan_name = f"scan_{pair.scan_id:05d}.{fmt}"
    aerial_name = f"aerial_{pair.scan_id:05d}.{fmt}"
    try:
        write_cloud(out / scan_name, pair.S.points)
        write_cloud(out / aerial_name, pair.A.points)
    except OSError as exc:
        raise DataError(f"{out}: cannot write pair {pair.scan_id}: {exc}") from exc
    return pair_entry(pair, scan_name, aerial_name, jitter)


def manifest_header(scene_config: str, n_pairs: int, extra: dict | None = None) -> dict:
    return {"kind": "rgsr-pairs", "version": MANIFEST_VERSION, "pairs": n_pairs, "scene": scene_config,
            **(extra or {})}


def read_manifest(path) -> tuple[dict, list]:
    return read_jsonl(path, "rgsr-pairs", MANIFEST_VERSION)


def load_pair(entry: dict, base_dir):
    """Rebuild a ScanPair from a manifest entry; raises DataError on any malformed field."""
    from .synthbench.pairs import ScanPair

    base = Path(base_dir)
    try:
        S = read_cloud(base / entry["scan"], "scan")
        A = read_cloud(base / entry["aerial"], "aerial")
        markers = SurveyMarkers(np.asarray(entry["markers_aerial"], dtype=np.float64).reshape(-1, 3),
                                np.asarray(entry["markers_scan"], dtype=np.float64).reshape(-1, 3))
        meta = {"crop_center": entry["crop_center"]} if "crop_center" in entry else {}
        return ScanPair(
            scan_id=int(entry["scan_id"]),
            S=S,
            A=A,
            T_ref=pose_from_list(entry["T_ref"]),
            T_init=pose_from_list(entry["T_init"]),
            markers=markers,
            odom_pose=pose_from_list(entry["odom_pose"]),
            site=str(entry.get("site", "site")),
            trajectory=str(entry.get("trajectory", "traj0")),
            seed=int(entry.get("seed", 0)),
            meta=meta,
        )
    except KeyError as exc:
        raise DataError(f"manifest entry missing field {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


# -- result records ---------------------------------------------------------------------------

def results_header(method: str, gates: dict) -> dict:
    return {"kind": "rgsr-results", "version": RESULTS_VERSION, "method": method, "gates": gates}


def read_results(path) -> tuple[dict, list]:
    return read_jsonl(path, "rgsr-results", RESULTS_VERSION)
