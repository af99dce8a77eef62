"""File codecs: PLY / OBJ geometry, PFM / PNG images, and the JSON schemas.

Binary formats are written little-endian. PLY clouds store float32
positions and float32 colors so a write/read cycle is lossless at float32
precision; PNG color output is quantized to 8 bits per channel (the one
lossy path). Malformed inputs raise CodecError with byte-offset
diagnostics.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, CameraPose, DepthMap, PointCloud, Trajectory
from .errors import CodecError
from .humanalign import CharacterSequence, KeypointSet2D, KeypointSet3D
from .trajgen import Rotation, TrajectorySpec, Translation

CAMERA_CONVENTION = "cam2world,x-right,y-down,z-forward"
GUIDANCE_STREAM_MAGIC = b"WGV1"

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# PLY point clouds and meshes


_PLY_SCALAR = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "i2", "ushort": "u2", "int16": "i2", "uint16": "u2",
    "int": "i4", "uint": "u4", "int32": "i4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def save_ply(path: PathLike, cloud: PointCloud) -> None:
    """Write a binary little-endian PLY with float32 xyz + rgb (and provenance)."""
    n = len(cloud)
    props = [
        "property float x", "property float y", "property float z",
        "property float red", "property float green", "property float blue",
    ]
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
              ("red", "<f4"), ("green", "<f4"), ("blue", "<f4")]
    if cloud.source_pixel is not None:
        props += ["property int source_u", "property int source_v"]
        fields += [("source_u", "<i4"), ("source_v", "<i4")]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n" + "\n".join(props) + "\nend_header\n"
    )
    rec = np.empty(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype(np.float32)
    rec["red"], rec["green"], rec["blue"] = cloud.colors.T.astype(np.float32)
    if cloud.source_pixel is not None:
        rec["source_u"], rec["source_v"] = cloud.source_pixel.T.astype(np.int32)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())


def _parse_ply_header(data: bytes, path: PathLike):
    if not data.startswith(b"ply"):
        raise CodecError(f"{path}: bad magic at byte 0, expected 'ply'")
    end = data.find(b"end_header\n")
    if end < 0:
        raise CodecError(f"{path}: no end_header within the first {len(data)} bytes")
    body_off = end + len(b"end_header\n")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []  # (name, count, [(kind, name, dtype-or-list-spec)])
    for ln in lines[1:]:
        tok = ln.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise CodecError(f"{path}: property before any element in header")
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[4], (tok[2], tok[3])))
            else:
                if tok[1] not in _PLY_SCALAR:
                    raise CodecError(f"{path}: unsupported property type {tok[1]!r}")
                elements[-1][2].append(("scalar", tok[2], tok[1]))
    if fmt != "binary_little_endian":
        raise CodecError(f"{path}: unsupported format {fmt!r} (binary_little_endian only)")
    return elements, body_off


def load_ply(path: PathLike):
    """Read a PLY cloud or mesh.

    Returns (positions (N,3) float64, colors (N,3) float64 or None,
    faces (F,3) int64 or None). uchar colors are normalized by 255.
    """
    data = Path(path).read_bytes()
    elements, off = _parse_ply_header(data, path)
    positions = colors = faces = None
    for name, count, props in elements:
        if name == "vertex":
            dt = np.dtype([(p[1], "<" + _PLY_SCALAR[p[2]]) for p in props if p[0] == "scalar"])
            if any(p[0] == "list" for p in props):
                raise CodecError(f"{path}: list properties on vertex element unsupported")
            need = count * dt.itemsize
            have = len(data) - off
            if have < need:
                actual = have // dt.itemsize
                raise CodecError(
                    f"{path}: truncated at byte {off + have}: "
                    f"expected {count} vertices, found {actual}"
                )
            rec = np.frombuffer(data, dtype=dt, count=count, offset=off)
            off += need
            names = rec.dtype.names
            if not all(k in names for k in ("x", "y", "z")):
                raise CodecError(f"{path}: vertex element missing x/y/z properties")
            positions = np.stack(
                [rec["x"], rec["y"], rec["z"]], axis=1
            ).astype(np.float64)
            if all(k in names for k in ("red", "green", "blue")):
                cols = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
                if rec.dtype["red"].kind == "u":
                    cols = cols.astype(np.float64) / 255.0
                colors = np.clip(cols.astype(np.float64), 0.0, 1.0)
        elif name == "face":
            faces_list = []
            for i in range(count):
                if off >= len(data):
                    raise CodecError(
                        f"{path}: truncated at byte {off}: expected {count} faces, found {i}"
                    )
                cnt_type, idx_type = props[0][2]
                cnt_dt = np.dtype("<" + _PLY_SCALAR[cnt_type])
                k = int(np.frombuffer(data, dtype=cnt_dt, count=1, offset=off)[0])
                off += cnt_dt.itemsize
                idx_dt = np.dtype("<" + _PLY_SCALAR[idx_type])
                idx = np.frombuffer(data, dtype=idx_dt, count=k, offset=off)
                off += k * idx_dt.itemsize
                if k != 3:
                    raise CodecError(f"{path}: non-triangle face of {k} vertices at byte {off}")
                faces_list.append(idx)
            faces = np.asarray(faces_list, dtype=np.int64)
    if positions is None:
        raise CodecError(f"{path}: no vertex element found")
    return positions, colors, faces


def load_ply_cloud(path: PathLike) -> PointCloud:
    positions, colors, _ = load_ply(path)
    if colors is None:
        colors = np.full((len(positions), 3), 0.8)
    return PointCloud(positions=positions, colors=colors)


def save_obj(path: PathLike, vertices: np.ndarray, faces: Optional[np.ndarray] = None) -> None:
    """Write a minimal OBJ (v and f records, 1-based indices)."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices).reshape(-1, 3)]
    if faces is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces).reshape(-1, 3)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path: PathLike):
    """Read OBJ vertices and triangle faces; returns (vertices, colors, faces)."""
    verts: List[List[float]] = []
    cols: List[List[float]] = []
    faces: List[List[int]] = []
    for lineno, ln in enumerate(Path(path).read_text().splitlines(), start=1):
        tok = ln.split()
        if not tok:
            continue
        if tok[0] == "v":
            vals = [float(t) for t in tok[1:]]
            if len(vals) not in (3, 6):
                raise CodecError(f"{path}:{lineno}: vertex needs 3 or 6 floats")
            verts.append(vals[:3])
            if len(vals) == 6:
                cols.append(vals[3:])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) - 1 for t in tok[1:]]
            if len(idx) != 3:
                raise CodecError(f"{path}:{lineno}: only triangle faces supported")
            faces.append(idx)
    colors = np.asarray(cols) if len(cols) == len(verts) and cols else None
    face_arr = np.asarray(faces, dtype=np.int64) if faces else None
    return np.asarray(verts, dtype=np.float64), colors, face_arr


# ---------------------------------------------------------------------------
# PFM and PNG depth / images


def save_pfm(path: PathLike, depth: DepthMap) -> None:
    """Write grayscale little-endian PFM; invalid pixels are stored as 0."""
    values = np.where(depth.valid, depth.values, 0.0).astype("<f4")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(values[::-1].tobytes())  # PFM rows run bottom-to-top


def load_pfm(path: PathLike) -> DepthMap:
    """Read grayscale PFM; non-positive / non-finite pixels become invalid.

    Big-endian files (positive scale) are byte-swapped on read.
    """
    data = Path(path).read_bytes()
    off = 0

    def token() -> bytes:
        nonlocal off
        while off < len(data) and data[off : off + 1].isspace():
            off += 1
        start = off
        while off < len(data) and not data[off : off + 1].isspace():
            off += 1
        if start == off:
            raise CodecError(f"{path}: unexpected end of header at byte {off}")
        return data[start:off]

    magic = token()
    if magic == b"PF":
        raise CodecError(f"{path}: color PFM not supported (expected grayscale 'Pf')")
    if magic != b"Pf":
        raise CodecError(f"{path}: bad magic {magic!r} at byte 0, expected 'Pf'")
    try:
        w = int(token())
        h = int(token())
        scale = float(token())
    except ValueError as exc:
        raise CodecError(f"{path}: malformed header near byte {off}: {exc}") from exc
    off += 1  # single whitespace separates header from raster
    need = w * h * 4
    if len(data) - off < need:
        raise CodecError(
            f"{path}: truncated raster at byte {len(data)}: need {need} bytes from {off}"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(data, dtype=dtype, count=w * h, offset=off)
    values = values.astype(np.float64).reshape(h, w)[::-1].copy()
    return DepthMap.from_values(values)


def save_png(path: PathLike, image: np.ndarray) -> None:
    """Write an (h, w, 3) float [0,1] or uint8 image as 8-bit RGB PNG."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def load_png(path: PathLike) -> np.ndarray:
    """Read a PNG as (h, w, 3) uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_mask_png(path: PathLike, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def save_depth_png(path: PathLike, depth: DepthMap) -> None:
    """Write 16-bit PNG depth plus a JSON sidecar {"scale": meters-per-unit}."""
    valid = depth.values[depth.valid]
    peak = float(valid.max()) if valid.size else 1.0
    scale = peak / 65535.0
    quant = np.zeros(depth.shape, dtype=np.uint16)
    quant[depth.valid] = np.clip(
        np.round(depth.values[depth.valid] / scale), 1, 65535
    ).astype(np.uint16)
    Image.fromarray(quant).save(path, format="PNG")  # uint16 -> 16-bit grayscale
    Path(str(path) + ".json").write_text(json.dumps({"scale": scale}))


def load_depth_png(path: PathLike) -> DepthMap:
    """Read 16-bit PNG depth with its JSON sidecar; 0 pixels are invalid."""
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise CodecError(f"{path}: missing sidecar {sidecar}")
    scale = float(json.loads(sidecar.read_text())["scale"])
    with Image.open(path) as im:
        raw = np.asarray(im, dtype=np.uint16)
    return DepthMap.from_values(raw.astype(np.float64) * scale)


def load_depth(path: PathLike) -> DepthMap:
    """Dispatch depth loading by extension: .pfm or 16-bit .png + sidecar."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return load_pfm(path)
    if suffix == ".png":
        return load_depth_png(path)
    raise CodecError(f"{path}: unknown depth format {suffix!r} (use .pfm or .png)")


# ---------------------------------------------------------------------------
# Camera / trajectory / keypoint / spec JSON


def _pose_to_json(pose: CameraPose) -> dict:
    return {
        "rotation": [float(x) for x in pose.rotation.reshape(-1)],
        "center": [float(x) for x in pose.center],
    }


def _pose_from_json(frame: dict) -> CameraPose:
    return CameraPose(
        np.asarray(frame["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(frame["center"], dtype=np.float64),
    )


def save_cameras(path: PathLike, intr: CameraIntrinsics, poses: Sequence[CameraPose]) -> None:
    doc = {
        "intrinsics": {
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        },
        "frames": [_pose_to_json(p) for p in poses],
        "convention": CAMERA_CONVENTION,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_cameras(path: PathLike) -> Tuple[CameraIntrinsics, List[CameraPose]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CodecError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    conv = doc.get("convention")
    if conv != CAMERA_CONVENTION:
        raise CodecError(f"{path}: convention {conv!r} != {CAMERA_CONVENTION!r}")
    k = doc["intrinsics"]
    intr = CameraIntrinsics(
        fx=float(k["fx"]), fy=float(k["fy"]), cx=float(k["cx"]), cy=float(k["cy"]),
        width=int(k["width"]), height=int(k["height"]),
    )
    poses = [_pose_from_json(f) for f in doc["frames"]]
    if not poses:
        raise CodecError(f"{path}: no frames")
    return intr, poses


def save_trajectory(path: PathLike, traj: Trajectory) -> None:
    save_cameras(path, traj.intrinsics, traj.poses)


def load_trajectory(path: PathLike) -> Trajectory:
    intr, poses = load_cameras(path)
    return Trajectory(intrinsics=intr, poses=tuple(poses))


def save_keypoints2d(path: PathLike, kp: KeypointSet2D) -> None:
    doc = {
        "format": "coco17",
        "points": [[float(u), float(v)] for u, v in kp.points],
        "confidence": [float(c) for c in kp.confidence],
    }
    Path(path).write_text(json.dumps(doc))


def load_keypoints2d(path: PathLike) -> KeypointSet2D:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "coco17":
        raise CodecError(f"{path}: keypoint format {doc.get('format')!r} != 'coco17'")
    return KeypointSet2D(
        points=np.asarray(doc["points"], dtype=np.float64),
        confidence=np.asarray(doc["confidence"], dtype=np.float64),
    )


def save_keypoints3d(path: PathLike, kp: KeypointSet3D) -> None:
    doc = {
        "points3d": [[float(x) for x in p] for p in kp.points],
        "weights": [float(w) for w in kp.weights],
    }
    Path(path).write_text(json.dumps(doc))


def load_keypoints3d(path: PathLike, frame: str = "human_world") -> KeypointSet3D:
    doc = json.loads(Path(path).read_text())
    pts = np.asarray(doc["points3d"], dtype=np.float64)
    weights = np.asarray(doc.get("weights", np.ones(len(pts))), dtype=np.float64)
    return KeypointSet3D(points=pts, weights=weights, frame=frame)


def save_roots(path: PathLike, roots: np.ndarray) -> None:
    Path(path).write_text(
        json.dumps({"roots": [[float(x) for x in r] for r in np.asarray(roots).reshape(-1, 3)]})
    )


def load_roots(path: PathLike) -> np.ndarray:
    doc = json.loads(Path(path).read_text())
    return np.asarray(doc["roots"], dtype=np.float64).reshape(-1, 3)


def save_correspondences(path: PathLike, mono, metric, weight) -> None:
    rows = [
        {"mono": float(d), "metric": float(m), "weight": float(w)}
        for d, m, w in zip(mono, metric, weight)
    ]
    Path(path).write_text(json.dumps(rows))


def load_correspondences(path: PathLike):
    from .depthalign import DepthCorrespondences

    rows = json.loads(Path(path).read_text())
    return DepthCorrespondences.from_pairs(
        (r["mono"], r["metric"], r.get("weight", 1.0)) for r in rows
    )


def save_trajectory_spec(path: PathLike, spec: TrajectorySpec) -> None:
    segments = []
    for seg in spec.segments:
        if isinstance(seg, Rotation):
            segments.append(
                {"rotate": {"azimuth": seg.azimuth_deg, "elevation": seg.elevation_deg}}
            )
        else:
            segments.append({"translate": [seg.dx, seg.dy, seg.dz]})
    doc = {"frames": spec.frame_count, "segments": segments}
    if spec.follow:
        doc["follow"] = spec.follow
    Path(path).write_text(json.dumps(doc, indent=1))


def load_trajectory_spec(path: PathLike) -> TrajectorySpec:
    doc = json.loads(Path(path).read_text())
    segments: List = []
    for i, seg in enumerate(doc.get("segments", [])):
        if "rotate" in seg:
            r = seg["rotate"]
            segments.append(
                Rotation(
                    azimuth_deg=float(r.get("azimuth", 0.0)),
                    elevation_deg=float(r.get("elevation", 0.0)),
                )
            )
        elif "translate" in seg:
            t = seg["translate"]
            segments.append(Translation(dx=float(t[0]), dy=float(t[1]), dz=float(t[2])))
        else:
            raise CodecError(f"{path}: segment {i} is neither 'rotate' nor 'translate'")
    return TrajectorySpec(
        frame_count=int(doc.get("frames", 81)),
        segments=tuple(segments),
        follow=doc.get("follow"),
    )


# ---------------------------------------------------------------------------
# Guidance-video output


def save_guidance_video(out_dir: PathLike, video) -> List[Path]:
    """Write per-frame color PNG / depth PFM / mask PNG plus an index JSON.

    Returns the written paths (index last).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    names = {"color": [], "depth": [], "mask": []}
    for i, f in enumerate(video.frames):
        paths = {
            "color": out_dir / f"color_{i:03d}.png",
            "depth": out_dir / f"depth_{i:03d}.pfm",
            "mask": out_dir / f"mask_{i:03d}.png",
        }
        save_png(paths["color"], f.color)
        save_pfm(
            paths["depth"], DepthMap(np.where(f.mask, f.depth, 0.0), f.mask & (f.depth > 0))
        )
        save_mask_png(paths["mask"], f.mask)
        for key, p in paths.items():
            names[key].append(p.name)
            written.append(p)
    index = out_dir / "index.json"
    index.write_text(
        json.dumps(
            {
                "frames": len(video.frames),
                "reference_frame_index": video.reference_frame_index,
                **names,
            },
            indent=1,
        )
    )
    written.append(index)
    return written


def save_guidance_stream(path: PathLike, frames: Sequence[np.ndarray]) -> None:
    """Write the packed color stream: magic, then per-frame h, w, raw RGB float32 LE."""
    with open(path, "wb") as f:
        f.write(GUIDANCE_STREAM_MAGIC)
        for color in frames:
            color = np.asarray(color, dtype="<f4")
            h, w = color.shape[:2]
            f.write(struct.pack("<II", h, w))
            f.write(color.tobytes())


def load_guidance_stream(path: PathLike) -> List[np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != GUIDANCE_STREAM_MAGIC:
        raise CodecError(f"{path}: bad magic {data[:4]!r} at byte 0")
    off = 4
    frames = []
    while off < len(data):
        if len(data) - off < 8:
            raise CodecError(f"{path}: truncated frame header at byte {off}")
        h, w = struct.unpack_from("<II", data, off)
        off += 8
        need = h * w * 3 * 4
        if len(data) - off < need:
            raise CodecError(
                f"{path}: truncated frame payload at byte {off}: need {need} bytes"
            )
        frames.append(
            np.frombuffer(data, dtype="<f4", count=h * w * 3, offset=off)
            .reshape(h, w, 3)
            .astype(np.float64)
        )
        off += need
    return frames


# ---------------------------------------------------------------------------
# Character sequences


def load_character_sequence(seq_dir: PathLike) -> CharacterSequence:
    """Load a per-frame PLY/OBJ directory plus its roots.json track.

    Frame files are taken in sorted name order; topology comes from the
    first frame. A missing roots.json falls back to per-frame vertex
    centroids.
    """
    seq_dir = Path(seq_dir)
    files = sorted(
        [p for p in seq_dir.iterdir() if p.suffix.lower() in (".ply", ".obj")]
    )
    if not files:
        raise CodecError(f"{seq_dir}: no .ply/.obj frame files")
    verts = []
    faces = None
    for i, p in enumerate(files):
        if p.suffix.lower() == ".ply":
            v, _, f = load_ply(p)
        else:
            v, _, f = load_obj(p)
        verts.append(v)
        if i == 0:
            faces = f
    arr = np.asarray(verts)
    roots_file = seq_dir / "roots.json"
    if roots_file.exists():
        roots = load_roots(roots_file)
        if len(roots) != len(arr):
            raise CodecError(
                f"{seq_dir}: {len(roots)} roots for {len(arr)} frames"
            )
    else:
        roots = arr.mean(axis=1)
    return CharacterSequence(vertices=arr, roots=roots, faces=faces)
