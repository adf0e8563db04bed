"""Dataset records, batch conversion, and persistence.

Datasets are JSON-lines files: a manifest line followed by one record per
line. Array fields are base64-encoded little-endian float64, so save/load
round trips are bit-exact and files stay streamable and diffable. The batch
converter poses each record through its source model and fits the target
model to the resulting mesh, optionally in parallel; output order always
equals input order, so worker count never changes the bytes written.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .camera import Extrinsics, Intrinsics
from .errors import ConfigError, IncompatibleModelsError, RecordError, SchemaVersionError
from .fitting import fit_model_to_mesh
from .metrics import subset_middle_half
from .model import (
    LAYER_SKIN,
    BodyModel,
    JointSet2D,
    Mesh,
    PoseVector,
    ShapeVector,
    posed_skin_vertices,
)
from .optim import FitSchedule
from .params import ParamSet, zero_params
from .rotations import axis_angle_to_euler

log = logging.getLogger(__name__)

DATASET_SCHEMA = 1
CONVENTION_EULER = "euler"
CONVENTION_AXIS_ANGLE = "axis_angle"

# conversion failure policy: quarantine non-finite fits and fits that stall
# with a mean vertex error above this many millimeters
DEFAULT_REJECT_PVE_MM = 10.0


# -- array codec ---------------------------------------------------------------


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "b64": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    data = base64.b64decode(obj["b64"])
    return np.frombuffer(data, dtype="<f8").reshape(obj["shape"]).copy()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- record model ---------------------------------------------------------------


@dataclass(frozen=True)
class SourceParams:
    model_name: str
    pose: np.ndarray  # convention declared by the manifest
    shape: np.ndarray
    global_orient: np.ndarray | None = None  # axis-angle of the root


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    sequence_id: str = ""
    frame_index: int = 0
    camera_id: str = ""
    image_w: int = 0
    image_h: int = 0
    intrinsics: Intrinsics | None = None
    source: SourceParams | None = None
    target: ParamSet | None = None
    joints2d: JointSet2D | None = None
    fit_report: dict | None = None


@dataclass(frozen=True)
class DatasetManifest:
    schema_version: int = DATASET_SCHEMA
    source_model: str | None = None
    target_model: str | None = None
    source_convention: str = CONVENTION_EULER
    sample_count: int = 0
    sequences: dict[str, int] | None = None

    def __post_init__(self):
        if self.source_convention not in (CONVENTION_EULER, CONVENTION_AXIS_ANGLE):
            raise ConfigError(f"unknown source convention {self.source_convention!r}")
        object.__setattr__(self, "sequences", dict(self.sequences or {}))


# -- JSON (de)serialization ------------------------------------------------------


def _params_to_json(p: ParamSet) -> dict:
    return {
        "pose": encode_array(p.pose.values),
        "shape": encode_array(p.shape.values),
        "camera": {"s": p.camera.s, "t_x": p.camera.t_x, "t_y": p.camera.t_y},
    }


def _params_from_json(obj: dict) -> ParamSet:
    cam = obj["camera"]
    return ParamSet(
        pose=PoseVector(decode_array(obj["pose"])),
        shape=ShapeVector(decode_array(obj["shape"])),
        camera=Extrinsics(float(cam["s"]), float(cam["t_x"]), float(cam["t_y"])),
    )


def _intrinsics_to_json(i: Intrinsics) -> dict:
    return {
        "f_x": i.f_x, "f_y": i.f_y, "c_x": i.c_x, "c_y": i.c_y,
        "image_w": i.image_w, "image_h": i.image_h,
    }


def _intrinsics_from_json(obj: dict) -> Intrinsics:
    return Intrinsics(
        float(obj["f_x"]), float(obj["f_y"]), float(obj["c_x"]), float(obj["c_y"]),
        int(obj["image_w"]), int(obj["image_h"]),
    )


def record_to_json(rec: SampleRecord) -> dict:
    out = {
        "kind": "sample",
        "sample_id": rec.sample_id,
        "sequence_id": rec.sequence_id,
        "frame_index": rec.frame_index,
        "camera_id": rec.camera_id,
        "image_w": rec.image_w,
        "image_h": rec.image_h,
        "intrinsics": _intrinsics_to_json(rec.intrinsics) if rec.intrinsics else None,
        "source": None,
        "target": _params_to_json(rec.target) if rec.target else None,
        "joints2d": None,
        "fit_report": rec.fit_report,
    }
    if rec.source:
        out["source"] = {
            "model_name": rec.source.model_name,
            "pose": encode_array(rec.source.pose),
            "shape": encode_array(rec.source.shape),
            "global_orient": (
                encode_array(rec.source.global_orient)
                if rec.source.global_orient is not None
                else None
            ),
        }
    if rec.joints2d:
        out["joints2d"] = {
            "positions": encode_array(rec.joints2d.positions),
            "visibility": encode_array(rec.joints2d.visibility),
        }
    return out


def record_from_json(obj: dict) -> SampleRecord:
    sample_id = obj.get("sample_id", "<unknown>")

    def need(field):
        if field not in obj:
            raise RecordError(sample_id, field, "missing")
        return obj[field]

    try:
        source = None
        if obj.get("source"):
            s = obj["source"]
            source = SourceParams(
                model_name=s.get("model_name", ""),
                pose=decode_array(s["pose"]),
                shape=decode_array(s["shape"]),
                global_orient=(
                    decode_array(s["global_orient"]) if s.get("global_orient") else None
                ),
            )
        joints2d = None
        if obj.get("joints2d"):
            j = obj["joints2d"]
            joints2d = JointSet2D(decode_array(j["positions"]), decode_array(j["visibility"]))
        return SampleRecord(
            sample_id=str(need("sample_id")),
            sequence_id=str(obj.get("sequence_id", "")),
            frame_index=int(obj.get("frame_index", 0)),
            camera_id=str(obj.get("camera_id", "")),
            image_w=int(obj.get("image_w", 0)),
            image_h=int(obj.get("image_h", 0)),
            intrinsics=_intrinsics_from_json(obj["intrinsics"]) if obj.get("intrinsics") else None,
            source=source,
            target=_params_from_json(obj["target"]) if obj.get("target") else None,
            joints2d=joints2d,
            fit_report=obj.get("fit_report"),
        )
    except RecordError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(sample_id, getattr(exc, "args", ["?"])[0], str(exc)) from exc


# -- dataset files ---------------------------------------------------------------


def save_dataset(path: str | Path, manifest: DatasetManifest, records: list[SampleRecord]) -> None:
    """Write manifest plus records atomically; counts are recomputed."""
    path = Path(path)
    sequences: dict[str, int] = {}
    for rec in records:
        sequences[rec.sequence_id] = sequences.get(rec.sequence_id, 0) + 1
    manifest = replace(manifest, sample_count=len(records), sequences=sequences)
    head = {
        "kind": "dataset-manifest",
        "schema": manifest.schema_version,
        "source_model": manifest.source_model,
        "target_model": manifest.target_model,
        "source_convention": manifest.source_convention,
        "sample_count": manifest.sample_count,
        "sequences": manifest.sequences,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(_canonical(head) + "\n")
            for rec in records:
                fh.write(_canonical(record_to_json(rec)) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path: str | Path) -> tuple[DatasetManifest, list[SampleRecord]]:
    """Read and validate a dataset file; errors carry the sample id at fault."""
    path = Path(path)
    with open(path) as fh:
        head_line = fh.readline()
        if not head_line:
            raise RecordError("<manifest>", "kind", "empty dataset file")
        try:
            head = json.loads(head_line)
        except json.JSONDecodeError as exc:
            raise RecordError("<manifest>", "json", str(exc)) from exc
        if head.get("kind") != "dataset-manifest":
            raise RecordError("<manifest>", "kind", f"expected dataset-manifest, got {head.get('kind')!r}")
        if head.get("schema") != DATASET_SCHEMA:
            raise SchemaVersionError(DATASET_SCHEMA, head.get("schema"))
        manifest = DatasetManifest(
            schema_version=head["schema"],
            source_model=head.get("source_model"),
            target_model=head.get("target_model"),
            source_convention=head.get("source_convention", CONVENTION_EULER),
            sample_count=int(head.get("sample_count", 0)),
            sequences=head.get("sequences", {}),
        )
        records = []
        last_complete = "<manifest>"
        for line in fh:
            if not line.endswith("\n"):
                raise RecordError(
                    last_complete, "trailing", "file truncated after this sample"
                )
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(last_complete, "json", f"undecodable line after this sample: {exc}") from exc
            rec = record_from_json(obj)
            records.append(rec)
            last_complete = rec.sample_id
        if len(records) != manifest.sample_count:
            raise RecordError(
                last_complete,
                "sample_count",
                f"manifest promises {manifest.sample_count} samples, found {len(records)}; "
                "file is truncated or corrupt",
            )
    seen = set()
    for rec in records:
        if rec.sample_id in seen:
            raise RecordError(rec.sample_id, "sample_id", "duplicate sample id")
        seen.add(rec.sample_id)
    return manifest, records


# -- conversion --------------------------------------------------------------------


def source_pose_vector(model: BodyModel, source: SourceParams, convention: str) -> np.ndarray:
    """Translate a source pose into the model's Euler DOF vector."""
    if convention == CONVENTION_EULER:
        pose = np.asarray(source.pose, dtype=float)
        if pose.shape != (model.num_pose_dofs,):
            raise RecordError("<source>", "source.pose", f"expected {model.num_pose_dofs} DOFs")
        return pose
    # per-joint axis-angle: every joint needs a full 3-axis order
    aa = np.asarray(source.pose, dtype=float).reshape(model.num_joints, 3)
    pose = np.zeros(model.num_pose_dofs)
    for spec in model.dof_specs:
        if len(spec.axes) != 3:
            raise IncompatibleModelsError(
                f"axis-angle source poses need 3-axis joints; joint {spec.joint} has {spec.axes!r}"
            )
        idx = model.joint_dof_indices(spec.joint)
        pose[list(idx)] = axis_angle_to_euler(aa[spec.joint], spec.axes)
    return pose


@dataclass(frozen=True)
class ConversionOutcome:
    record: SampleRecord
    accepted: bool
    reason: str = ""


_WORKER_STATE: dict = {}


def _init_convert_worker(source_model, target_model, schedule, convention, init_mode, reject_pve_mm):
    _WORKER_STATE["args"] = (
        source_model, target_model, schedule, convention, init_mode, reject_pve_mm
    )


def _convert_one_in_worker(rec: SampleRecord) -> ConversionOutcome:
    return convert_record(rec, *_WORKER_STATE["args"])


def convert_record(
    rec: SampleRecord,
    source_model: BodyModel,
    target_model: BodyModel,
    schedule: FitSchedule,
    convention: str = CONVENTION_EULER,
    init_mode: str = "zero",
    reject_pve_mm: float = DEFAULT_REJECT_PVE_MM,
) -> ConversionOutcome:
    """Fit the target model to one record's source mesh."""
    if rec.source is None:
        return ConversionOutcome(rec, False, "record has no source parameters")
    try:
        pose = source_pose_vector(source_model, rec.source, convention)
        verts = posed_skin_vertices(source_model, pose, np.asarray(rec.source.shape, dtype=float))
        target_mesh = Mesh(verts, LAYER_SKIN)
        if init_mode == "provided" and rec.target is not None:
            init = rec.target
        else:
            init = zero_params(target_model)
        fitted, reports = fit_model_to_mesh(
            target_model,
            target_mesh,
            init=init,
            schedule=schedule,
            source_global_orient=rec.source.global_orient,
        )
    except Exception as exc:  # per-sample failures are recorded, not fatal
        return ConversionOutcome(rec, False, f"{type(exc).__name__}: {exc}")
    final = reports[-1]
    report = {
        "pve_mm": final.pve_mm,
        "objective": final.objective,
        "stages": [
            {"name": r.name, "iterations": r.iterations, "objective": r.objective, "pve_mm": r.pve_mm}
            for r in reports
        ],
    }
    out = replace(rec, target=fitted, fit_report=report)
    if not np.isfinite(final.objective):
        return ConversionOutcome(out, False, "non-finite objective")
    if final.pve_mm > reject_pve_mm:
        return ConversionOutcome(out, False, f"pve {final.pve_mm:.3f}mm above {reject_pve_mm}mm")
    return ConversionOutcome(out, True)


def convert_dataset(
    records: list[SampleRecord],
    source_model: BodyModel,
    target_model: BodyModel,
    schedule: FitSchedule,
    convention: str = CONVENTION_EULER,
    init_mode: str = "zero",
    workers: int = 1,
    reject_pve_mm: float = DEFAULT_REJECT_PVE_MM,
) -> list[ConversionOutcome]:
    """Convert every record; output order equals input order for any worker count."""
    if source_model.num_skin_vertices != target_model.num_skin_vertices:
        raise IncompatibleModelsError(
            f"source has {source_model.num_skin_vertices} skin vertices, "
            f"target has {target_model.num_skin_vertices}; vertex-to-vertex fitting "
            "requires matching layouts"
        )
    if init_mode not in ("zero", "provided"):
        raise ConfigError(f"init_mode must be 'zero' or 'provided', got {init_mode!r}")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    args = (source_model, target_model, schedule, convention, init_mode, reject_pve_mm)
    if workers == 1:
        return [convert_record(rec, *args) for rec in records]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_convert_worker, initargs=args
    ) as pool:
        return list(pool.map(_convert_one_in_worker, records, chunksize=1))


# -- subset construction -------------------------------------------------------------


def build_hard_subset(records: list[SampleRecord], camera_id: str) -> list[SampleRecord]:
    """Keep one camera's records, then the middle half of each sequence.

    Frames are ranked by frame index within each sequence; sequences shorter
    than four frames are skipped with a warning. Input order is preserved.
    """
    by_camera = [rec for rec in records if rec.camera_id == camera_id]
    by_sequence: dict[str, list[SampleRecord]] = {}
    for rec in by_camera:
        by_sequence.setdefault(rec.sequence_id, []).append(rec)
    keep_ids = set()
    for seq_id, seq in by_sequence.items():
        if len(seq) < 4:
            log.warning(
                "sequence %r has %d frames (< 4); skipped from the hard subset",
                seq_id, len(seq),
            )
            continue
        ordered = sorted(seq, key=lambda r: r.frame_index)
        middle = subset_middle_half(len(ordered))
        keep_ids.update(ordered[i].sample_id for i in middle)
    return [rec for rec in by_camera if rec.sample_id in keep_ids]


# -- small single-object files ---------------------------------------------------------


def save_mesh(path: str | Path, mesh: Mesh) -> None:
    obj = {"kind": "mesh", "layer": mesh.layer, "vertices": encode_array(mesh.vertices)}
    _atomic_write_text(path, _canonical(obj) + "\n")


def load_mesh(path: str | Path) -> Mesh:
    obj = _load_json_object(path, "mesh")
    return Mesh(decode_array(obj["vertices"]), obj.get("layer", LAYER_SKIN))


def save_points3d(path: str | Path, points: np.ndarray) -> None:
    obj = {"kind": "points3d", "points": encode_array(points)}
    _atomic_write_text(path, _canonical(obj) + "\n")


def load_points3d(path: str | Path) -> np.ndarray:
    return decode_array(_load_json_object(path, "points3d")["points"])


def save_points2d(path: str | Path, points: np.ndarray) -> None:
    obj = {"kind": "points2d", "points": encode_array(points)}
    _atomic_write_text(path, _canonical(obj) + "\n")


def save_params(path: str | Path, params: ParamSet) -> None:
    obj = {"kind": "params", **_params_to_json(params)}
    _atomic_write_text(path, _canonical(obj) + "\n")


def load_params(path: str | Path) -> ParamSet:
    return _params_from_json(_load_json_object(path, "params"))


def _load_json_object(path, kind):
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("kind") != kind:
        raise RecordError(str(path), "kind", f"expected {kind!r}, got {obj.get('kind')!r}")
    return obj


def _atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- cascade trace files ------------------------------------------------------------


def trace_to_json(sample_id: str, trace) -> dict:
    return {
        "kind": "cascade-trace",
        "sample_id": sample_id,
        "summary": trace.summary,
        "stages": [
            {
                "params": _params_to_json(stage.params),
                "objective": stage.objective,
                "losses": stage.losses,
            }
            for stage in trace.stages
        ],
    }


def trace_from_json(obj: dict):
    from .cascade import CascadeTrace, StageOutput

    if obj.get("kind") != "cascade-trace":
        raise RecordError(obj.get("sample_id", "?"), "kind", "expected cascade-trace")
    stages = tuple(
        StageOutput(
            params=_params_from_json(s["params"]),
            objective=float(s["objective"]),
            losses=dict(s.get("losses", {})),
        )
        for s in obj["stages"]
    )
    return obj["sample_id"], CascadeTrace(stages=stages, summary=dict(obj.get("summary", {})))


def save_traces(path: str | Path, items: list[tuple[str, object]]) -> None:
    lines = [_canonical(trace_to_json(sid, tr)) + "\n" for sid, tr in items]
    _atomic_write_text(path, "".join(lines))


def load_traces(path: str | Path) -> list[tuple[str, object]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(trace_from_json(json.loads(line)))
    return out


# -- evaluation records ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    """One side (prediction or truth) of an evaluation pair."""

    sample_id: str
    joints3d: np.ndarray | None = None  # (K, 3) meters
    joints2d: np.ndarray | None = None  # (K, 2) pixels
    visibility2d: np.ndarray | None = None
    vertices: np.ndarray | None = None  # (V, 3) meters


def save_eval_records(path: str | Path, records: list[EvalRecord]) -> None:
    lines = []
    for rec in records:
        obj = {
            "kind": "eval-sample",
            "sample_id": rec.sample_id,
            "joints3d": encode_array(rec.joints3d) if rec.joints3d is not None else None,
            "joints2d": encode_array(rec.joints2d) if rec.joints2d is not None else None,
            "visibility2d": (
                encode_array(rec.visibility2d) if rec.visibility2d is not None else None
            ),
            "vertices": encode_array(rec.vertices) if rec.vertices is not None else None,
        }
        lines.append(_canonical(obj) + "\n")
    _atomic_write_text(path, "".join(lines))


def load_eval_records(path: str | Path) -> list[EvalRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("kind") != "eval-sample":
                raise RecordError(obj.get("sample_id", "?"), "kind", "expected eval-sample")
            out.append(
                EvalRecord(
                    sample_id=str(obj["sample_id"]),
                    joints3d=decode_array(obj["joints3d"]) if obj.get("joints3d") else None,
                    joints2d=decode_array(obj["joints2d"]) if obj.get("joints2d") else None,
                    visibility2d=(
                        decode_array(obj["visibility2d"]) if obj.get("visibility2d") else None
                    ),
                    vertices=decode_array(obj["vertices"]) if obj.get("vertices") else None,
                )
            )
    return out
