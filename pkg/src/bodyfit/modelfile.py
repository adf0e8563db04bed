"""Versioned on-disk container for body models.

Layout: an ASCII magic line, one JSON header line describing dimensions,
DOF specs, Euler convention and the array directory, then the raw array
payloads back to back. Dense arrays are little-endian float64 (or int64 for
face indices); weight matrices are stored sparse as (row, col, value)
triplets. Loading validates every structural invariant and rejects the file
on the first violation.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ModelValidationError, SchemaVersionError
from .model import ROOT_PARENT, BodyModel, DofSpec, validate_model

MAGIC = b"#bodymodel\n"
SCHEMA_VERSION = 1


def _limits_to_json(limits):
    out = []
    for lo, hi in limits:
        out.append([None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi])
    return out


def _limits_from_json(raw):
    out = []
    for lo, hi in raw:
        out.append((-np.inf if lo is None else float(lo), np.inf if hi is None else float(hi)))
    return tuple(out)


def _dense_entry(name, arr, dtype):
    return {"name": name, "encoding": "raw", "dtype": dtype, "shape": list(arr.shape)}


def _sparse_entry(name, arr):
    nnz = int(np.count_nonzero(arr))
    return {"name": name, "encoding": "coo", "dtype": "f8", "shape": list(arr.shape), "nnz": nnz}


def _write_dense(fh, arr, dtype):
    fh.write(np.ascontiguousarray(arr).astype(dtype).tobytes())


def _write_sparse(fh, arr):
    rows, cols = np.nonzero(arr)
    fh.write(rows.astype("<i8").tobytes())
    fh.write(cols.astype("<i8").tobytes())
    fh.write(arr[rows, cols].astype("<f8").tobytes())


def _read_exact(fh, nbytes, what):
    data = fh.read(nbytes)
    if len(data) != nbytes:
        raise ModelValidationError(what, f"file truncated: wanted {nbytes} bytes, got {len(data)}")
    return data


def _read_dense(fh, entry):
    shape = tuple(entry["shape"])
    count = int(np.prod(shape)) if shape else 1
    dtype = np.dtype(entry["dtype"]).newbyteorder("<")
    data = _read_exact(fh, count * dtype.itemsize, entry["name"])
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def _read_sparse(fh, entry):
    shape = tuple(entry["shape"])
    nnz = int(entry["nnz"])
    rows = np.frombuffer(_read_exact(fh, nnz * 8, entry["name"]), dtype="<i8")
    cols = np.frombuffer(_read_exact(fh, nnz * 8, entry["name"]), dtype="<i8")
    vals = np.frombuffer(_read_exact(fh, nnz * 8, entry["name"]), dtype="<f8")
    if nnz and (rows.max() >= shape[0] or cols.max() >= shape[1] or rows.min() < 0 or cols.min() < 0):
        raise ModelValidationError(entry["name"], "sparse index out of bounds")
    dense = np.zeros(shape)
    dense[rows, cols] = vals
    return dense


def save_model(model: BodyModel, path: str | Path) -> str:
    """Write the model atomically; returns the file's sha256 hex digest."""
    path = Path(path)
    arrays: list[tuple[dict, np.ndarray]] = []

    def dense(name, arr, dtype="<f8"):
        arrays.append((_dense_entry(name, arr, dtype), arr))

    def sparse(name, arr):
        arrays.append((_sparse_entry(name, arr), arr))

    dense("template_skin", model.template_skin)
    dense("faces_skin", model.faces_skin, "<i8")
    dense("shape_dirs", model.shape_dirs)
    sparse("skin_weights", model.skin_weights)
    sparse("rest_joints_regressor", model.rest_joints_regressor)
    sparse("keypoint_regressor", model.keypoint_regressor)
    if model.template_skeleton is not None:
        dense("template_skeleton", model.template_skeleton)
        dense("faces_skeleton", model.faces_skeleton, "<i8")
        sparse("skeleton_weights", model.skeleton_weights)
    if model.pose_correctives is not None:
        dense("pose_correctives", model.pose_correctives)

    header = {
        "format": "bodymodel",
        "version": SCHEMA_VERSION,
        "name": model.name,
        "units": model.units,
        "euler_convention": "intrinsic",
        "counts": {
            "joints": model.num_joints,
            "pose_dofs": model.num_pose_dofs,
            "skin_vertices": model.num_skin_vertices,
            "skeleton_vertices": model.num_skeleton_vertices,
            "shape_dims": model.num_shape_dims,
            "keypoints": model.num_keypoints,
        },
        "joint_parents": [int(p) for p in model.joint_parents],
        "dof_specs": [
            {"joint": s.joint, "axes": s.axes, "limits": _limits_to_json(s.limits)}
            for s in model.dof_specs
        ],
        "joint_groups": {k: list(v) for k, v in sorted(model.joint_groups.items())},
        "keypoint_root": model.keypoint_root,
        "arrays": [e for e, _ in arrays],
    }

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
            fh.write(b"\n")
            for entry, arr in arrays:
                if entry["encoding"] == "raw":
                    _write_dense(fh, arr, entry["dtype"])
                else:
                    _write_sparse(fh, arr)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return checksum(path)


def load_model(path: str | Path) -> BodyModel:
    """Read and validate a model file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise ModelValidationError("magic", f"not a body model file: {path}")
        header = json.loads(fh.readline().decode())
        if header.get("format") != "bodymodel" or header.get("version") != SCHEMA_VERSION:
            raise SchemaVersionError(SCHEMA_VERSION, header.get("version"))
        if header.get("euler_convention") != "intrinsic":
            raise ModelValidationError(
                "euler_convention", f"unsupported convention {header.get('euler_convention')!r}"
            )
        data = {}
        for entry in header["arrays"]:
            if entry["encoding"] == "raw":
                data[entry["name"]] = _read_dense(fh, entry)
            elif entry["encoding"] == "coo":
                data[entry["name"]] = _read_sparse(fh, entry)
            else:
                raise ModelValidationError(entry["name"], f"unknown encoding {entry['encoding']!r}")
        if fh.read(1):
            raise ModelValidationError("arrays", "trailing bytes after declared arrays")

    counts = header["counts"]
    specs = tuple(
        DofSpec(joint=int(s["joint"]), axes=s["axes"], limits=_limits_from_json(s["limits"]))
        for s in header["dof_specs"]
    )
    model = BodyModel(
        name=header["name"],
        template_skin=data["template_skin"],
        faces_skin=data["faces_skin"].astype(int),
        shape_dirs=data["shape_dirs"],
        skin_weights=data["skin_weights"],
        joint_parents=np.asarray(header["joint_parents"], dtype=int),
        rest_joints_regressor=data["rest_joints_regressor"],
        keypoint_regressor=data["keypoint_regressor"],
        dof_specs=specs,
        template_skeleton=data.get("template_skeleton"),
        faces_skeleton=(
            data["faces_skeleton"].astype(int) if "faces_skeleton" in data else None
        ),
        skeleton_weights=data.get("skeleton_weights"),
        joint_groups={k: tuple(v) for k, v in header.get("joint_groups", {}).items()},
        keypoint_root=int(header.get("keypoint_root", 0)),
        units=header.get("units", "m"),
        pose_correctives=data.get("pose_correctives"),
    )
    for key, expected in (
        ("joints", model.num_joints),
        ("pose_dofs", model.num_pose_dofs),
        ("skin_vertices", model.num_skin_vertices),
        ("skeleton_vertices", model.num_skeleton_vertices),
        ("shape_dims", model.num_shape_dims),
        ("keypoints", model.num_keypoints),
    ):
        if counts.get(key) != expected:
            raise ModelValidationError(
                f"counts.{key}", f"header says {counts.get(key)}, arrays imply {expected}"
            )
    if model.joint_parents.shape[0] == 0 or model.joint_parents[0] != ROOT_PARENT:
        raise ModelValidationError("joint_parents", "first joint must be the root")
    validate_model(model)
    return model


def checksum(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
