"""Binary checkpoints, the dataset container, and metrics files.

Checkpoint layout (all integers little-endian):

    magic   b"RFPX1"
    u64     header length in bytes
    header  canonical JSON: {"format": 1, "entries": [...], "meta": {...}}
            entries sorted by name, each {name, shape, dtype: "f32",
            offset, trainable}; offsets ascend contiguously from 0
    payload raw float32 values, one slab per entry at its offset
    u32     CRC32 of the payload

Parameters are float64 in memory and float32 on disk, so save->load
round-trips exactly to f32 precision and save->load->save is
byte-identical. Datasets are a directory with an index.json plus one
raw-f32 binary per trajectory (frame planes, then the 7-float action
row per step). Metrics append to a CSV with the evaluation-table column
layout and to a JSONL stream; appends never rewrite history.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import sim
from .analysis import SuccessTable
from .config import ModelConfig
from .depth import DepthStats
from .errors import CompatibilityError, ContractError, CorruptionError
from .policy import Model, init_model
from .training import TrainReport

MAGIC = b"RFPX1"
FORMAT_VERSION = 1

CSV_HEADER = "model,train,test,task1,task2,task3,task4,task5,avg\n"


# --- checkpoints ---------------------------------------------------------------


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(model: Model, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.params.items():  # lexicographic
        blob = tensor.data.astype("<f4").tobytes()
        entries.append({
            "name": name,
            "shape": list(tensor.data.shape),
            "dtype": "f32",
            "offset": offset,
            "trainable": bool(tensor.requires_grad),
        })
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    header = _canonical_json({
        "format": FORMAT_VERSION,
        "entries": entries,
        "meta": {
            "model_config": dataclasses.asdict(model.cfg),
            "depth_stats": dataclasses.asdict(model.depth_stats)
            if model.depth_stats else None,
        },
    })
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))
    return path


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"checkpoint truncated while reading {what}")
    return data


def read_checkpoint_header(path: str | Path) -> dict:
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "magic") != MAGIC:
            raise CorruptionError(f"bad magic in {path}; not a checkpoint")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        if hlen > 100_000_000:
            raise CorruptionError(f"implausible header length {hlen}")
        try:
            return json.loads(_read_exact(f, hlen, "header"))
        except json.JSONDecodeError as e:
            raise CorruptionError(f"unreadable checkpoint header: {e}") from e


def load_checkpoint(path: str | Path,
                    expect_model_cfg: ModelConfig | None = None) -> Model:
    """Rebuild a model from a checkpoint; verifies CRC and the manifest.

    When expect_model_cfg is given, the stored parameter names must match
    the names that configuration would create; otherwise the embedded
    configuration is used as-is.
    """
    path = Path(path)
    header = read_checkpoint_header(path)
    with open(path, "rb") as f:
        f.seek(len(MAGIC))
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        _read_exact(f, hlen, "header")
        entries = header["entries"]
        payload_len = 0
        for e in entries:
            payload_len = max(payload_len, e["offset"] + 4 * int(np.prod(e["shape"] or [1])))
        payload = _read_exact(f, payload_len, "payload")
        (crc_stored,) = struct.unpack("<I", _read_exact(f, 4, "checksum"))
    if zlib.crc32(payload) != crc_stored:
        raise CorruptionError(f"payload CRC mismatch in {path}")

    meta = header.get("meta", {})
    cfg = ModelConfig(**meta["model_config"])
    stats = DepthStats(**meta["depth_stats"]) if meta.get("depth_stats") else None
    if expect_model_cfg is not None:
        _check_manifest_names(entries, expect_model_cfg, stats)
        cfg = expect_model_cfg

    model = init_model(cfg, stats)
    stored = {e["name"]: e for e in entries}
    model_names = set(model.params.names())
    if set(stored) != model_names:
        missing = sorted(model_names - set(stored))
        extra = sorted(set(stored) - model_names)
        raise CompatibilityError(
            f"manifest does not match model: missing {missing[:3]}, unexpected {extra[:3]}"
        )
    for name, tensor in model.params.items():
        e = stored[name]
        if list(tensor.data.shape) != e["shape"]:
            raise CompatibilityError(
                f"shape mismatch for {name}: stored {e['shape']}, model {list(tensor.data.shape)}"
            )
        count = int(np.prod(e["shape"] or [1]))
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=e["offset"]).astype(np.float64)
        tensor.data = arr.reshape(tensor.data.shape)
        tensor.requires_grad = bool(e["trainable"])
    return model


def _check_manifest_names(entries, cfg: ModelConfig, stats):
    expected = set(init_model(cfg, stats).params.names())
    stored = {e["name"] for e in entries}
    if stored == expected:
        return
    missing = sorted(expected - stored)
    extra = sorted(stored - expected)
    prefix = (missing or extra)[0].rsplit(".", 1)[0] + "."
    raise CompatibilityError(
        f"checkpoint incompatible with requested config: prefix {prefix!r} "
        f"(missing {missing[:3]}, unexpected {extra[:3]})"
    )


# --- dataset container -----------------------------------------------------------


def _traj_filename(i: int) -> str:
    return f"traj_{i:05d}.bin"


def save_dataset(trajectories: list[sim.Trajectory], out_dir: str | Path,
                 meta: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hw = sim.IMAGE_HW
    index = {
        "version": 1,
        "image_hw": hw,
        "meta": meta or {},
        "trajectories": [],
    }
    for i, traj in enumerate(trajectories):
        fname = _traj_filename(i)
        with open(out_dir / fname, "wb") as f:
            for obs, action in traj.steps:
                f.write(np.ascontiguousarray(obs.rgb_static.transpose(2, 0, 1),
                                             dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(obs.rgb_gripper.transpose(2, 0, 1),
                                             dtype="<f4").tobytes())
                f.write(np.asarray(obs.depth_static, dtype="<f4").tobytes())
                f.write(np.asarray(obs.depth_gripper, dtype="<f4").tobytes())
                row = np.empty(7, dtype="<f4")
                row[:6] = action.pose
                row[6] = 1.0 if action.gripper_closed else 0.0
                f.write(row.tobytes())
        index["trajectories"].append({
            "file": fname,
            "instruction": traj.instruction,
            "family": traj.family,
            "palette": traj.palette,
            "seed": traj.seed,
            "variant": traj.variant,
            "n_steps": len(traj.steps),
        })
    (out_dir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return out_dir


def load_dataset(in_dir: str | Path) -> list[sim.Trajectory]:
    in_dir = Path(in_dir)
    index_path = in_dir / "index.json"
    if not index_path.exists():
        raise CorruptionError(f"no index.json under {in_dir}")
    index = json.loads(index_path.read_text())
    hw = index["image_hw"]
    step_floats = 2 * 3 * hw * hw + 2 * hw * hw + 7
    out = []
    for rec in index["trajectories"]:
        raw = (in_dir / rec["file"]).read_bytes()
        expect = rec["n_steps"] * step_floats * 4
        if len(raw) != expect:
            raise CorruptionError(
                f"{rec['file']}: {len(raw)} bytes, expected {expect}"
            )
        flat = np.frombuffer(raw, dtype="<f4")
        steps = []
        pos = 0

        def take(n):
            nonlocal pos
            chunk = flat[pos:pos + n]
            pos += n
            return chunk

        for _ in range(rec["n_steps"]):
            rgb_s = take(3 * hw * hw).reshape(3, hw, hw).transpose(1, 2, 0).copy()
            rgb_g = take(3 * hw * hw).reshape(3, hw, hw).transpose(1, 2, 0).copy()
            d_s = take(hw * hw).reshape(hw, hw).copy()
            d_g = take(hw * hw).reshape(hw, hw).copy()
            row = take(7)
            obs = sim.Observation(rgb_s, rgb_g, d_s, d_g)
            action = sim.Action(row[:6].astype(np.float64), bool(row[6] > 0.5))
            steps.append((obs, action))
        out.append(sim.Trajectory(rec["instruction"], rec["family"], rec["palette"],
                                  rec["seed"], steps, rec.get("variant", "standard")))
    return out


def dataset_depth_frames(trajectories: list[sim.Trajectory]):
    """Every depth frame of both cameras, for statistics computation."""
    for traj in trajectories:
        for obs, _ in traj.steps:
            yield np.asarray(obs.depth_static, dtype=np.float64)
            yield np.asarray(obs.depth_gripper, dtype=np.float64)


# --- metrics -----------------------------------------------------------------------


def write_metrics(table: SuccessTable, out_dir: str | Path) -> None:
    """Append one evaluation row to metrics.csv and metrics.jsonl."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    new = not csv_path.exists()
    with open(csv_path, "a") as f:
        if new:
            f.write(CSV_HEADER)
        r = table.rates
        test = f"{table.test_split}(Enriched)" if table.enriched else table.test_split
        f.write(f"{table.model_label},{table.train_split},{test},"
                f"{r[0]:.6g},{r[1]:.6g},{r[2]:.6g},{r[3]:.6g},{r[4]:.6g},"
                f"{table.avg:.6g}\n")
    with open(out_dir / "metrics.jsonl", "a") as f:
        f.write(json.dumps(table.to_dict(), sort_keys=True) + "\n")


def read_metrics_jsonl(path: str | Path) -> list[SuccessTable]:
    tables = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            tables.append(SuccessTable.from_dict(json.loads(line)))
    return tables


def write_chain_results(results: list[sim.ChainResult], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as f:
        for r in results:
            f.write(json.dumps({
                "chain_id": r.chain_id,
                "seed": r.seed,
                "palette": r.palette,
                "successes": list(map(bool, r.successes)),
            }, sort_keys=True) + "\n")


def write_train_log(report: TrainReport, out_dir: str | Path) -> None:
    """Training curve with wall time; kept separate from the metrics files
    because timings are not reproducible."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = out_dir / "train_log.csv"
    new = not log.exists()
    with open(log, "a") as f:
        if new:
            f.write("epoch,loss,mse,bce,seconds\n")
        for e in report.epochs:
            f.write(f"{e.epoch},{e.loss:.10g},{e.mse:.10g},{e.bce:.10g},{e.seconds:.3f}\n")
    summary = {
        "epochs": len(report.epochs),
        "loss": [e.loss for e in report.epochs],
        "mse": [e.mse for e in report.epochs],
        "bce": [e.bce for e in report.epochs],
    }
    (out_dir / "train_summary.json").write_text(
        json.dumps(summary, sort_keys=True) + "\n")
