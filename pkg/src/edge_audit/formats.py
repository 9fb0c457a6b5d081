"""On-disk formats.

Model description
    JSON ``{name, precision, input_shape: [h, w, c], layers: [...],
    weights_file, weights: [...], quantization: [...]}``. The weights blob
    holds raw little-endian tensors concatenated in manifest order, followed
    by one 9-byte record per quantized tensor (``<f8`` scale, ``<i1``
    zero point).
Device profile
    INI file with a ``[profile]`` section: name, max_params, max_macs,
    weight_format.
Feature dump
    Binary file of ``<f4`` row-major (bands x frames) matrices plus a CSV
    index ``filename,offset`` next to it (same stem, ``.csv``).
CSV tables
    Comma-separated UTF-8 with a header row; tab-separated on request.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .complexity import DeviceProfile
from .errors import (
    DuplicateLabel,
    DuplicateSegment,
    EdgeAuditError,
    GraphError,
    MalformedRow,
    ProbabilitySumError,
    RowError,
    UnknownClassToken,
)
from .evaluation import SUM_TOLERANCE, GroundTruthRecord, LeaderboardEntry, PredictionRecord
from .features import N_MELS
from .labels import CLASS_INDEX, DEFAULT_SEEN_DEVICES, DEVICES, SCENE_CLASSES
from .model_ir import LayerSpec, ModelGraph, TensorShape
from .quantizer import QuantParams

DTYPES = {"float32": "<f4", "int8": "<i1"}
QP_RECORD = struct.Struct("<db")
BUILTIN_PROFILES = {"cortex-m4": "cortex-m4.profile"}
BASELINE_MODEL = "baseline.json"


def data_path(name: str) -> Path:
    return Path(str(resources.files("edge_audit") / "data" / name))


def baseline_path() -> Path:
    return data_path(BASELINE_MODEL)


# -- models -----------------------------------------------------------------


def load_model(path, *, input_shape: Sequence[int] | None = None) -> ModelGraph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not valid JSON ({exc})") from None
    try:
        shape = TensorShape.of(input_shape or doc["input_shape"])
        layers = [LayerSpec.from_dict(l) for l in doc.get("layers", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"{path}: malformed model description ({exc})") from None
    precision = doc.get("precision", "float32")

    weights: dict[str, dict[str, np.ndarray]] = {}
    qparams: dict[str, QuantParams] = {}
    if doc.get("weights_file"):
        blob = (path.parent / doc["weights_file"]).read_bytes()
        for entry in doc.get("weights", []):
            dtype = np.dtype(DTYPES[entry["dtype"]])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            end = entry["offset"] + count * dtype.itemsize
            if end > len(blob):
                raise GraphError(f"{path}: weights blob too short for {entry['layer']}/{entry['tensor']}")
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=entry["offset"])
            weights.setdefault(entry["layer"], {})[entry["tensor"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        for entry in doc.get("quantization", []):
            scale, zp = QP_RECORD.unpack_from(blob, entry["offset"])
            qparams[entry["tensor"]] = QuantParams(scale, zp, entry["scheme"])
    return ModelGraph(shape, layers, weights, precision, qparams)


def save_model(graph: ModelGraph, path, *, name: str | None = None) -> Path:
    """Write ``path`` (JSON) and ``<stem>.weights`` next to it if weights exist."""
    path = Path(path)
    doc: dict = {
        "name": name or path.stem,
        "precision": graph.precision,
        "input_shape": list(graph.input_shape.as_tuple()),
        "layers": [l.to_dict() for l in graph.layers],
    }
    if graph.has_weights:
        blob = io.BytesIO()
        manifest = []
        for layer in graph.layers:
            for tensor, arr in sorted(graph.weights.get(layer.name, {}).items()):
                dtype = "int8" if graph.precision == "int8" else "float32"
                data = np.ascontiguousarray(arr, dtype=DTYPES[dtype])
                manifest.append(
                    {"layer": layer.name, "tensor": tensor, "dtype": dtype, "shape": list(arr.shape), "offset": blob.tell()}
                )
                blob.write(data.tobytes())
        quant = []
        for key, qp in graph.qparams.items():
            quant.append({"tensor": key, "scheme": qp.scheme, "offset": blob.tell()})
            blob.write(QP_RECORD.pack(qp.scale, qp.zero_point))
        weights_file = path.with_suffix(".weights")
        weights_file.write_bytes(blob.getvalue())
        doc["weights_file"] = weights_file.name
        doc["weights"] = manifest
        if quant:
            doc["quantization"] = quant
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def parse_input_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().replace("×", "x").split("x")
    if len(parts) != 3:
        raise ValueError(f"input shape must look like HxWxC, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


# -- device profiles ----------------------------------------------------------


def load_profile(path_or_name) -> DeviceProfile:
    """Read a profile file; bare names of shipped profiles are accepted too."""
    if str(path_or_name) in BUILTIN_PROFILES:
        path = data_path(BUILTIN_PROFILES[str(path_or_name)])
    else:
        path = Path(path_or_name)
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise EdgeAuditError(f"cannot read profile {path}")
    try:
        section = parser["profile"]
        return DeviceProfile(
            name=section.get("name", path.stem),
            max_params=section.getint("max_params"),
            max_macs=section.getint("max_macs"),
            required_weight_format=section.get("weight_format", "int8"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise EdgeAuditError(f"{path}: malformed profile ({exc})") from None


# -- feature dumps --------------------------------------------------------------


def feature_index_path(path) -> Path:
    return Path(path).with_suffix(".csv")


def write_features(path, items: Iterable[tuple[str, np.ndarray]]) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        raise ValueError(f"{path}: feature dump must not use .csv, that name is taken by its index")
    index = io.StringIO()
    writer = csv.writer(index, lineterminator="\n")
    writer.writerow(["filename", "offset"])
    with path.open("wb") as fh:
        for filename, matrix in items:
            writer.writerow([filename, fh.tell()])
            fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    feature_index_path(path).write_text(index.getvalue(), encoding="utf-8")
    return path


def read_features(path, *, bands: int = N_MELS) -> list[tuple[str, np.ndarray]]:
    path = Path(path)
    blob = path.read_bytes()
    rows = list(csv.reader(feature_index_path(path).read_text(encoding="utf-8").splitlines()))
    if not rows or rows[0] != ["filename", "offset"]:
        raise MalformedRow(1, "feature index header must be 'filename,offset'")
    entries = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise MalformedRow(line, f"expected 2 fields, got {len(row)}")
        entries.append((line, row[0], int(row[1])))
    out = []
    for i, (line, filename, offset) in enumerate(entries):
        end = entries[i + 1][2] if i + 1 < len(entries) else len(blob)
        nbytes = end - offset
        if nbytes <= 0 or nbytes % (4 * bands):
            raise MalformedRow(line, f"record for {filename!r} is not a whole {bands}-band matrix")
        values = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset)
        out.append((filename, values.reshape(bands, -1).astype(np.float32)))
    return out


def features_to_csv(items: Iterable[tuple[str, np.ndarray]]) -> str:
    """Plain-text dump for debugging: one row per band."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    items = list(items)
    frames = items[0][1].shape[1] if items else 0
    writer.writerow(["filename", "band"] + [f"t{j}" for j in range(frames)])
    for filename, matrix in items:
        for band, row in enumerate(matrix):
            writer.writerow([filename, band] + [repr(float(v)) for v in row])
    return buf.getvalue()


# -- CSV ingestion ---------------------------------------------------------------


def _reader(text: str, tsv: bool) -> list[list[str]]:
    return list(csv.reader(io.StringIO(text), delimiter="\t" if tsv else ","))


def _read_text(source) -> str:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        return Path(source).read_text(encoding="utf-8-sig")
    return str(source)


def _raise_collected(errors: list[RowError]) -> None:
    if errors:
        first = errors[0]
        first.all_errors = errors
        raise first


METADATA_COLUMNS = ("filename", "scene_label", "city", "device")


def _parse_flag(value: str, line: int, column: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "seen"):
        return True
    if v in ("0", "false", "no", "unseen"):
        return False
    raise MalformedRow(line, f"column {column!r}: expected a 0/1 flag, got {value!r}")


def parse_metadata(
    source,
    *,
    tsv: bool = False,
    columns: Mapping[str, str] | None = None,
    seen_devices: Iterable[str] | None = None,
) -> list[GroundTruthRecord]:
    """Ground truth from ``filename,scene_label,city,device`` rows.

    ``columns`` maps our column names to the file's (e.g. ``{"scene_label":
    "scene"}``). Optional ``seen_device``/``seen_city`` 0/1 columns override
    the default seen-device set.
    """
    rows = _reader(_read_text(source), tsv)
    if not rows:
        raise MalformedRow(1, "missing header")
    names = {c: (columns or {}).get(c, c) for c in METADATA_COLUMNS + ("seen_device", "seen_city")}
    header = [h.strip() for h in rows[0]]
    missing = [names[c] for c in METADATA_COLUMNS if names[c] not in header]
    if missing:
        raise MalformedRow(1, f"header lacks column(s) {', '.join(missing)}")
    col = {c: header.index(names[c]) for c in names if names[c] in header}
    seen_set = frozenset(seen_devices) if seen_devices is not None else DEFAULT_SEEN_DEVICES

    records, errors, ids = [], [], set()
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not f.strip() for f in row):
            continue
        try:
            if len(row) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
            filename = row[col["filename"]].strip()
            label = row[col["scene_label"]].strip()
            device = row[col["device"]].strip()
            if not filename:
                raise MalformedRow(line, "empty filename")
            if filename in ids:
                raise DuplicateSegment(line, f"segment {filename!r} listed twice")
            if label not in CLASS_INDEX:
                raise UnknownClassToken(line, f"unknown scene label {label!r}")
            if device not in DEVICES:
                raise MalformedRow(line, f"unknown device {device!r}")
            seen_dev = (
                _parse_flag(row[col["seen_device"]], line, "seen_device") if "seen_device" in col else device in seen_set
            )
            seen_city = _parse_flag(row[col["seen_city"]], line, "seen_city") if "seen_city" in col else True
        except RowError as exc:
            errors.append(exc)
            continue
        ids.add(filename)
        records.append(GroundTruthRecord(filename, label, device, row[col["city"]].strip(), seen_dev, seen_city))
    _raise_collected(errors)
    return records


def write_metadata(records: Iterable[GroundTruthRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(METADATA_COLUMNS) + ["seen_device", "seen_city"])
    for r in records:
        w.writerow([r.segment_id, r.true_label, r.city, r.device, int(r.seen_device), int(r.seen_city)])
    return buf.getvalue()


def parse_submission(source, *, tsv: bool = False) -> list[PredictionRecord]:
    """System output rows ``filename,scene_label,<one column per class>``.

    Probability rows summing to within 1e-3 of one are renormalised; larger
    deviations are rejected.
    """
    rows = _reader(_read_text(source), tsv)
    if not rows:
        raise MalformedRow(1, "missing header")
    header = [h.strip() for h in rows[0]]
    required = ["filename", "scene_label", *SCENE_CLASSES]
    missing = [c for c in required if c not in header]
    if missing:
        raise MalformedRow(1, f"header lacks column(s) {', '.join(missing)}")
    col = {c: header.index(c) for c in required}

    records, errors, ids = [], [], set()
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not f.strip() for f in row):
            continue
        try:
            if len(row) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
            filename = row[col["filename"]].strip()
            label = row[col["scene_label"]].strip()
            if not filename:
                raise MalformedRow(line, "empty filename")
            if filename in ids:
                raise DuplicateSegment(line, f"segment {filename!r} appears more than once")
            if label not in CLASS_INDEX:
                raise UnknownClassToken(line, f"unknown scene label {label!r}")
            try:
                probs = np.array([float(row[col[c]]) for c in SCENE_CLASSES])
            except ValueError:
                raise MalformedRow(line, "probabilities must be real numbers") from None
            if not np.all(np.isfinite(probs)) or probs.min() < 0:
                raise MalformedRow(line, "probabilities must be finite and non-negative")
            total = probs.sum()
            if abs(total - 1.0) > SUM_TOLERANCE:
                raise ProbabilitySumError(line, f"probabilities sum to {total:.6g}")
        except RowError as exc:
            errors.append(exc)
            continue
        ids.add(filename)
        # leave rows that already sum to one bit-exact so a re-parse is idempotent
        records.append(PredictionRecord(filename, label, probs / total if abs(total - 1.0) > 1e-12 else probs))
    _raise_collected(errors)
    return records


def write_submission(records: Iterable[PredictionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["filename", "scene_label", *SCENE_CLASSES])
    for r in records:
        w.writerow([r.segment_id, r.predicted_label, *(repr(float(p)) for p in r.probabilities)])
    return buf.getvalue()


# -- leaderboards and trade-off tables --------------------------------------------


@dataclass(frozen=True)
class SystemSummary:
    label: str
    log_loss: float
    accuracy: float
    params: int
    macs: int


def parse_systems(source, *, tsv: bool = False) -> list[SystemSummary]:
    rows = _reader(_read_text(source), tsv)
    required = ["label", "log_loss", "accuracy", "params", "macs"]
    if not rows or any(c not in [h.strip() for h in rows[0]] for c in required):
        raise MalformedRow(1, f"header must contain {','.join(required)}")
    header = [h.strip() for h in rows[0]]
    col = {c: header.index(c) for c in required}
    out, errors = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not f.strip() for f in row):
            continue
        try:
            out.append(
                SystemSummary(
                    row[col["label"]].strip(),
                    float(row[col["log_loss"]]),
                    float(row[col["accuracy"]]),
                    int(row[col["params"]]),
                    int(float(row[col["macs"]])),
                )
            )
        except (ValueError, IndexError):
            errors.append(MalformedRow(line, "expected label,log_loss,accuracy,params,macs"))
    _raise_collected(errors)
    return out


def emit_tradeoff_table(systems: Iterable[SystemSummary | tuple]) -> str:
    """CSV ``label,log_loss,accuracy,params,mmacs`` sorted by log loss."""
    systems = [s if isinstance(s, SystemSummary) else SystemSummary(*s) for s in systems]
    labels = [s.label for s in systems]
    dupes = sorted({l for l in labels if labels.count(l) > 1})
    if dupes:
        raise DuplicateLabel(f"duplicate system label(s): {', '.join(dupes)}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "log_loss", "accuracy", "params", "mmacs"])
    for s in sorted(systems, key=lambda s: (s.log_loss, s.label)):
        w.writerow([s.label, repr(s.log_loss), repr(s.accuracy), s.params, f"{s.macs / 1e6:.2f}"])
    return buf.getvalue()


def write_leaderboard(entries: Iterable[LeaderboardEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "label", "log_loss", "accuracy"])
    for e in entries:
        w.writerow([e.rank, e.label, repr(e.log_loss), repr(e.accuracy)])
    return buf.getvalue()
