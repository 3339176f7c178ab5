"""On-disk formats.

CSV files (UTF-8, ``\\n`` line endings, floats in shortest round-trip form):

- raw readings: ``timestamp,household_id,channel,value,tag``
- ground truth: ``timestamp,household_id,channel,kind,magnitude``
- rejects: ``line,field,reason,raw``
- train report: ``epoch,train_loss,val_loss``
- anomaly report: ``timestamp,household_id,e_t,label,theta``, then
  ``recon_<channel>``, ``input_<channel>`` and ``err_<channel>`` for each of
  the four channels, then ``model``
- metrics: ``model,polarity,accuracy,precision,recall,f1,mse,tp,tn,fp,fn``
- AUC: ``model,scope,auc``; ROC points: ``model,scope,threshold,fpr,tpr``

Tensor bundles (windowed datasets and model archives) are one JSON document
with a ``kind``, an integer ``format_version``, free-form ``meta``, base64
little-endian float64/int64 ``tensors`` and a SHA-256 ``checksum`` over the
canonical serialisation of everything else. Serialisation is canonical
(sorted keys, no whitespace), so equal content gives equal bytes.
"""

import base64
import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import CHANNELS
from .autoencoder import Window
from .datagen import AnomalyLabel, format_time, parse_time
from .detector import AnomalyReport
from .errors import ChecksumError, FormatVersionError, SchemaError

FORMAT_VERSION = 1

RAW_HEADER = ["timestamp", "household_id", "channel", "value", "tag"]
TRUTH_HEADER = ["timestamp", "household_id", "channel", "kind", "magnitude"]
REJECTS_HEADER = ["line", "field", "reason", "raw"]
TRAIN_HEADER = ["epoch", "train_loss", "val_loss"]
REPORT_HEADER = (
    ["timestamp", "household_id", "e_t", "label", "theta"]
    + [f"recon_{c}" for c in CHANNELS]
    + [f"input_{c}" for c in CHANNELS]
    + [f"err_{c}" for c in CHANNELS]
    + ["model"]
)
METRICS_HEADER = ["model", "polarity", "accuracy", "precision", "recall", "f1", "mse", "tp", "tn", "fp", "fn"]
AUC_HEADER = ["model", "scope", "auc"]
ROC_HEADER = ["model", "scope", "threshold", "fpr", "tpr"]

UNDEFINED = "undefined"


def fmt(x):
    """Shortest round-trip text for a float; ``undefined`` for None."""
    if x is None:
        return UNDEFINED
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_csv(path, header):
    """Yield ``(line_number, row_dict)`` after checking the header exactly."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise SchemaError(path, 1, "header", "file is empty") from None
        if got != list(header):
            raise SchemaError(path, 1, "header", f"expected {','.join(header)!r}, got {','.join(got)!r}")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(path, line, "row", f"expected {len(header)} fields, got {len(row)}")
            yield line, dict(zip(header, row))


def _field(path, line, row, name, conv):
    try:
        return conv(row[name])
    except (ValueError, TypeError) as e:
        raise SchemaError(path, line, name, f"bad value {row[name]!r}: {e}") from None


def write_raw_csv(path, records):
    return _write_csv(path, RAW_HEADER, (
        (format_time(r.timestamp), r.household_id, r.channel, fmt(r.value), str(r.tag)) for r in records))


def read_raw_rows(path):
    """Raw rows as dicts, unparsed, so cleaning can report bad ones by line."""
    return [row for _, row in _read_csv(path, RAW_HEADER)]


def read_raw_csv(path):
    """Strictly parsed readings; any bad row raises :class:`SchemaError`."""
    from .preprocess import parse_reading

    return [parse_reading(row, line, path) for line, row in _read_csv(path, RAW_HEADER)]


def write_truth_csv(path, labels):
    return _write_csv(path, TRUTH_HEADER, (
        (format_time(a.timestamp), a.household_id, a.channel, a.kind, fmt(a.magnitude)) for a in labels))


def read_truth_csv(path):
    out = []
    for line, row in _read_csv(path, TRUTH_HEADER):
        if row["channel"] not in CHANNELS:
            raise SchemaError(path, line, "channel", f"unknown channel {row['channel']!r}")
        out.append(AnomalyLabel(
            _field(path, line, row, "timestamp", parse_time), row["household_id"], row["channel"],
            row["kind"], _field(path, line, row, "magnitude", float)))
    return out


def write_rejects_csv(path, rejects):
    return _write_csv(path, REJECTS_HEADER, ((r.line, r.field, r.reason, r.raw) for r in rejects))


def write_train_report(path, report):
    return _write_csv(path, TRAIN_HEADER, ((e, fmt(tr), fmt(va)) for e, tr, va in report.rows()))


def read_train_report(path):
    from .training import TrainReport

    rep = TrainReport()
    for line, row in _read_csv(path, TRAIN_HEADER):
        rep.train_loss.append(_field(path, line, row, "train_loss", float))
        rep.val_loss.append(_field(path, line, row, "val_loss", float))
    return rep


def write_report_csv(path, report):
    rows = []
    for k in range(len(report)):
        rows.append(
            [format_time(report.timestamps[k]), report.household_ids[k], fmt(report.e_t[k]),
             str(int(report.labels[k])), fmt(report.theta)]
            + [fmt(v) for v in report.reconstruction[k]]
            + [fmt(v) for v in report.inputs[k]]
            + [fmt(v) for v in report.channel_errors[k]]
            + [report.model]
        )
    return _write_csv(path, REPORT_HEADER, rows)


def read_report_csv(path):
    ts, hh, e, lab, rec, inp, err, models = [], [], [], [], [], [], [], set()
    theta = None
    for line, row in _read_csv(path, REPORT_HEADER):
        ts.append(_field(path, line, row, "timestamp", parse_time))
        hh.append(row["household_id"])
        e.append(_field(path, line, row, "e_t", float))
        label = _field(path, line, row, "label", int)
        if label not in (0, 1):
            raise SchemaError(path, line, "label", f"must be 0 or 1, got {label}")
        lab.append(label)
        th = _field(path, line, row, "theta", float)
        if theta is None:
            theta = th
        elif th != theta:
            raise SchemaError(path, line, "theta", "theta differs between rows")
        rec.append([_field(path, line, row, f"recon_{c}", float) for c in CHANNELS])
        inp.append([_field(path, line, row, f"input_{c}", float) for c in CHANNELS])
        err.append([_field(path, line, row, f"err_{c}", float) for c in CHANNELS])
        models.add(row["model"])
    if len(models) > 1:
        raise SchemaError(path, 0, "model", f"several models in one report: {sorted(models)}")
    C = len(CHANNELS)
    return AnomalyReport(
        np.array(ts, dtype=np.int64), hh, np.array(e, dtype=np.float64), np.array(lab, dtype=np.int64),
        np.array(inp, dtype=np.float64).reshape(-1, C), np.array(rec, dtype=np.float64).reshape(-1, C),
        np.array(err, dtype=np.float64).reshape(-1, C), float("nan") if theta is None else theta,
        models.pop() if models else "",
    )


def write_metrics_csv(path, rows):
    """``rows``: iterables of (model, polarity, Metrics, ConfusionMatrix)."""
    return _write_csv(path, METRICS_HEADER, (
        [model, pol, fmt(m.accuracy), fmt(m.precision), fmt(m.recall), fmt(m.f1), fmt(m.mse),
         cm.tp, cm.tn, cm.fp, cm.fn] for model, pol, m, cm in rows))


def write_auc_csv(path, rows):
    return _write_csv(path, AUC_HEADER, ([model, scope, fmt(auc)] for model, scope, auc in rows))


def write_roc_csv(path, curves):
    """``curves``: iterable of (model, scope, RocCurve)."""
    rows = []
    for model, scope, roc in curves:
        for th, f, t in zip(roc.thresholds, roc.fpr, roc.tpr):
            rows.append([model, scope, fmt(th), fmt(f), fmt(t)])
    return _write_csv(path, ROC_HEADER, rows)


def read_roc_csv(path):
    """``{(model, scope): (thresholds, fpr, tpr)}`` arrays."""
    acc = {}
    for line, row in _read_csv(path, ROC_HEADER):
        key = (row["model"], row["scope"])
        acc.setdefault(key, ([], [], []))
        a = acc[key]
        a[0].append(_field(path, line, row, "threshold", float))
        a[1].append(_field(path, line, row, "fpr", float))
        a[2].append(_field(path, line, row, "tpr", float))
    return {k: tuple(np.array(x) for x in v) for k, v in acc.items()}


# -- tensor bundles ---------------------------------------------------------------

def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _encode_tensor(a):
    a = np.asarray(a)
    if a.dtype.kind == "f":
        a, dtype = a.astype("<f8"), "<f8"
    elif a.dtype.kind in "iu":
        a, dtype = a.astype("<i8"), "<i8"
    else:
        raise TypeError(f"unsupported tensor dtype {a.dtype}")
    data = np.ascontiguousarray(a).tobytes()
    return {"dtype": dtype, "shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_tensor(path, name, d):
    try:
        raw = base64.b64decode(d["data"], validate=True)
        arr = np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"])
    except (KeyError, ValueError, TypeError) as e:
        raise SchemaError(path, 1, f"tensors.{name}", f"cannot decode tensor: {e}") from None
    return arr.astype(arr.dtype.newbyteorder("="))


def save_bundle(path, kind, meta, tensors):
    body = {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": {k: _encode_tensor(v) for k, v in tensors.items()},
    }
    body["checksum"] = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(body) + "\n", encoding="utf-8")
    return path


def load_bundle(path, kind):
    """Return ``(meta, tensors)`` after validating kind, version and checksum."""
    path = Path(path)
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(path, e.lineno, "document", f"invalid JSON: {e.msg}") from None
    if not isinstance(body, dict):
        raise SchemaError(path, 1, "document", "top level must be an object")
    for key in ("kind", "format_version", "meta", "tensors", "checksum"):
        if key not in body:
            raise SchemaError(path, 1, key, "missing")
    if body["kind"] != kind:
        raise SchemaError(path, 1, "kind", f"expected {kind!r}, got {body['kind']!r}")
    if body["format_version"] != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format_version {body['format_version']!r} is not supported "
                                 f"(this build reads version {FORMAT_VERSION})")
    stored = body.pop("checksum")
    actual = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
    if stored != actual:
        raise ChecksumError(f"{path}: checksum mismatch (stored {stored[:12]}..., computed {actual[:12]}...)")
    tensors = {k: _decode_tensor(path, k, v) for k, v in body["tensors"].items()}
    return body["meta"], tensors


WINDOWS_KIND = "smartmeter-ad/windows"
MODEL_KIND = "smartmeter-ad/model"


def save_windows(path, windows, meta=None):
    meta = dict(meta or {})
    meta["households"] = [w.household_id for w in windows]
    meta["channels"] = list(CHANNELS)
    if windows:
        values = np.stack([w.values for w in windows])
        steps = {w.step for w in windows}
        if len(steps) != 1:
            raise ValueError("windows with different step sizes")
        meta["step"] = steps.pop()
    else:
        values = np.zeros((0, int(meta.get("window_length", 0)), len(CHANNELS)))
        meta["step"] = 900
    origins = np.array([w.origin for w in windows], dtype=np.int64)
    return save_bundle(path, WINDOWS_KIND, meta, {"values": values, "origins": origins})


def load_windows(path):
    """Return ``(windows, meta)``."""
    meta, t = load_bundle(path, WINDOWS_KIND)
    values, origins = t.get("values"), t.get("origins")
    if values is None or origins is None:
        raise SchemaError(path, 1, "tensors", "windows bundle needs 'values' and 'origins'")
    hh = meta.get("households", [])
    if values.ndim != 3 or len(hh) != len(values) or len(origins) != len(values):
        raise SchemaError(path, 1, "tensors.values", "values, origins and households disagree in length")
    if values.shape[2] != len(CHANNELS):
        raise SchemaError(path, 1, "tensors.values", f"expected {len(CHANNELS)} channels")
    step = int(meta.get("step", 900))
    return [Window(values[k].copy(), int(origins[k]), hh[k], step) for k in range(len(values))], meta


def save_model(path, model, stats, train_config=None, validation_errors=None, extra=None):
    tc = {} if train_config is None else train_config.to_dict()
    meta = {
        "name": model.name,
        "architecture": model.config.to_dict(),
        "normalization": stats.to_dict(),
        "train_config": tc,
        "train_config_fingerprint": hashlib.sha256(canonical_json(tc).encode()).hexdigest(),
        "parameter_names": list(model.parameters()),
    }
    if extra:
        meta.update(extra)
    tensors = {f"param.{k}": v for k, v in model.parameters().items()}
    if validation_errors is not None:
        tensors["validation_errors"] = np.asarray(validation_errors, dtype=np.float64)
    return save_bundle(path, MODEL_KIND, meta, tensors)


def load_model(path):
    """Return ``(model, stats, meta, validation_errors or None)``."""
    from .autoencoder import AutoencoderModel, ModelConfig
    from .preprocess import NormalizationStats

    meta, t = load_bundle(path, MODEL_KIND)
    try:
        cfg = ModelConfig(**meta["architecture"])
        stats = NormalizationStats.from_dict(meta["normalization"])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(path, 1, "meta", f"bad architecture or normalisation: {e}") from None
    model = AutoencoderModel.zeros(cfg, name=meta.get("name"))
    params = {k[len("param."):]: v for k, v in t.items() if k.startswith("param.")}
    try:
        model.load_parameters(params)
    except ValueError as e:
        raise SchemaError(path, 1, "tensors", str(e)) from None
    return model, stats, meta, t.get("validation_errors")
