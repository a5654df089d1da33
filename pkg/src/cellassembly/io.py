"""File formats: spike-event text files, binary containers and CSV exports.

Binary container layout (little endian)::

    b"BLVCA\\0"  magic
    uint16       format version
    uint64       header length in bytes
    header       UTF-8 JSON: kind, meta, array table, sha256 of the payload
    payload      raw C-order array bytes, concatenated in table order

Files are written deterministically, so saving the same object twice gives
identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, FormatError
from .evaluation import MatchReport
from .learning import LearnConfig, TrainTrace
from .model import HEState, ModelParams
from .synthesis import GroundTruth, LabeledDataset, SynthHyperparams

MAGIC = b"BLVCA\0"
FORMAT_VERSION = 1
EVENTS_MAGIC = "# blvca-events"
EVENTS_VERSION = 1


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def write_container(path, kind: str, arrays: dict, meta: dict | None = None) -> None:
    table, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = _dumps({
        "kind": kind,
        "meta": meta or {},
        "arrays": table,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def read_container(path, kind: str | tuple | None = None):
    """Return ``(kind, arrays, meta)``; validates magic, version, kind and checksum."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError(f"{path}: not a cellassembly container")
    try:
        version, hlen = struct.unpack_from("<HQ", data, len(MAGIC))
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + struct.calcsize("<HQ")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    payload = data[start + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise FormatError(f"{path}: checksum mismatch (file corrupted)")
    found = header["kind"]
    wanted = (kind,) if isinstance(kind, str) else kind
    if wanted is not None and found not in wanted:
        raise FormatError(f"{path}: holds a {found!r}, expected {' or '.join(wanted)}")
    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return found, arrays, header["meta"]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# typed save / load
# ---------------------------------------------------------------------------

@dataclass
class ModelFile:
    params: ModelParams
    he_state: HEState | None = None
    config: LearnConfig | None = None
    trace: TrainTrace | None = None


def _config_to_dict(cfg: LearnConfig | None):
    if cfg is None:
        return None
    d = dict(vars(cfg))
    d["prior_kind"] = cfg.prior_kind.value
    return d


def save_model(path, mf: ModelFile) -> None:
    arrays = {"rho": mf.params.rho, "r_logit": mf.params.r_logit,
              "q_logit": np.array([mf.params.q_logit])}
    meta = {"config": _config_to_dict(mf.config)}
    if mf.he_state is not None:
        arrays["he_rates"] = mf.he_state.rates
        meta["he_steps"] = int(mf.he_state.steps)
    if mf.trace is not None:
        arrays["trace_mean_log_joint"] = np.asarray(mf.trace.mean_log_joint, dtype=float)
        arrays["trace_usage"] = np.asarray(mf.trace.usage, dtype=np.int64)
    write_container(path, "model", arrays, meta)


def load_model(path) -> ModelFile:
    _, a, meta = read_container(path, "model")
    params = ModelParams(a["rho"], a["r_logit"], float(a["q_logit"][0]))
    he = HEState(a["he_rates"], meta["he_steps"]) if "he_rates" in a else None
    cfg = LearnConfig(**meta["config"]) if meta.get("config") else None
    trace = None
    if "trace_usage" in a:
        trace = TrainTrace(list(map(float, a["trace_mean_log_joint"])), a["trace_usage"])
    return ModelFile(params, he, cfg, trace)


def save_ground_truth(path, gt: GroundTruth) -> None:
    write_container(path, "ground_truth",
                    {"P": gt.P, "R": gt.R, "Q": np.array([gt.Q]), "S": gt.S.astype(np.int8)},
                    {"hyper": gt.hyper.to_dict()})


def load_ground_truth(path) -> GroundTruth:
    _, a, meta = read_container(path, "ground_truth")
    return GroundTruth(a["P"], a["R"], float(a["Q"][0]), a["S"], SynthHyperparams(**meta["hyper"]))


def save_dataset(path, ds: LabeledDataset) -> None:
    write_container(path, "dataset", {"Z": ds.Z.astype(np.int8), "Y": ds.Y.astype(np.int8)},
                    {"gt_digest": ds.gt_digest})


def load_dataset(path) -> LabeledDataset:
    _, a, meta = read_container(path, "dataset")
    return LabeledDataset(a["Z"], a["Y"], meta.get("gt_digest", ""))


@dataclass
class BinnedCorpus:
    words: np.ndarray                 # (n_words, N) int8
    bin_ms: float | None = None
    step_ms: float | None = None
    source_digest: str = ""
    trials: np.ndarray | None = None  # (n_words,) trial of each word
    starts_ms: np.ndarray | None = None  # (n_words,) window start within the trial
    trial_duration_ms: float | None = None

    @property
    def n_cells(self) -> int:
        return self.words.shape[1]


def save_corpus(path, corpus: BinnedCorpus) -> None:
    arrays = {"words": corpus.words.astype(np.int8)}
    if corpus.trials is not None:
        arrays["trials"] = np.asarray(corpus.trials, dtype=np.int64)
        arrays["starts_ms"] = np.asarray(corpus.starts_ms, dtype=float)
    meta = {"bin_ms": corpus.bin_ms, "step_ms": corpus.step_ms,
            "source_digest": corpus.source_digest,
            "trial_duration_ms": corpus.trial_duration_ms}
    write_container(path, "corpus", arrays, meta)


def load_words(path, n_cells: int | None = None) -> BinnedCorpus:
    """Load spike words from a corpus or a labeled dataset file."""
    kind, a, meta = read_container(path, ("corpus", "dataset"))
    if kind == "dataset":
        corpus = BinnedCorpus(a["Y"])
    else:
        corpus = BinnedCorpus(a["words"], meta["bin_ms"], meta["step_ms"], meta["source_digest"],
                              a.get("trials"), a.get("starts_ms"), meta.get("trial_duration_ms"))
    if n_cells is not None and corpus.n_cells != n_cells:
        raise DimensionError(f"{path}: words have {corpus.n_cells} cells, expected {n_cells}")
    return corpus


def save_match_reports(path, reports: dict, model_ids: list) -> None:
    """Save pairwise match reports keyed by ``(i, j)`` model index pairs."""
    arrays, pairs = {}, []
    for (i, j), rep in sorted(reports.items()):
        key = f"{i}_{j}"
        pairs.append([i, j])
        arrays[f"assignment_{key}"] = rep.assignment.astype(np.int64)
        arrays[f"cs_{key}"] = rep.cs
    write_container(path, "match", arrays, {"model_ids": list(model_ids), "pairs": pairs})


def load_match_reports(path):
    _, a, meta = read_container(path, "match")
    reports = {}
    for i, j in meta["pairs"]:
        cs = a[f"cs_{i}_{j}"]
        asg = a[f"assignment_{i}_{j}"]
        idx = np.arange(cs.shape[0])
        reports[(i, j)] = MatchReport(asg, cs[idx, asg], np.diag(cs).copy(), cs)
    return reports, meta["model_ids"]


# ---------------------------------------------------------------------------
# spike events
# ---------------------------------------------------------------------------

@dataclass
class SpikeEventFile:
    n_cells: int
    n_trials: int
    trial_duration_ms: float
    cells: np.ndarray
    trials: np.ndarray
    times_ms: np.ndarray
    digest: str = ""

    def validate(self) -> None:
        if self.n_cells < 1 or self.n_trials < 1 or not self.trial_duration_ms > 0:
            raise DataError("event header needs positive n_cells, n_trials and duration")
        if np.any((self.cells < 0) | (self.cells >= self.n_cells)):
            raise DataError("cell id out of range")
        if np.any((self.trials < 0) | (self.trials >= self.n_trials)):
            raise DataError("trial id out of range")
        if np.any(~np.isfinite(self.times_ms)) or np.any(
            (self.times_ms < 0) | (self.times_ms >= self.trial_duration_ms)
        ):
            raise DataError("spike time outside [0, trial_duration_ms)")


def write_events(path, ev: SpikeEventFile) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{EVENTS_MAGIC} {EVENTS_VERSION}\n")
        fh.write(f"# n_cells={ev.n_cells} n_trials={ev.n_trials} "
                 f"trial_duration_ms={ev.trial_duration_ms!r}\n")
        fh.write("cell,trial,time_ms\n")
        for c, tr, t in zip(ev.cells, ev.trials, ev.times_ms):
            fh.write(f"{int(c)},{int(tr)},{float(t)!r}\n")


def read_events(path) -> SpikeEventFile:
    raw = Path(path).read_bytes()
    lines = raw.decode("utf-8").splitlines()
    if len(lines) < 3 or not lines[0].startswith(EVENTS_MAGIC):
        raise DataError(f"{path}: missing '{EVENTS_MAGIC}' header")
    try:
        version = int(lines[0].split()[-1])
    except ValueError as exc:
        raise DataError(f"{path}: bad version line") from exc
    if version != EVENTS_VERSION:
        raise FormatError(f"{path}: events version {version}, expected {EVENTS_VERSION}")
    fields_ = dict(item.split("=", 1) for item in lines[1].lstrip("#").split())
    try:
        n_cells = int(fields_["n_cells"])
        n_trials = int(fields_["n_trials"])
        duration = float(fields_["trial_duration_ms"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed header line {lines[1]!r}") from exc
    if lines[2].strip() != "cell,trial,time_ms":
        raise DataError(f"{path}: expected column header 'cell,trial,time_ms'")
    cells, trials, times = [], [], []
    for lineno, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            cells.append(int(parts[0]))
            trials.append(int(parts[1]))
            times.append(float(parts[2]))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed record {line!r}") from exc
    ev = SpikeEventFile(n_cells, n_trials, duration, np.array(cells, dtype=np.int64),
                        np.array(trials, dtype=np.int64), np.array(times, dtype=float),
                        hashlib.sha256(raw).hexdigest())
    ev.validate()
    return ev


def bin_events(ev: SpikeEventFile, bin_ms: float, step_ms: float) -> BinnedCorpus:
    """Sliding-window binarization of each trial.

    Window ``k`` covers ``[k * step_ms, k * step_ms + bin_ms)``; a trial yields
    ``floor((duration - bin_ms) / step_ms) + 1`` windows.
    """
    if not (step_ms > 0 and bin_ms >= step_ms):
        raise DataError(f"need bin_ms >= step_ms > 0, got bin={bin_ms}, step={step_ms}")
    ev.validate()
    n_win = int(math.floor((ev.trial_duration_ms - bin_ms) / step_ms + 1e-9)) + 1
    if n_win < 1:
        raise DataError(f"bin of {bin_ms} ms longer than trial duration {ev.trial_duration_ms} ms")
    words = np.zeros((ev.n_trials, n_win, ev.n_cells), dtype=np.int8)
    t = ev.times_ms
    k_hi = np.minimum(np.floor(t / step_ms).astype(np.int64), n_win - 1)
    k_lo = np.maximum(np.floor((t - bin_ms) / step_ms).astype(np.int64), 0)
    width = int(math.ceil(bin_ms / step_ms)) + 2
    for j in range(width):
        k = k_lo + j
        ok = k <= k_hi
        # a window contains the spike iff start <= t < start + bin
        start = k[ok] * step_ms
        inside = (start <= t[ok]) & (t[ok] < start + bin_ms)
        sel = np.flatnonzero(ok)[inside]
        words[ev.trials[sel], k[sel], ev.cells[sel]] = 1
    trials = np.repeat(np.arange(ev.n_trials), n_win)
    starts = np.tile(np.arange(n_win) * step_ms, ev.n_trials)
    return BinnedCorpus(words.reshape(-1, ev.n_cells), float(bin_ms), float(step_ms), ev.digest,
                        trials, starts, ev.trial_duration_ms)


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def write_table(path_or_fh, header: list, rows) -> None:
    """Comma-delimited table with a header row; floats written at full precision."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (np.integer,)):
            return str(int(v))
        return str(v)

    own = isinstance(path_or_fh, (str, Path))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    finally:
        if own:
            fh.close()


def read_table(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty table")
    return rows[0], rows[1:]


def write_assignments(path, Z, trials=None, starts_ms=None) -> None:
    """Inferred latents as ``word,trial,bin_start_ms,latents`` (latents ';'-joined)."""
    Z = np.asarray(Z)
    n = Z.shape[0]
    trials = np.zeros(n, dtype=np.int64) if trials is None else trials
    starts_ms = np.arange(n, dtype=float) if starts_ms is None else starts_ms
    rows = (
        (t, int(trials[t]), float(starts_ms[t]), ";".join(map(str, np.flatnonzero(Z[t]))))
        for t in range(n)
    )
    write_table(path, ["word", "trial", "bin_start_ms", "latents"], rows)


def read_assignments(path, n_latents: int):
    header, rows = read_table(path)
    if header != ["word", "trial", "bin_start_ms", "latents"]:
        raise DataError(f"{path}: not an assignments table")
    Z = np.zeros((len(rows), n_latents), dtype=np.int8)
    trials = np.empty(len(rows), dtype=np.int64)
    starts = np.empty(len(rows))
    for t, (_, trial, start, lat) in enumerate(rows):
        trials[t], starts[t] = int(trial), float(start)
        for a in filter(None, lat.split(";")):
            a = int(a)
            if not 0 <= a < n_latents:
                raise DimensionError(f"{path}: latent {a} out of range for M={n_latents}")
            Z[t, a] = 1
    return Z, trials, starts


def read_null_rates(path, n_cells: int):
    """Null-model firing probabilities: columns ``bin_start_ms,p_0..p_{N-1}``."""
    header, rows = read_table(path)
    if header[0] != "bin_start_ms" or len(header) != n_cells + 1:
        raise DimensionError(f"{path}: expected bin_start_ms plus {n_cells} rate columns")
    arr = np.array([[float(v) for v in row] for row in rows])
    if np.any((arr[:, 1:] < 0) | (arr[:, 1:] > 1)):
        raise DataError(f"{path}: rates must lie in [0, 1]")
    return arr[:, 0], arr[:, 1:]
