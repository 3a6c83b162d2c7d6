"""Datasets, preprocessing transforms, the interchange format and a synthetic generator.

Interchange format: one JSON object per line with fields ``id``, ``label``
(``-1``, ``1`` or ``null``), ``t`` (list of times) and ``x`` (list of
samples, each a list of ``M`` numbers). A record may also carry ``class``,
the original class id. An optional first line ``{"meta": {...}}`` stores
dataset metadata.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .sequences import IrregularSequence, SequenceError

__all__ = [
    "DROP_RATES",
    "FAMILIES",
    "DataError",
    "Dataset",
    "SynthConfig",
    "first_difference",
    "load_activity",
    "load_pendigits",
    "nearest_centroid_auc",
    "parse_record",
    "random_drop",
    "read_jsonl",
    "read_records",
    "relabel_binary",
    "sequence_to_record",
    "split",
    "subsample_windows",
    "synth_generate",
    "write_jsonl",
]

DROP_RATES = (0.1, 0.3, 0.5, 0.7)
FAMILIES = ("sinusoid", "damped", "noise", "regime")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """An immutable list of sequences sharing one feature dimension.

    Attributes:
        sequences: The sequences.
        meta: Free-form metadata (``nominal_period``, class mapping, ...).
    """

    sequences: tuple[IrregularSequence, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        seqs = tuple(self.sequences)
        object.__setattr__(self, "sequences", seqs)
        dims = {s.dim for s in seqs}
        if len(dims) > 1:
            raise DataError(f"mixed feature dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[IrregularSequence]:
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    @property
    def dim(self) -> int:
        if not self.sequences:
            raise DataError("empty dataset has no dimension")
        return self.sequences[0].dim

    @property
    def labels(self) -> list[int | None]:
        return [s.label for s in self.sequences]

    @property
    def negative_ratio(self) -> float | None:
        """Fraction of labeled sequences that are nominal."""
        labeled = [y for y in self.labels if y is not None]
        if not labeled:
            return None
        return sum(1 for y in labeled if y == -1) / len(labeled)

    def map(self, fn) -> Dataset:
        return Dataset(tuple(fn(s) for s in self.sequences), dict(self.meta))

    def with_meta(self, **extra) -> Dataset:
        return Dataset(self.sequences, {**self.meta, **extra})


# ---------------------------------------------------------------- transforms
def first_difference(seq: IrregularSequence) -> IrregularSequence:
    """Displacements ``x^(k+1) - x^(k)`` stamped at ``t^(k+1)``."""
    if len(seq) < 2:
        raise DataError(f"{seq.id or 'sequence'}: first difference needs at least 2 samples")
    return seq.replace(values=np.diff(seq.values, axis=0), timestamps=seq.timestamps[1:])


def random_drop(seq: IrregularSequence, rate: float, rng: np.random.Generator) -> IrregularSequence:
    """Drop each sample independently with probability ``rate``.

    Survivors keep their original timestamps. At least two samples always
    remain: if fewer survive, the earliest of the dropped ones are restored.
    """
    if not 0.0 <= rate < 1.0:
        raise DataError("drop rate must be in [0, 1)")
    K = len(seq)
    keep = rng.random(K) >= rate
    need = min(2, K) - int(keep.sum())
    if need > 0:
        keep[np.flatnonzero(~keep)[:need]] = True
    if keep.all():
        return seq
    return seq.replace(values=seq.values[keep], timestamps=seq.timestamps[keep])


def subsample_windows(seq: IrregularSequence, len_min: int, len_max: int,
                      rng: np.random.Generator) -> list[IrregularSequence]:
    """Cut ``seq`` left to right into disjoint windows of random length.

    Each length is drawn uniformly from ``[len_min, len_max]``. When fewer
    samples than the drawn length remain, the tail becomes a final window if
    it has at least ``len_min`` samples and is discarded otherwise.
    """
    if not 1 <= len_min <= len_max:
        raise DataError("need 1 <= len_min <= len_max")
    K = len(seq)
    out = []
    start = 0
    while K - start >= len_min:
        n = min(int(rng.integers(len_min, len_max + 1)), K - start)
        stop = start + n
        out.append(seq.replace(values=seq.values[start:stop], timestamps=seq.timestamps[start:stop],
                               id=f"{seq.id}#{len(out)}"))
        start = stop
    return out


def relabel_binary(dataset: Dataset, nominal: Iterable[int], anomaly: Iterable[int]) -> Dataset:
    """Map original classes to -1 (nominal) and +1 (anomaly); drop the rest."""
    nominal, anomaly = set(nominal), set(anomaly)
    overlap = nominal & anomaly
    if overlap:
        raise DataError(f"classes {sorted(overlap)} are both nominal and anomalous")
    out = []
    for s in dataset:
        if s.klass is None:
            raise DataError(f"{s.id or 'sequence'}: no original class to relabel")
        if s.klass in nominal:
            out.append(s.replace(label=-1))
        elif s.klass in anomaly:
            out.append(s.replace(label=1))
    result = Dataset(tuple(out), {**dataset.meta, "nominal_classes": sorted(nominal),
                                  "anomaly_classes": sorted(anomaly)})
    return result.with_meta(negative_ratio=result.negative_ratio)


def split(dataset: Dataset, fractions: Sequence[float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded disjoint train/validation/test partition.

    Sizes are ``floor(f * N)`` for each fraction; with fractions summing to 1
    the rounding leftovers go to the training split.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise DataError("fractions must be three positive numbers summing to at most 1")
    N = len(dataset)
    sizes = [int(math.floor(f * N + 1e-9)) for f in fractions]
    if math.isclose(sum(fractions), 1.0):
        sizes[0] += N - sum(sizes)
    if min(sizes) == 0:
        raise DataError(f"split sizes {sizes} leave a partition empty")
    # own stream: a bare default_rng(seed) would replay synth_generate's anomaly draw
    perm = np.random.default_rng([seed, 1]).permutation(N)
    parts, start = [], 0
    for name, n in zip(("train", "validation", "test"), sizes):
        idx = sorted(perm[start:start + n])
        start += n
        part = Dataset(tuple(dataset[i] for i in idx), {**dataset.meta, "split": name})
        parts.append(part.with_meta(negative_ratio=part.negative_ratio))
    return tuple(parts)


# ------------------------------------------------------------------ synthetic
@dataclass(frozen=True)
class SynthConfig:
    """Synthetic labeled dataset recipe.

    Each family draws one sequence sampled every ``nominal_period`` with
    per-sequence random phase and amplitude jitter:

    * ``sinusoid``: ``sin(2 pi freq t + phase)`` per channel.
    * ``damped``: a sinusoid with envelope ``exp(-damping t)``.
    * ``noise``: white Gaussian noise of matched variance.
    * ``regime``: sinusoid whose frequency switches to ``freq * switch_ratio``
      at a random time.

    Attributes:
        n_sequences: Total number of sequences.
        anomaly_fraction: Exact share of anomalies (rounded to a count).
        length_min: Shortest sequence.
        length_max: Longest sequence.
        dim: Channels per sample.
        nominal_period: Sampling period.
        nominal: Family name and parameters of nominal sequences.
        anomaly: Family name and parameters of anomalous sequences.
        noise: Observation noise standard deviation.
    """

    n_sequences: int = 500
    anomaly_fraction: float = 0.1
    length_min: int = 40
    length_max: int = 60
    dim: int = 2
    nominal_period: float = 1.0
    nominal: Mapping = field(default_factory=lambda: {"family": "sinusoid", "freq": 0.05})
    anomaly: Mapping = field(default_factory=lambda: {"family": "noise"})
    noise: float = 0.05

    def __post_init__(self) -> None:
        if self.n_sequences < 1:
            raise DataError("n_sequences must be >= 1")
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise DataError("anomaly_fraction must be in [0, 1]")
        if not 2 <= self.length_min <= self.length_max:
            raise DataError("need 2 <= length_min <= length_max")
        if self.dim < 1 or self.nominal_period <= 0 or self.noise < 0:
            raise DataError("dim >= 1, nominal_period > 0 and noise >= 0 required")
        for spec in (self.nominal, self.anomaly):
            if spec.get("family") not in FAMILIES:
                raise DataError(f"unknown family {spec.get('family')!r}; expected one of {FAMILIES}")

    @classmethod
    def from_dict(cls, values: Mapping) -> SynthConfig:
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(values) - known)
        if unknown:
            raise DataError(f"unknown synth keys: {', '.join(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return {k: (dict(v) if isinstance(v, Mapping) else v)
                for k, v in self.__dict__.items()}


def _draw(spec: Mapping, t: np.ndarray, dim: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    family = spec["family"]
    freq = float(spec.get("freq", 0.05))
    amp = float(spec.get("amplitude", 1.0)) * rng.uniform(0.8, 1.2)
    phase = rng.uniform(0, 2 * np.pi, size=dim)
    offsets = np.arange(dim) * np.pi / 2
    if family == "noise":
        x = rng.normal(scale=amp / math.sqrt(2), size=(len(t), dim))
    else:
        f = freq * rng.uniform(1 - spec.get("freq_jitter", 0.1), 1 + spec.get("freq_jitter", 0.1))
        if family == "regime":
            switch = rng.uniform(t[0], t[-1])
            ratio = float(spec.get("switch_ratio", 3.0))
            # continuous phase across the switch
            ph = np.where(t < switch, f * t, f * switch + ratio * f * (t - switch))
            x = amp * np.sin(2 * np.pi * ph[:, None] + phase + offsets)
        else:
            x = amp * np.sin(2 * np.pi * f * t[:, None] + phase + offsets)
            if family == "damped":
                x = x * np.exp(-float(spec.get("damping", 0.02)) * (t - t[0]))[:, None]
    return x + rng.normal(scale=noise, size=x.shape)


def synth_generate(config: SynthConfig, rng: np.random.Generator) -> Dataset:
    """Draw a labeled dataset with exactly ``round(n * anomaly_fraction)`` anomalies."""
    n = config.n_sequences
    n_anom = int(round(n * config.anomaly_fraction))
    is_anom = np.zeros(n, dtype=bool)
    is_anom[rng.permutation(n)[:n_anom]] = True
    seqs = []
    for i in range(n):
        K = int(rng.integers(config.length_min, config.length_max + 1))
        t = np.arange(K) * config.nominal_period
        spec = config.anomaly if is_anom[i] else config.nominal
        x = _draw(spec, t, config.dim, config.noise, rng)
        seqs.append(IrregularSequence(x, t, label=1 if is_anom[i] else -1, id=f"s{i:05d}",
                                      klass=int(is_anom[i])))
    meta = {"source": "synthetic", "nominal_period": config.nominal_period, "synth": config.to_dict()}
    ds = Dataset(tuple(seqs), meta)
    return ds.with_meta(negative_ratio=ds.negative_ratio)


def nearest_centroid_auc(dataset: Dataset) -> float:
    """Learnability check: AUC of distance to the nominal centroid of the
    mean absolute first difference (per channel)."""
    from .eval import auc_pairwise

    feats = np.array([np.abs(np.diff(s.values, axis=0)).mean(axis=0) for s in dataset])
    labels = np.array(dataset.labels)
    centroid = feats[labels == -1].mean(axis=0)
    return auc_pairwise(np.linalg.norm(feats - centroid, axis=1), labels)


# ---------------------------------------------------------------- interchange
def sequence_to_record(seq: IrregularSequence) -> dict:
    rec = {"id": seq.id, "label": seq.label, "t": seq.timestamps.tolist(), "x": seq.values.tolist()}
    if seq.klass is not None:
        rec["class"] = seq.klass
    return rec


def parse_record(obj: Mapping | str) -> IrregularSequence:
    """Build a sequence from one interchange record (dict or JSON text)."""
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed record: {exc}") from None
    if not isinstance(obj, Mapping):
        raise DataError("record must be a JSON object")
    unknown = set(obj) - {"id", "label", "t", "x", "class"}
    if unknown:
        raise DataError(f"unknown record fields {sorted(unknown)}")
    if "t" not in obj or "x" not in obj:
        raise DataError("record needs fields t and x")
    label = obj.get("label")
    klass = obj.get("class")
    try:
        x = np.asarray(obj["x"], dtype=np.float64)
        t = np.asarray(obj["t"], dtype=np.float64)
        if x.ndim != 2:
            raise DataError("x must be a list of samples, each a list of numbers")
        return IrregularSequence(x, t, label=None if label is None else int(label),
                                 id=str(obj.get("id", "")), klass=None if klass is None else int(klass))
    except (TypeError, ValueError, SequenceError) as exc:
        raise DataError(f"invalid record {obj.get('id', '')!r}: {exc}") from None


def write_jsonl(dataset: Dataset | Sequence[IrregularSequence], path: str | os.PathLike | IO[str],
                meta: Mapping | None = None) -> None:
    if meta is None and isinstance(dataset, Dataset):
        meta = dataset.meta
    lines = []
    if meta:
        lines.append(json.dumps({"meta": meta}, sort_keys=True))
    lines.extend(json.dumps(sequence_to_record(s), sort_keys=True) for s in dataset)
    text = "".join(line + "\n" for line in lines)
    if isinstance(path, io.TextIOBase) or hasattr(path, "write"):
        path.write(text)
        return
    Path(path).write_text(text)


def read_records(stream: Iterable[str]) -> Iterator[tuple[int, IrregularSequence | None, str | None]]:
    """Yield ``(line_number, sequence, error)`` per nonblank line; meta lines are skipped."""
    for n, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield n, None, f"line {n}: malformed JSON ({exc.msg})"
            continue
        if isinstance(obj, dict) and set(obj) == {"meta"}:
            continue
        try:
            yield n, parse_record(obj), None
        except DataError as exc:
            yield n, None, f"line {n}: {exc}"


def read_jsonl(path: str | os.PathLike) -> Dataset:
    """Load a dataset file; any malformed record is an error."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    meta: dict = {}
    seqs = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{n}: malformed JSON ({exc.msg})") from None
        if isinstance(obj, dict) and set(obj) == {"meta"}:
            meta.update(obj["meta"])
            continue
        try:
            seqs.append(parse_record(obj))
        except DataError as exc:
            raise DataError(f"{path}:{n}: {exc}") from None
    return Dataset(tuple(seqs), meta)


# ----------------------------------------------------------------- converters
def load_pendigits(path: str | os.PathLike, period: float = 0.1) -> Dataset:
    """Read the UNIPEN-style ``pendigits-orig`` files.

    Each ``.SEGMENT ... "d"`` header starts a digit; the ``.PEN_DOWN`` blocks
    that follow hold ``x y`` coordinate lines and are concatenated. Samples
    are stamped every ``period`` seconds.
    """
    digits: list[tuple[int, list[list[float]]]] = []
    current: list[list[float]] | None = None
    pen_down = False
    for raw in Path(path).read_text(errors="replace").splitlines():
        line = raw.strip()
        if line.startswith(".SEGMENT"):
            label = line.rsplit('"', 2)
            if len(label) < 3 or not label[1].strip().isdigit():
                raise DataError(f"cannot parse digit label from {line!r}")
            current = []
            digits.append((int(label[1]), current))
        elif line.startswith(".PEN_DOWN"):
            pen_down = True
        elif line.startswith(".PEN_UP"):
            pen_down = False
        elif pen_down and current is not None and line and not line.startswith("."):
            parts = line.split()
            if len(parts) >= 2:
                current.append([float(parts[0]), float(parts[1])])
    seqs = []
    for i, (klass, pts) in enumerate(digits):
        if len(pts) < 2:
            continue
        x = np.asarray(pts, dtype=np.float64)
        seqs.append(IrregularSequence(x, np.arange(len(x)) * period, id=f"pen{i:05d}", klass=klass))
    return Dataset(tuple(seqs), {"source": "pendigits", "nominal_period": period})


def load_activity(root: str | os.PathLike, channels: Sequence[int] | None = None,
                  period: float = 0.04) -> Dataset:
    """Read the daily and sports activities tree ``aNN/pN/sNN.txt``.

    Each segment file holds comma-separated rows of sensor channels; the
    segments of one (activity, subject) pair are concatenated in file order
    into one recording. Activity ``aNN`` becomes class ``NN - 1``.

    Args:
        root: Directory containing the ``aNN`` folders.
        channels: Column indices to keep; all columns when omitted.
        period: Sampling period in seconds.
    """
    root = Path(root)
    activities = sorted(p for p in root.glob("a[0-9]*") if p.is_dir())
    if not activities:
        raise DataError(f"no activity folders under {root}")
    seqs = []
    for a in activities:
        klass = int(a.name[1:]) - 1
        for subject in sorted(p for p in a.glob("p[0-9]*") if p.is_dir()):
            rows = []
            for seg in sorted(subject.glob("s*.txt")):
                rows.append(np.loadtxt(seg, delimiter=",", ndmin=2))
            if not rows:
                continue
            x = np.vstack(rows)
            if channels is not None:
                x = x[:, list(channels)]
            seqs.append(IrregularSequence(x, np.arange(len(x)) * period,
                                          id=f"{a.name}-{subject.name}", klass=klass))
    return Dataset(tuple(seqs), {"source": "activity", "nominal_period": period})
