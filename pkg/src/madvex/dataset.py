"""Corpus handling: ingestion, model-assigned labels, balancing, synthesis."""

import csv
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .assemble import F64, I32, I64, ModuleBuilder, ins
from .errors import DegenerateDataset, DuplicateId, EmptyCorpus, MadvexError
from .wasm import parse_module

BENIGN, MALICIOUS = "benign", "malicious"
LABEL_CLASS = {BENIGN: 0, MALICIOUS: 1}
THRESHOLD = 0.5


@dataclass
class Sample:
    id: str
    data: bytes = None
    path: str = None
    source_label: str = None
    model_label: float = None
    assigned_class: int = None
    provenance: str = ""

    def load(self):
        if self.data is None:
            self.data = Path(self.path).read_bytes()
        return self.data

    @property
    def label(self):
        """Class used for training: the model-assigned one when present."""
        if self.assigned_class is not None:
            return self.assigned_class
        return LABEL_CLASS[self.source_label]


@dataclass
class SkipRecord:
    path: str
    reason: str


# -- ingestion -------------------------------------------------------------

def _read_manifest(path):
    entries = []
    base = Path(path).parent
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            doc = json.loads(line)
            p = Path(doc["path"])
            entries.append((str(p if p.is_absolute() else base / p), doc.get("label"),
                            doc.get("source", ""), doc.get("id")))
    return entries


def ingest(source):
    """Load every binary under a directory, or listed in a JSON-lines manifest.

    Returns ``(samples, skipped)``; files that fail to parse become skip
    records instead of samples. Samples are ordered by id.
    """
    source = Path(source)
    if source.is_dir():
        # a parent directory named benign/ or malicious/ labels its files
        entries = [(str(p), p.parent.name if p.parent.name in LABEL_CLASS else None,
                    "directory", None)
                   for p in sorted(source.rglob("*")) if p.is_file() and p.suffix == ".wasm"]
        root = source
    else:
        entries = _read_manifest(source)
        root = source.parent
    samples, skipped, seen = [], [], set()
    for path, label, provenance, sid in entries:
        sid = sid or os.path.relpath(path, root)
        if sid in seen:
            raise DuplicateId(f"duplicate sample id {sid!r}")
        seen.add(sid)
        if not os.path.exists(path):
            skipped.append(SkipRecord(path, "missing file"))
            continue
        data = Path(path).read_bytes()
        try:
            parse_module(data)
        except MadvexError as exc:
            skipped.append(SkipRecord(path, str(exc)))
            continue
        samples.append(Sample(sid, data, path, label, provenance=provenance))
    if not samples:
        raise EmptyCorpus(f"no parseable binaries in {source}")
    samples.sort(key=lambda s: s.id)
    return samples, skipped


def write_manifest(path, samples):
    """JSON-lines manifest; sample paths are stored relative to the manifest's directory."""
    names = {v: k for k, v in LABEL_CLASS.items()}
    base = Path(path).resolve().parent
    with open(path, "w") as f:
        for s in samples:
            label = names[s.assigned_class] if s.assigned_class is not None else s.source_label
            rel = os.path.relpath(Path(s.path).resolve(), base) if s.path else None
            doc = {"path": rel, "label": label, "source": s.provenance, "id": s.id}
            if s.model_label is not None:
                doc["score"] = s.model_label
            f.write(json.dumps(doc) + "\n")


def write_skip_report(path, skipped):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "reason"])
        for rec in skipped:
            writer.writerow([rec.path, rec.reason])


def save_corpus(samples, directory):
    """Write sample bytes as ``<id>.wasm`` plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for s in samples:
        path = directory / f"{s.id}.wasm"
        path.write_bytes(s.load())
        out.append(replace(s, path=str(path)))
    manifest = directory / "manifest.jsonl"
    write_manifest(manifest, out)
    return manifest


# -- labelling and balancing -----------------------------------------------

def label_with_model(samples, model):
    """Attach the model's score and the thresholded class (score >= 0.5 is malicious)."""
    from .cnn import predict
    from .imaging import classify_transform

    if not samples:
        return []
    images = np.stack([classify_transform(s.load()) for s in samples])
    scores = predict(model, images)
    return [replace(s, model_label=float(p), assigned_class=int(p >= THRESHOLD))
            for s, p in zip(samples, scores)]


def balance(samples, seed=0):
    """Duplicate minority-class samples (with fresh ids) until classes are equal."""
    classes = {}
    for s in samples:
        classes.setdefault(s.label, []).append(s)
    if len(classes) < 2:
        raise DegenerateDataset("balancing needs both classes")
    target = max(len(v) for v in classes.values())
    rng = np.random.default_rng(seed)
    out = list(samples)
    for label in sorted(classes):
        members = classes[label]
        missing = target - len(members)
        if missing <= 0:
            continue
        picks = rng.choice(len(members), size=missing, replace=missing > len(members))
        for n, idx in enumerate(picks):
            src = members[int(idx)]
            out.append(replace(src, id=f"{src.id}~dup{n}",
                               provenance=(src.provenance + "+duplicated").lstrip("+")))
    return out


# -- synthetic corpus ------------------------------------------------------

_WORDS = ("the", "error", "value", "canvas", "render", "frame", "user", "click", "input",
          "button", "image", "audio", "buffer", "string", "length", "index", "module",
          "invalid", "argument", "function", "memory", "window", "player", "score", "level")


class _Gen:
    """Shared scaffolding for the synthetic module generators."""

    FUEL = 0  # global index of the call budget

    def __init__(self, rng):
        self.rng = rng
        self.b = ModuleBuilder()
        self.b.set_memory(1, export="memory")
        self.b.add_global(I32, 0)
        self.b.add_global(I64, 0, export="acc")
        self.funcs = []  # defined function indices taking (i32, i32) -> i32

    def r(self, lo, hi):
        return int(self.rng.integers(lo, hi))

    def addr(self, local):
        """Push a 4-byte aligned address inside the first page."""
        return [ins("local.get", local), ins("i32.const", 0xFFFC), ins("i32.and")]

    def prologue(self):
        return [ins("global.get", self.FUEL), ins("i32.eqz"), ins("if"),
                ins("i32.const", 0), ins("return"), ins("end"),
                ins("global.get", self.FUEL), ins("i32.const", 1), ins("i32.sub"),
                ins("global.set", self.FUEL)]

    def add_main(self):
        body = [ins("i32.const", 400 + self.r(0, 200)), ins("global.set", self.FUEL),
                ins("i32.const", self.r(1, 1 << 20)), ins("local.set", 0)]
        for f in self.funcs:
            body += [ins("local.get", 0), ins("i32.const", self.r(0, 1 << 16)),
                     ins("call", f), ins("local.get", 0), ins("i32.xor"), ins("local.set", 0)]
        body += [ins("global.get", 1), ins("local.get", 0), ins("i64.extend_i32_u"),
                 ins("i64.xor"), ins("global.set", 1), ins("local.get", 0)]
        self.b.add_function([], [I32], [(1, I32)], body, export="main")

    def size(self):
        return sum(sum(i.byte_length for i in body) + 8 for _, _, body in self.b.functions)


class _MinerGen(_Gen):
    """Hash-like kernels: unrolled rotate/xor/add rounds over memory words."""

    def function(self):
        locs = 4
        a, b, c, d, i = 2, 3, 4, 5, 6
        body = self.prologue()
        body += [ins("local.get", 0), ins("local.set", a), ins("local.get", 1), ins("local.set", b),
                 ins("i32.const", self.r(-2**31, 2**31)), ins("local.set", c),
                 ins("i32.const", self.r(-2**31, 2**31)), ins("local.set", d)]
        body += [ins("loop")]
        for _ in range(self.r(6, 20)):
            x, y, z = (self.rng.permutation([a, b, c, d])[:3]).tolist()
            op = ["i32.xor", "i32.add", "i32.and", "i32.or"][self.r(0, 4)]
            k = self.r(-2**31, 2**31) if self.r(0, 2) else self.r(1, 64)
            body += [ins("local.get", x), ins("local.get", y), ins("local.get", z), ins(op),
                     ins("i32.add"), ins("i32.const", k), ins("i32.add"),
                     ins("i32.const", self.r(1, 31)), ins("i32.rotl" if self.r(0, 2) else "i32.rotr"),
                     ins("local.set", x)]
            if self.r(0, 3) == 0:
                body += self.addr(y) + [ins("local.get", x), ins("i32.store", 2, 0)]
            if self.r(0, 3) == 0:
                body += [ins("local.get", z)] + self.addr(x) + [ins("i32.load", 2, 0), ins("i32.xor"),
                                                                ins("local.set", z)]
            if self.r(0, 4) == 0:
                body += [ins("local.get", x), ins("i64.extend_i32_u"),
                         ins("i64.const", self.r(-2**62, 2**62)), ins("i64.mul"),
                         ins("i64.const", self.r(1, 63)), ins("i64.rotl"),
                         ins("i64.const", 32), ins("i64.shr_u"), ins("i32.wrap_i64"),
                         ins("local.get", y), ins("i32.xor"), ins("local.set", y)]
        body += [ins("local.get", i), ins("i32.const", 1), ins("i32.add"), ins("local.tee", i),
                 ins("i32.const", self.r(2, 5)), ins("i32.lt_u"), ins("br_if", 0), ins("end"),
                 ins("local.get", a), ins("local.get", b), ins("i32.xor"),
                 ins("local.get", c), ins("i32.xor"), ins("local.get", d), ins("i32.xor")]
        idx = self.b.add_function([I32, I32], [I32], [(locs + 1, I32)], body)
        self.funcs.append(idx)

    def data(self, nbytes):
        self.b.add_data(1024, self.rng.integers(0, 256, size=nbytes, dtype=np.uint8).tobytes())


class _AppGen(_Gen):
    """Application-like code: branching, helper calls and float arithmetic."""

    def function(self):
        t, f = 2, 3
        body = self.prologue()
        for _ in range(self.r(3, 10)):
            kind = self.r(0, 4)
            if kind == 0 and self.funcs:
                callee = self.funcs[self.r(0, len(self.funcs))]
                body += [ins("local.get", 0), ins("i32.const", self.r(0, 64)), ins("i32.add"),
                         ins("local.get", 1), ins("call", callee), ins("local.set", t)]
            elif kind == 1:
                body += [ins("local.get", 0), ins("i32.const", self.r(0, 100)), ins("i32.gt_s"),
                         ins("if", I32), ins("local.get", 1), ins("i32.const", self.r(1, 10)),
                         ins("i32.mul"), ins("else"), ins("local.get", 0),
                         ins("i32.const", self.r(1, 10)), ins("i32.sub"), ins("end"),
                         ins("local.set", t)]
            elif kind == 2:
                body += [ins("local.get", 0), ins("f64.convert_i32_s"),
                         ins("f64.const", float(self.rng.choice([0.5, 1.5, 2.0, 10.0, 100.0, 0.25]))),
                         ins("f64.mul"), ins("local.get", f), ins("f64.add"), ins("local.set", f)]
            else:
                body += [ins("block"), ins("block"), ins("block"), ins("local.get", 1),
                         ins("i32.const", 3), ins("i32.and"), ins("br_table", [0, 1], 2), ins("end"),
                         ins("local.get", t), ins("i32.const", self.r(1, 50)), ins("i32.add"),
                         ins("local.set", t), ins("br", 1), ins("end"),
                         ins("i32.const", self.r(0, 4096)), ins("i32.load8_u", 0, 0),
                         ins("local.get", t), ins("i32.add"), ins("local.set", t), ins("end")]
        body += [ins("local.get", t), ins("local.get", f), ins("i64.reinterpret_f64"),
                 ins("i32.wrap_i64"), ins("i32.add")]
        idx = self.b.add_function([I32, I32], [I32], [(1, I32), (1, F64)], body)
        self.funcs.append(idx)

    def data(self, nbytes):
        words = []
        while sum(len(w) + 1 for w in words) < nbytes:
            words.append(_WORDS[self.r(0, len(_WORDS))])
        text = " ".join(words).encode()[:nbytes]
        self.b.add_data(1024, text)


DATA_FRACTION = 0.1  # upper bound on the share of the module taken by the data segment


def synth_module(rng, class_hint, target_size):
    gen = (_MinerGen if class_hint == MALICIOUS else _AppGen)(rng)
    data_bytes = int(target_size * rng.uniform(0.0, DATA_FRACTION))
    data_bytes = min(data_bytes, 60000)
    while gen.size() + data_bytes < target_size:
        gen.function()
    if data_bytes:
        gen.data(data_bytes)
    gen.add_main()
    return gen.b.build()


def synth_corpus(seed, n, size_range=(6000, 30000), class_hint=MALICIOUS):
    """Generate ``n`` valid, executable modules of roughly the requested sizes.

    Every module exports ``main() -> i32``; the call graph is bounded by a fuel
    global so execution always terminates.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if class_hint not in LABEL_CLASS:
        raise ValueError(f"class_hint must be {BENIGN!r} or {MALICIOUS!r}")
    rng = np.random.default_rng([seed, LABEL_CLASS[class_hint]])
    lo, hi = size_range
    samples = []
    for i in range(n):
        data = synth_module(rng, class_hint, int(rng.integers(lo, hi + 1)))
        samples.append(Sample(f"synth-{class_hint[0]}-{seed}-{i:05d}", data,
                              source_label=class_hint, provenance="synthetic"))
    return samples
