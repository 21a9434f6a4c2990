"""Masked iterative gradient attack and the binary-to-binary pipeline.

Each step moves only editable pixels against the input gradient of
``BCE(score, target)``, normalised by its largest magnitude, so the most
sensitive pixel moves by exactly ``epsilon``:

    x <- clip(x - M1 * epsilon * g / max|M1 * g|, lo, hi)

``lo``/``hi`` default to [0, 1]. When the image comes from an instrumented
binary they are tightened to the range each group mean can actually reach by
editing its payload bytes, so the crafted image stays realisable.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .cnn import forward, scores_and_gradients
from .errors import EmptyCorpus, InvalidConfig, NothingEditable
from .dataset import THRESHOLD
from .gadgets import GadgetKind, insert_gadgets
from .imaging import classify_transform, image_for_crafting, upsample_apply
from .wasm import encode_module, parse_module


@dataclass
class AttackConfig:
    epsilon: float = 0.05
    tau: float = 1e-13
    max_iterations: int = 10_000
    target_class: int = 0
    bounds: str = "feasible"  # or "unit": plain [0, 1] clamp, ignoring what the bytes can reach
    compute_dtype: str = "float32"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be positive")
        if not 0 < self.tau < 0.5:
            raise InvalidConfig("tau must lie in (0, 0.5)")
        if self.max_iterations < 1:
            raise InvalidConfig("max_iterations must be at least 1")
        if self.target_class not in (0, 1):
            raise InvalidConfig("target_class must be 0 or 1")
        if self.bounds not in ("feasible", "unit"):
            raise InvalidConfig("bounds must be 'feasible' or 'unit'")
        if self.compute_dtype not in ("float32", "float64"):
            raise InvalidConfig("compute_dtype must be float32 or float64")

    def reached(self, score):
        if self.target_class == 0:
            return score <= self.tau
        return score >= 1.0 - self.tau


@dataclass
class AttackReport:
    iterations_used: int
    initial_score: float
    final_substitute_score: float
    reached_tau: bool
    editable_pixels: int = 0
    clamp_deviation_count: int = 0
    inference_score: float = None
    output_path: str = None
    density: float = None
    kind: str = None
    gadget_count: int = None
    model_epochs: int = None
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)

    def dump(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)


def craft(model, image, mask, config=None, bounds=None):
    """Perturb ``image`` inside ``mask`` until the model's score reaches tau.

    Returns ``(adversarial image, AttackReport)``. Pixels outside the mask are
    returned bit-identical to the input.
    """
    config = config or AttackConfig()
    x0 = np.asarray(image, dtype=np.float64)
    editable = np.asarray(mask).astype(bool)
    if not editable.any():
        raise NothingEditable("mask marks no editable pixel")
    if bounds is None or config.bounds == "unit":
        lo, hi = np.zeros_like(x0), np.ones_like(x0)
    else:
        lo, hi = bounds
    lo = np.where(editable, np.maximum(lo, 0.0), x0)
    hi = np.where(editable, np.minimum(hi, 1.0), x0)
    dtype = np.dtype(config.compute_dtype)

    def evaluate(img):
        p, g = scores_and_gradients(model, img, config.target_class, dtype)
        return float(p[0]), g[0]

    x = x0.copy()
    score, grad = evaluate(x)
    initial = score
    iterations = 0
    while not config.reached(score) and iterations < config.max_iterations:
        g = np.where(editable, grad, 0.0)
        norm = np.abs(g).max()
        if norm == 0.0:
            break  # flat region: no descent direction inside the mask
        step = np.where(editable, np.clip(x - config.epsilon * g / norm, lo, hi), x0)
        iterations += 1
        if np.array_equal(step, x):
            # every move is clipped away; the remaining iterations would repeat this one
            iterations = config.max_iterations
            break
        x = step
        score, grad = evaluate(x)
    report = AttackReport(iterations, initial, score, bool(config.reached(score)),
                          editable_pixels=int(editable.sum()), model_epochs=model.epoch_count,
                          config=asdict(config))
    return x, report


def attack_instrumented(data, payload_map, model, config=None):
    """Craft payload bytes for an already instrumented binary."""
    config = config or AttackConfig()
    image, record = image_for_crafting(data, payload_map.offsets)
    adv, report = craft(model, image, record.mask_m1, config, bounds=record.pixel_bounds(data))
    rebuilt = upsample_apply(record, adv, data)
    report.clamp_deviation_count = rebuilt.clamped
    report.inference_score = forward(model, classify_transform(rebuilt.data))
    report.kind = payload_map.kind.value
    report.density = payload_map.density
    report.gadget_count = payload_map.gadget_count
    report.seeds = {"instrument": payload_map.rng_seed}
    return rebuilt.data, report


def instrument(data, kind, density, seed=0):
    module, pmap = insert_gadgets(parse_module(data), GadgetKind(kind), density, seed)
    return encode_module(module), pmap


def attack_binary(data, model, kind=GadgetKind.SE, density=0.02, seed=0, config=None):
    """Instrument ``data`` and craft its payload; returns ``(adversarial bytes, report)``."""
    instrumented, pmap = instrument(data, kind, density, seed)
    return attack_instrumented(instrumented, pmap, model, config)


ORIGINAL, INSTRUMENTED = "Original", "Instr."


def adversarial_series(model):
    return f"Adv. M-{model.epoch_count}"


def transfer_evaluate(samples, substitutes, target, densities, kinds=(GadgetKind.SE,),
                      seed=0, config=None, progress=None):
    """Misclassification rates of the target model on original, instrumented and
    adversarial versions of malicious ``samples``.

    ``substitutes`` is a list of folds, each a list of substitute models (for
    example ``[m1, m50]``). Fold ``f`` instruments with seed ``seed + f`` so the
    instrumented-only series also varies across folds. A binary counts as
    misclassified when the target scores it below 0.5.

    ``progress(report, instrumented, adversarial)`` is called after every
    attack. Returns ``(records, attack reports)``; ``report.aggregate(records)``
    turns the records into the rates table.
    """
    samples = list(samples)
    if not samples:
        raise EmptyCorpus("no samples to evaluate")
    if not substitutes:
        raise InvalidConfig("at least one substitute fold is needed")
    datas = [s.data if hasattr(s, "data") else bytes(s) for s in samples]
    n = len(datas)

    def rate(binaries):
        scores = [forward(target, classify_transform(b)) for b in binaries]
        return sum(1 for p in scores if p < THRESHOLD) / n

    records, reports = [], []
    original = rate(datas)
    for kind in kinds:
        kind = GadgetKind(kind)
        for density in densities:
            for fold, models in enumerate(substitutes):
                key = {"kind": kind.value, "density": density, "fold": fold}
                records.append({**key, "series": ORIGINAL, "value": original})
                instrumented = [instrument(d, kind, density, seed + fold) for d in datas]
                records.append({**key, "series": INSTRUMENTED,
                                "value": rate([b for b, _ in instrumented])})
                for model in models:
                    adversarial = []
                    for i, (data, pmap) in enumerate(instrumented):
                        adv, rep = attack_instrumented(data, pmap, model, config)
                        rep.seeds["fold"] = fold
                        rep.seeds["sample"] = i
                        adversarial.append(adv)
                        reports.append(rep)
                        if progress:
                            progress(rep, data, adv)
                    records.append({**key, "series": adversarial_series(model),
                                    "value": rate(adversarial)})
    return records, reports
