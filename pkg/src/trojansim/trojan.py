"""Input-interception payload: trigger evaluation and the two-mode state
machine that swaps in a stored malicious image on the cycle after a trigger.

Dormant:  pass the legitimate image through, watch one layer's output; if
          any element lands in a trigger band, arm.
Armed:    substitute the selected malicious image for this cycle's input
          (the legitimate image is dropped), skip trigger evaluation, and
          reset to Dormant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, DimensionError
from .models import ForwardTrace, ModelSpec, forward
from .profiling import SigmaBand
from .tensor import Tensor

DORMANT = "Dormant"
ARMED = "Armed"

ROUND_ROBIN = "roundRobin"
FIXED_INDEX = "fixedIndex"


@dataclass(frozen=True, eq=False)
class TrojanConfig:
    watch_layer: str
    bands: tuple[SigmaBand, ...]
    malicious_images: tuple[Tensor, ...]
    selection: str = ROUND_ROBIN
    fixed_index: int = 0

    def __post_init__(self):
        if not self.malicious_images:
            raise ConfigError("maliciousImages must be non-empty")
        shapes = {img.shape for img in self.malicious_images}
        if len(shapes) > 1:
            raise ConfigError(f"malicious images mix shapes: {sorted(shapes)}")
        for b in self.bands:
            if b.layer_name != self.watch_layer:
                raise ConfigError(
                    f"band targets layer {b.layer_name!r} but watchLayer is {self.watch_layer!r}"
                )
        if self.selection not in (ROUND_ROBIN, FIXED_INDEX):
            raise ConfigError(f"selection must be roundRobin or fixedIndex, got {self.selection!r}")
        if not 0 <= self.fixed_index < len(self.malicious_images):
            raise ConfigError(
                f"fixedIndex {self.fixed_index} out of range for {len(self.malicious_images)} images"
            )

    def select_image(self, substitution_ordinal: int) -> tuple[int, Tensor]:
        if self.selection == FIXED_INDEX:
            idx = self.fixed_index
        else:
            idx = substitution_ordinal % len(self.malicious_images)
        return idx, self.malicious_images[idx]


@dataclass(frozen=True)
class TriggerEvent:
    cycle: int
    kind: str  # Triggered | Substituted
    hit_value: float | None = None
    hit_index: int | None = None
    used_malicious_index: int | None = None

    def to_json(self) -> dict:
        obj = {"cycle": self.cycle, "kind": self.kind}
        if self.kind == "Triggered":
            obj["hitValue"] = self.hit_value
            obj["hitIndex"] = self.hit_index
        else:
            obj["usedMaliciousIndex"] = self.used_malicious_index
        return obj


@dataclass(frozen=True)
class TrojanState:
    mode: str = DORMANT
    fired_count: int = 0
    log: tuple[TriggerEvent, ...] = ()

    def __post_init__(self):
        if self.mode not in (DORMANT, ARMED):
            raise ConfigError(f"invalid mode {self.mode!r}")
        fired = sum(1 for e in self.log if e.kind == "Triggered")
        if fired != self.fired_count:
            raise ConfigError(f"firedCount {self.fired_count} != Triggered events in log ({fired})")


@dataclass(frozen=True)
class AttackReport:
    images_processed: int
    trigger_count: int
    trigger_rate: float
    substitutions: int
    misclassifications: int
    clean_equivalence: bool

    def to_json(self) -> dict:
        return {
            "imagesProcessed": self.images_processed,
            "triggerCount": self.trigger_count,
            "triggerRate": self.trigger_rate,
            "substitutions": self.substitutions,
            "misclassifications": self.misclassifications,
            "cleanEquivalence": self.clean_equivalence,
        }


def check_trigger(layer_output: Tensor, bands) -> tuple[int, float] | None:
    """First element (lowest index) inside any band, bounds inclusive."""
    if not bands:
        return None
    vals = layer_output.data.astype(np.float64)
    mask = np.zeros(vals.shape, dtype=bool)
    for b in bands:
        mask |= (vals >= b.lo) & (vals <= b.hi)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    i = int(idx[0])
    return i, float(vals[i])


def step(
    state: TrojanState,
    model: ModelSpec,
    config: TrojanConfig,
    cycle: int,
    legitimate_input: Tensor,
) -> tuple[Tensor, TrojanState, list[TriggerEvent], ForwardTrace]:
    """Advance the payload machine by one image cycle.

    Returns the input that actually entered the pipeline, the new state, the
    events logged this cycle, and the forward trace of the effective input
    (so callers never run the pipeline twice per cycle).
    """
    if legitimate_input.shape != model.input_shape:
        raise DimensionError(
            f"cycle {cycle}: input shape {legitimate_input.shape} != model {model.input_shape}"
        )
    events: list[TriggerEvent] = []
    if state.mode == ARMED:
        ordinal = sum(1 for e in state.log if e.kind == "Substituted")
        used_idx, effective = config.select_image(ordinal)
        trace = forward(model, effective)
        # trigger evaluation is suppressed for the substituted image
        events.append(TriggerEvent(cycle, "Substituted", used_malicious_index=used_idx))
        new_state = TrojanState(DORMANT, state.fired_count, state.log + tuple(events))
        return effective, new_state, events, trace

    effective = legitimate_input
    trace = forward(model, effective)
    hit = check_trigger(trace.taps[config.watch_layer], config.bands)
    if hit is None:
        return effective, state, events, trace
    hit_index, hit_value = hit
    events.append(TriggerEvent(cycle, "Triggered", hit_value=hit_value, hit_index=hit_index))
    new_state = TrojanState(ARMED, state.fired_count + 1, state.log + tuple(events))
    return effective, new_state, events, trace


def run_compromised(
    model: ModelSpec,
    config: TrojanConfig,
    stream: Dataset,
    clean_labels: list[int] | None = None,
) -> tuple[list[int], AttackReport, TrojanState]:
    """Drive the full stream through the compromised pipeline, in order.

    clean_labels are the uncompromised per-cycle outputs; when not supplied
    they are computed here, so the report's misclassification and
    clean-equivalence fields are always filled against a real baseline.
    """
    if config.watch_layer not in model.layer_names():
        raise ConfigError(
            f"watchLayer {config.watch_layer!r} not in model; valid: {model.layer_names()}"
        )
    if clean_labels is None:
        clean_labels = [forward(model, img).final_label for img, _ in stream.items]
    if len(clean_labels) != len(stream):
        raise DataError(f"{len(clean_labels)} clean labels for {len(stream)} stream images")
    state = TrojanState()
    labels: list[int] = []
    for cycle, (img, _) in enumerate(stream.items):
        _, state, _, trace = step(state, model, config, cycle, img)
        labels.append(trace.final_label)
    report = evaluate_attack(clean_labels, (labels, state), stream)
    return labels, report, state


def substituted_cycles(state: TrojanState) -> set[int]:
    return {e.cycle for e in state.log if e.kind == "Substituted"}


def evaluate_attack(
    clean_labels: list[int],
    compromised_run: tuple[list[int], TrojanState],
    stream: Dataset,
) -> AttackReport:
    """Score a compromised run against its clean baseline."""
    labels, state = compromised_run
    if not (len(clean_labels) == len(labels) == len(stream)):
        raise DataError(
            f"length mismatch: {len(clean_labels)} clean, {len(labels)} compromised, "
            f"{len(stream)} stream images"
        )
    substituted = substituted_cycles(state)
    misclassifications = sum(
        1 for c in substituted if labels[c] != clean_labels[c]
    )
    clean_equivalence = all(
        labels[c] == clean_labels[c] for c in range(len(labels)) if c not in substituted
    )
    n = len(labels)
    trigger_count = state.fired_count
    return AttackReport(
        images_processed=n,
        trigger_count=trigger_count,
        trigger_rate=(trigger_count / n) if n else 0.0,
        substitutions=len(substituted),
        misclassifications=misclassifications,
        clean_equivalence=clean_equivalence,
    )


def write_labels_csv(labels: list[int], state: TrojanState, path: str | Path) -> None:
    """Per-cycle outputs: cycle,label,substituted."""
    substituted = substituted_cycles(state)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["cycle", "label", "substituted"])
        for c, label in enumerate(labels):
            w.writerow([c, label, 1 if c in substituted else 0])


def read_labels_csv(path: str | Path) -> list[tuple[int, int, int]]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["cycle", "label", "substituted"]:
        raise DataError(f"{path} is not a labels CSV")
    return [(int(c), int(l), int(s)) for c, l, s in rows[1:]]
