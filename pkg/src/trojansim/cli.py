"""Batch CLI: profile -> forge -> attack -> defend -> report.

One JSON experiment config drives every subcommand; all randomness is
seeded there, so every output file is byte-identical across reruns. Exit
codes: 0 success, 2 config error, 3 data/parse error, 4 statistical
degeneracy, 5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import defense as defense_mod
from . import models, weightfile
from .data import Dataset, SplitPlan, parse_cifar10, parse_idx, split, synthesize
from .errors import (
    ConfigError,
    DataError,
    DegenerateStatsError,
    ForgeError,
    InvariantViolation,
    ParseError,
)
from .profiling import (
    assert_bands_clear,
    collect_observations,
    estimate_trigger_rate,
    export_histogram,
    forge_bands,
    make_probe_dataset,
    profile_layer,
)
from .trojan import TrojanConfig, run_compromised, write_labels_csv

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4
EXIT_INTERNAL = 5


# --- config resolution ----------------------------------------------------

_DEFAULTS = {
    "watchLayer": "fc1",
    "kLo": 3.0,
    "kHi": 4.0,
    "outputDir": "out",
}

_TROJAN_DEFAULTS = {
    "maliciousCount": 1,
    "maliciousSeed": 1337,
    "selection": "roundRobin",
    "fixedIndex": 0,
}

_ESTIMATOR_DEFAULTS = {
    "samples": 100_000,
    "probeCount": 2000,
    "probeSeed": 7177,
}


def load_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return raw


def resolve_config(raw: dict, out_override: str | None, seed_override: int | None) -> dict:
    """Apply defaults and CLI overrides; validate field presence and types.

    The returned dict is the canonical record embedded in every report.
    """
    cfg = dict(_DEFAULTS)
    cfg.update(raw)
    if out_override is not None:
        cfg["outputDir"] = out_override

    if "modelName" not in cfg:
        raise ConfigError("config field missing: modelName")
    if "weights" not in cfg:
        raise ConfigError("config field missing: weights")
    weights = cfg["weights"]
    if not isinstance(weights, dict) or not ({"seed", "path"} & set(weights)):
        raise ConfigError("config field weights must be an object with 'seed' or 'path'")
    if seed_override is not None:
        if "path" in weights:
            raise ConfigError("--seed cannot override weights loaded from a path")
        weights = dict(weights, seed=seed_override)
        cfg["weights"] = weights

    if "dataset" not in cfg:
        raise ConfigError("config field missing: dataset")
    ds = dict(cfg["dataset"])
    kind = ds.get("kind")
    if kind not in ("mnist", "cifar10", "synthetic"):
        raise ConfigError("config field dataset.kind must be mnist, cifar10, or synthetic")
    split_cfg = dict(ds.get("split", {}))
    split_cfg.setdefault("validationCount", 100)
    split_cfg.setdefault("streamCount", 1000)
    split_cfg.setdefault("seed", 0)
    ds["split"] = split_cfg
    if kind == "mnist":
        for fieldname in ("imagesPath", "labelsPath"):
            if fieldname not in ds:
                raise ConfigError(f"config field missing: dataset.{fieldname}")
    elif kind == "cifar10":
        if "binPath" not in ds:
            raise ConfigError("config field missing: dataset.binPath")
    else:
        ds.setdefault("mode", "uniform")
        ds.setdefault("seed", 0)
        ds.setdefault("count", split_cfg["validationCount"] + split_cfg["streamCount"])
    cfg["dataset"] = ds

    trojan = dict(_TROJAN_DEFAULTS)
    trojan.update(cfg.get("trojan", {}))
    cfg["trojan"] = trojan

    est = dict(_ESTIMATOR_DEFAULTS)
    est.update(cfg.get("estimator", {}))
    cfg["estimator"] = est

    if not isinstance(cfg["kLo"], (int, float)) or not isinstance(cfg["kHi"], (int, float)):
        raise ConfigError("config fields kLo/kHi must be numbers")
    return cfg


def build_model(cfg: dict) -> models.ModelSpec:
    name = cfg["modelName"]
    if isinstance(name, str) and name.endswith(".json"):
        try:
            spec = models.model_from_json(json.loads(Path(name).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"modelName file not found: {name}")
    else:
        spec = models.build_model(name)
    weights = cfg["weights"]
    if "path" in weights:
        path = weights["path"]
        if not Path(path).exists():
            raise ConfigError(f"config field weights.path: file not found: {path}")
        return models.apply_weights(spec, weightfile.read_entries(path))
    return models.seed_weights(spec, int(weights["seed"]))


def build_datasets(cfg: dict, model: models.ModelSpec) -> tuple[Dataset, Dataset]:
    """(validation, stream) per the config's dataset section."""
    ds = cfg["dataset"]
    if ds["kind"] == "mnist":
        base = parse_idx(ds["imagesPath"], ds["labelsPath"])
    elif ds["kind"] == "cifar10":
        base = parse_cifar10(ds["binPath"])
    else:
        base = synthesize(int(ds["count"]), model.input_shape, int(ds["seed"]), ds["mode"])
    if base.image_shape is not None and base.image_shape != model.input_shape:
        raise DataError(
            f"dataset images are {base.image_shape}, model expects {model.input_shape}"
        )
    plan = SplitPlan(
        validation_count=int(ds["split"]["validationCount"]),
        stream_count=int(ds["split"]["streamCount"]),
        seed=int(ds["split"]["seed"]),
    )
    return split(base, plan)


def build_trojan_config(cfg: dict, model: models.ModelSpec, bands) -> tuple[TrojanConfig, dict]:
    """TrojanConfig plus the malicious-image tensors keyed for a weight file."""
    t = cfg["trojan"]
    if "maliciousImagesPath" in t:
        entries = weightfile.read_entries(t["maliciousImagesPath"])
        images = tuple(entries[k] for k in entries)
        if not images:
            raise ConfigError("trojan.maliciousImagesPath holds no tensors")
    else:
        noise = synthesize(
            int(t["maliciousCount"]), model.input_shape, int(t["maliciousSeed"]), "uniform"
        )
        images = tuple(img for img, _ in noise.items)
    config = TrojanConfig(
        watch_layer=cfg["watchLayer"],
        bands=tuple(bands),
        malicious_images=images,
        selection=t["selection"],
        fixed_index=int(t["fixedIndex"]),
    )
    blob = {f"malicious{i}": img for i, img in enumerate(images)}
    return config, blob


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )


def _report(cfg: dict, **fields) -> dict:
    return {"formatVersion": FORMAT_VERSION, "config": cfg, **fields}


# --- subcommands ----------------------------------------------------------


def cmd_profile(cfg: dict) -> None:
    model = build_model(cfg)
    validation, _ = build_datasets(cfg, model)
    stats = profile_layer(model, validation, cfg["watchLayer"])
    out = Path(cfg["outputDir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(_report(cfg, stats=stats.to_json()), out / "stats.json")
    export_histogram(stats, out / "histogram.csv")


def _forge_phase(cfg: dict, model, validation):
    stats = profile_layer(model, validation, cfg["watchLayer"])
    bands = forge_bands(stats, float(cfg["kLo"]), float(cfg["kHi"]))
    # exact stealthiness assertion behind the histogram-resolution forge check
    assert_bands_clear(bands, collect_observations(model, validation, cfg["watchLayer"]))
    return stats, bands


def cmd_forge(cfg: dict) -> None:
    model = build_model(cfg)
    validation, _ = build_datasets(cfg, model)
    stats, bands = _forge_phase(cfg, model, validation)
    layer_length = stats.count // len(validation) if len(validation) else 0
    est = cfg["estimator"]
    probe = make_probe_dataset(model, int(est["probeCount"]), int(est["probeSeed"]))
    estimate = estimate_trigger_rate(
        (model, probe, cfg["watchLayer"]), bands, layer_length, mode="monteCarlo"
    )
    out = Path(cfg["outputDir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(_report(cfg, bands=[b.to_json() for b in bands]), out / "bands.json")
    _write_json(_report(cfg, estimate=estimate.to_json()), out / "estimate.json")


def cmd_attack(cfg: dict) -> None:
    model = build_model(cfg)
    validation, stream = build_datasets(cfg, model)
    _, bands = _forge_phase(cfg, model, validation)
    trojan_cfg, malicious_blob = build_trojan_config(cfg, model, bands)
    labels, report, state = run_compromised(model, trojan_cfg, stream)
    clean = [models.forward(model, img).final_label for img, _ in stream.items]

    out = Path(cfg["outputDir"])
    out.mkdir(parents=True, exist_ok=True)
    weightfile.write_entries(malicious_blob, out / "malicious.dlaw")
    trojan_json = {
        "watchLayer": trojan_cfg.watch_layer,
        "bands": [b.to_json() for b in trojan_cfg.bands],
        "maliciousImagesRef": "malicious.dlaw",
        "selection": trojan_cfg.selection,
        "fixedIndex": trojan_cfg.fixed_index,
    }
    _write_json(
        _report(cfg, attackReport=report.to_json(), trojanConfig=trojan_json),
        out / "attack_report.json",
    )
    _write_json(
        _report(cfg, events=[e.to_json() for e in state.log]), out / "events.json"
    )
    write_labels_csv(labels, state, out / "labels.csv")
    with open(out / "clean_labels.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("cycle,label\n")
        for c, label in enumerate(clean):
            f.write(f"{c},{label}\n")


def cmd_defend(cfg: dict) -> None:
    if "defense" not in cfg:
        raise ConfigError("config field missing: defense")
    d = cfg["defense"]
    kind = d.get("kind")
    model = build_model(cfg)
    out = Path(cfg["outputDir"])
    if kind == "alteredValidation":
        if "scale" not in d:
            raise ConfigError("config field missing: defense.scale")
        plan = defense_mod.ScalePlan.from_json(d["scale"])
        validation, stream = build_datasets(cfg, model)
        est = cfg["estimator"]
        report = defense_mod.evaluate_altered_defense(
            model,
            validation,
            plan,
            stream,
            float(cfg["kLo"]),
            float(cfg["kHi"]),
            cfg["watchLayer"],
            probe_count=int(est["probeCount"]),
            probe_seed=int(est["probeSeed"]),
        )
        extra = {"scalePlan": plan.to_json()}
    elif kind == "distributed":
        views = defense_mod.partition(
            model,
            k=d.get("k"),
            cuts=d.get("cuts"),
        )
        report = defense_mod.evaluate_distributed_defense(views, model)
        views_dir = out / "views"
        views_dir.mkdir(parents=True, exist_ok=True)
        for view in views:
            defense_mod.save_view(view, views_dir)
        extra = {"groupCount": len(views)}
    else:
        raise ConfigError(
            "config field defense.kind must be alteredValidation or distributed"
        )
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        _report(cfg, defenseReport=report.to_json(), **extra), out / "defense_report.json"
    )


_PHASE_FILES = {
    "profile": "stats.json",
    "forge": "bands.json",
    "estimate": "estimate.json",
    "attack": "attack_report.json",
    "events": "events.json",
    "defend": "defense_report.json",
}


def cmd_report(cfg: dict) -> None:
    out = Path(cfg["outputDir"])
    phases = {}
    found = False
    for phase, filename in _PHASE_FILES.items():
        path = out / filename
        if path.exists():
            found = True
            payload = json.loads(path.read_text(encoding="utf-8"))
            payload.pop("config", None)
            payload.pop("formatVersion", None)
            phases[phase] = payload
        else:
            phases[phase] = None
    if not found:
        raise DataError(f"no phase outputs found under {out}")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(_report(cfg, phases=phases), out / "summary.json")


_COMMANDS = {
    "profile": cmd_profile,
    "forge": cmd_forge,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="trojansim",
        description="Activation-statistics trigger attack simulator for CNN pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default=None, help="override outputDir")
        p.add_argument("--seed", type=int, default=None, help="override weights seed")
    args = parser.parse_args(argv)

    try:
        cfg = resolve_config(load_config(args.config), args.out, args.seed)
        _COMMANDS[args.command](cfg)
        return EXIT_OK
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, DataError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateStatsError, ForgeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvariantViolation as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
