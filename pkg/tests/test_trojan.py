import numpy as np
import pytest

from oracles import check_trigger_naive
from trojansim.data import Dataset, synthesize
from trojansim.errors import ConfigError, DataError, DimensionError
from trojansim.models import LayerSpec, ModelSpec, build_lenet, forward, seed_weights
from trojansim.profiling import SigmaBand
from trojansim.rng import Xoshiro256StarStar
from trojansim.tensor import Kernel, Tensor
from trojansim.trojan import (
    ARMED,
    DORMANT,
    FIXED_INDEX,
    ROUND_ROBIN,
    AttackReport,
    TriggerEvent,
    TrojanConfig,
    TrojanState,
    check_trigger,
    evaluate_attack,
    read_labels_csv,
    run_compromised,
    step,
    substituted_cycles,
    write_labels_csv,
)


def mirror_model():
    """Input (1,) -> dense (x, -x): label 0 iff x >= 0, watchable output."""
    w = np.array([[1.0], [-1.0]], dtype=np.float32)
    k = Kernel(Tensor.from_array(w), Tensor.from_array(np.zeros(2, dtype=np.float32)))
    return ModelSpec("mirror", (1,), (LayerSpec("out", "dense", {"units": 2}, k),))


def scalar_image(v):
    return Tensor.from_array(np.array([v], dtype=np.float32))


def scalar_stream(values, name="stream"):
    return Dataset(name, tuple((scalar_image(v), 0) for v in values), "synthetic(0)")


def band(lo, hi, side="upper", layer="out"):
    return SigmaBand(layer, lo, hi, side, 3.0, 4.0)


UPPER = band(3.0, 4.0)


def make_config(malicious_values=(3.6,), **kw):
    return TrojanConfig("out", (UPPER,), tuple(scalar_image(v) for v in malicious_values), **kw)


# --- check_trigger -------------------------------------------------------


def test_check_trigger_examples():
    t = Tensor.from_array(np.array([0.0, 3.5, 0.0], dtype=np.float32))
    assert check_trigger(t, [UPPER]) == (1, 3.5)
    assert check_trigger(Tensor.from_array(np.zeros(4, dtype=np.float32)), [UPPER]) is None
    assert check_trigger(t, []) is None


def test_check_trigger_bounds_inclusive():
    for v in (3.0, 4.0):
        assert check_trigger(Tensor.from_array(np.array([v], dtype=np.float32)), [UPPER]) == (0, v)
    for v in (2.9999998, 4.0000005):
        got = check_trigger(Tensor.from_array(np.array([v], dtype=np.float32)), [UPPER])
        assert got is None


def test_check_trigger_reports_first_hit():
    t = Tensor.from_array(np.array([1.0, 3.2, 3.9], dtype=np.float32))
    idx, val = check_trigger(t, [UPPER])
    assert idx == 1
    assert val == np.float64(np.float32(3.2))


def test_check_trigger_multiple_bands():
    lower = band(-4.0, -3.0, side="lower")
    t = Tensor.from_array(np.array([0.0, -3.5], dtype=np.float32))
    assert check_trigger(t, [UPPER, lower]) == (1, -3.5)


def test_check_trigger_fuzz_matches_oracle():
    rng = Xoshiro256StarStar(909)
    for _ in range(300):
        n = 1 + rng.next_u64() % 30
        vals = np.array([rng.next_double() * 12 - 6 for _ in range(n)], dtype=np.float32)
        bands = []
        for _ in range(rng.next_u64() % 4):
            lo = rng.next_double() * 10 - 5
            hi = lo + rng.next_double() * 2 + 1e-9
            side = "upper" if rng.next_u64() % 2 else "lower"
            bands.append(band(lo, hi, side=side))
        t = Tensor.from_array(vals)
        assert check_trigger(t, bands) == check_trigger_naive(vals, bands)


# --- state machine -------------------------------------------------------


def test_scripted_run_timing_and_suppression():
    m = mirror_model()
    config = make_config(malicious_values=(3.6,))  # in-band on purpose
    stream_vals = [0.0, 3.5, 3.9, 0.5, 3.2, 3.25, 0.0]
    stream = scalar_stream(stream_vals)

    state = TrojanState()
    effective_inputs = []
    for cycle, (img, _) in enumerate(stream.items):
        eff, state, _, _ = step(state, m, config, cycle, img)
        effective_inputs.append(eff)

    kinds = [(e.cycle, e.kind) for e in state.log]
    assert kinds == [(1, "Triggered"), (2, "Substituted"), (4, "Triggered"), (5, "Substituted")]
    assert state.mode == DORMANT
    assert state.fired_count == 2

    # the substituted cycle ran the stored image, not the legit one
    assert np.array_equal(effective_inputs[2].data, config.malicious_images[0].data)
    # every other cycle ran the stream image unmodified
    for c in (0, 1, 3, 4, 6):
        assert effective_inputs[c] is stream.items[c][0]
    # cycle 2's legit input (3.9, in-band) was dropped without ever being
    # evaluated, and the in-band malicious tap did not re-arm the machine:
    # cycle 3 stayed dormant.
    assert 2 not in {e.cycle for e in state.log if e.kind == "Triggered"}
    assert 3 not in substituted_cycles(state)


def test_substitution_exactly_one_cycle_after_trigger():
    m = mirror_model()
    config = make_config(malicious_values=(0.25,))
    stream = scalar_stream([3.5, 0.0, 3.5, 0.0, 3.1, 3.2, 0.0, 3.9])
    _, _, state = run_compromised(m, config, stream)
    trig = sorted(e.cycle for e in state.log if e.kind == "Triggered")
    subs = sorted(substituted_cycles(state))
    assert trig == [0, 2, 4, 7]
    assert subs == [c + 1 for c in trig if c + 1 < len(stream)]
    # never two substitutions back to back
    assert all(b - a >= 2 for a, b in zip(subs, subs[1:]))


def test_trigger_on_final_cycle_leaves_machine_armed():
    m = mirror_model()
    config = make_config()
    labels, report, state = run_compromised(m, config, scalar_stream([0.0, 3.5]))
    assert state.mode == ARMED
    assert report.trigger_count == 1
    assert report.substitutions == 0
    assert labels == [0, 0]


def test_substituted_label_is_clean_forward_of_malicious():
    m = mirror_model()
    config = make_config(malicious_values=(-5.0,))
    stream = scalar_stream([0.5, 3.5, 1.0, 2.0, 3.2, 1.5])
    labels, report, state = run_compromised(m, config, stream)
    mal_label = forward(m, config.malicious_images[0]).final_label
    assert mal_label == 1
    for c in substituted_cycles(state):
        assert labels[c] == mal_label
    assert labels == [0, 0, 1, 0, 0, 1]
    assert report.misclassifications == 2
    assert report.substitutions == 2
    assert report.clean_equivalence is True
    assert report.trigger_rate == pytest.approx(2 / 6)


def test_unreachable_bands_leave_pipeline_bitwise_clean():
    m = seed_weights(build_lenet(), 2)
    stream = synthesize(20, (1, 28, 28), seed=77)
    mal = synthesize(1, (1, 28, 28), seed=78).items[0][0]
    config = TrojanConfig("fc1", (SigmaBand("fc1", 1e6, 2e6, "upper", 3.0, 4.0),), (mal,))
    labels, report, state = run_compromised(m, config, stream)
    assert state.log == () and state.mode == DORMANT
    assert report.trigger_count == 0 and report.substitutions == 0
    assert report.clean_equivalence is True
    for (img, _), label in zip(stream.items, labels):
        trace = forward(m, img)
        assert label == trace.final_label


def test_round_robin_cycles_through_images():
    m = mirror_model()
    config = make_config(malicious_values=(0.1, 0.2, 0.3), selection=ROUND_ROBIN)
    stream = scalar_stream([3.5, 0.0, 3.5, 0.0, 3.5, 0.0, 3.5, 0.0])
    _, _, state = run_compromised(m, config, stream)
    used = [e.used_malicious_index for e in state.log if e.kind == "Substituted"]
    assert used == [0, 1, 2, 0]


def test_fixed_index_selection():
    m = mirror_model()
    config = make_config(malicious_values=(0.1, 0.2, 0.3), selection=FIXED_INDEX, fixed_index=2)
    stream = scalar_stream([3.5, 0.0, 3.5, 0.0])
    _, _, state = run_compromised(m, config, stream)
    used = [e.used_malicious_index for e in state.log if e.kind == "Substituted"]
    assert used == [2, 2]


def test_step_rejects_wrong_input_shape():
    m = mirror_model()
    with pytest.raises(DimensionError):
        step(TrojanState(), m, make_config(), 0,
             Tensor.from_array(np.zeros(2, dtype=np.float32)))


# --- validation ----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        TrojanConfig("out", (UPPER,), ())
    with pytest.raises(ConfigError):
        TrojanConfig("out", (UPPER,), (scalar_image(1.0),
                                       Tensor.from_array(np.zeros(2, dtype=np.float32))))
    with pytest.raises(ConfigError):
        TrojanConfig("fc1", (UPPER,), (scalar_image(1.0),))  # band targets "out"
    with pytest.raises(ConfigError):
        TrojanConfig("out", (UPPER,), (scalar_image(1.0),), selection="always")
    with pytest.raises(ConfigError):
        TrojanConfig("out", (UPPER,), (scalar_image(1.0),), selection=FIXED_INDEX, fixed_index=1)


def test_state_validation():
    with pytest.raises(ConfigError):
        TrojanState(mode="Sleeping")
    with pytest.raises(ConfigError):
        TrojanState(fired_count=2, log=(TriggerEvent(0, "Triggered", 3.5, 0),))


def test_run_rejects_unknown_watch_layer():
    m = mirror_model()
    config = TrojanConfig("elsewhere", (band(3, 4, layer="elsewhere"),), (scalar_image(1.0),))
    with pytest.raises(ConfigError):
        run_compromised(m, config, scalar_stream([0.0]))


def test_evaluate_attack_length_mismatch():
    m = mirror_model()
    stream = scalar_stream([0.0, 1.0])
    with pytest.raises(DataError):
        evaluate_attack([0], ([0, 0], TrojanState()), stream)
    with pytest.raises(DataError):
        run_compromised(m, make_config(), stream, clean_labels=[0])


def test_event_json_shapes():
    t = TriggerEvent(7, "Triggered", hit_value=3.25, hit_index=4)
    assert t.to_json() == {"cycle": 7, "kind": "Triggered", "hitValue": 3.25, "hitIndex": 4}
    s = TriggerEvent(8, "Substituted", used_malicious_index=1)
    assert s.to_json() == {"cycle": 8, "kind": "Substituted", "usedMaliciousIndex": 1}
    report = AttackReport(10, 2, 0.2, 2, 1, True)
    assert set(report.to_json()) == {
        "imagesProcessed", "triggerCount", "triggerRate",
        "substitutions", "misclassifications", "cleanEquivalence",
    }


# --- labels csv ----------------------------------------------------------


def test_labels_csv_roundtrip(tmp_path):
    m = mirror_model()
    config = make_config(malicious_values=(-5.0,))
    stream = scalar_stream([0.5, 3.5, 1.0, 0.0])
    labels, _, state = run_compromised(m, config, stream)
    path = tmp_path / "labels.csv"
    write_labels_csv(labels, state, path)
    text = path.read_text()
    assert text.splitlines()[0] == "cycle,label,substituted"
    rows = read_labels_csv(path)
    assert [r[0] for r in rows] == list(range(4))
    assert [r[1] for r in rows] == labels
    subs = substituted_cycles(state)
    assert [r[2] for r in rows] == [1 if c in subs else 0 for c in range(4)]
