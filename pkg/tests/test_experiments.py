import csv
import json

import jsonschema
import numpy as np
import pytest

from dualrail_dd.experiments import (
    MESSAGES,
    ConfigError,
    ExperimentConfig,
    bell_circuits,
    load_reference,
    load_schema,
    logical_bell_ket,
    run_experiment,
    write_result,
)
from dualrail_dd.logical import LogicalRegister
from dualrail_dd.operators import basis_state, circuit_unitary
from dualrail_dd.tomography import state_fidelity

QUIET = {"t1": None, "t2": None}
SMALL_GRID = [0.0, 1.0, 2.0, 3.0]


def cfg(**kw):
    return ExperimentConfig.from_dict(kw)


def _validate(result):
    d = result.to_dict()
    jsonschema.validate(d, load_schema("result"))
    jsonschema.validate(d["config"], load_schema("config"))
    return d


@pytest.mark.parametrize(
    "bad",
    [
        {"experiment": "memory", "tauGrid": []},
        {"experiment": "memory", "tauGrid": [0, 2, 1]},
        {"experiment": "memory", "tauGrid": [-1, 1]},
        {"experiment": "memory", "shots": 0},
        {"experiment": "ramsey"},
        {"experiment": "teleport"},
        {"experiment": "memory", "colour": "blue"},
        {"experiment": "memory", "sequence": "D9"},
        {"experiment": "memory", "noise": {"n": 3}},
        {"experiment": "memory", "gateErrorRate": 2},
        {"experiment": "memory", "sequence": "single"},
        {"experiment": "memory", "noise": {"seed": -4}},
        [1, 2],
    ],
)
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_config_roundtrip_and_overrides():
    c = cfg(experiment="memory", shots=10, tauGrid=SMALL_GRID, sequence={"name": "D2*", "period": 0.5})
    assert c.sequence.name == "D2STAR"
    assert ExperimentConfig.from_dict(c.to_dict()) == c
    o = c.with_overrides(seed=7, shots=3, output="x.json")
    assert (o.noise.seed, o.shots, o.output) == (7, 3, "x.json")
    with pytest.raises(ConfigError):
        c.with_overrides(shots=0)
    with pytest.raises(ConfigError):
        c.with_overrides(seed=2**64)


def test_default_register_sizes():
    assert cfg(experiment="memory").noise.n == 2
    assert cfg(experiment="memory", logicalQubits=2).noise.n == 4
    assert cfg(experiment="bell").noise.n == 4
    assert cfg(experiment="verify-sequence", sequence={"name": "DN", "n": 6}).noise.n == 6
    assert cfg(experiment="memory").noise.t2 == (3.8, 4.2)


def test_noiseless_memory_is_flat():
    r = run_experiment(cfg(experiment="memory", noise=QUIET, shots=2, tauGrid=SMALL_GRID))
    for c in r.curves:
        if c.kind == "fidelity":
            assert np.allclose(c.values(), 1.0, atol=1e-12), c.label
    _validate(r)


def test_memory_curves_and_reference():
    r = run_experiment(cfg(experiment="memory", shots=200, tauGrid=[0, 1, 2, 3, 4]))
    labels = {c.label for c in r.curves}
    assert {"Q1", "Q2", "L1 unprotected", "L1 D2"} <= labels
    assert r.fit("Q1", "gaussianT2")["T2_us"] == pytest.approx(3.8, rel=0.1)
    protected, bare = r.curve("L1 D2").values(), r.curve("L1 unprotected").values()
    assert np.all(protected[1:] > bare[1:])
    refs = {(x["name"], x.get("tauUs")): x for x in r.reference}
    assert any(x["value"] == 0.7231 and x["tauUs"] == 6.0 for x in r.reference)
    assert all(x["quote"] for x in refs.values())
    d = _validate(r)
    for c in d["curves"]:
        if c["kind"] in ("fidelity", "probability"):
            assert all(0 <= p[1] <= 1 for p in c["points"])


def test_result_json_is_deterministic(tmp_path):
    c = cfg(experiment="memory", shots=50, tauGrid=SMALL_GRID)
    a, b = run_experiment(c).to_json(), run_experiment(c).to_json()
    assert a == b
    other = run_experiment(c.with_overrides(seed=1)).to_json()
    assert other != a


def test_write_result_emits_csv(tmp_path):
    c = cfg(experiment="memory", shots=20, tauGrid=SMALL_GRID)
    r = run_experiment(c)
    paths = write_result(r, tmp_path / "mem.json")
    assert json.loads(paths[0].read_text())["experiment"] == "memory"
    assert len(paths) == 1 + len(r.curves)
    with open(tmp_path / "mem_L1_D2.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tau_us", "value", "stderr"]
    assert len(rows) == 1 + len(SMALL_GRID)


def test_noiseless_ramsey_is_negative_cosine():
    w = 1.7
    r = run_experiment(cfg(experiment="ramsey", noise=QUIET, shots=1, detuning=w, tauGrid=SMALL_GRID))
    c = r.curve("L1 <Z>")
    assert np.allclose(c.values(), -np.cos(w * c.taus()), atol=1e-9)
    _validate(r)


def test_zero_detuning_ramsey_stays_at_minus_one():
    r = run_experiment(cfg(experiment="ramsey", noise=QUIET, shots=1, detuning=0.0, tauGrid=SMALL_GRID))
    assert np.allclose(r.curve("L1 <Z>").values(), -1.0, atol=1e-9)


def test_bell_circuits_prepare_target():
    reg = LogicalRegister(2)
    target = logical_bell_ket(reg)
    for name, gates in bell_circuits(reg).items():
        psi = circuit_unitary(gates, 4) @ basis_state("0000")
        rho = np.outer(psi, psi.conj())
        assert state_fidelity(rho, target) == pytest.approx(1.0, abs=1e-10), name


def test_noiseless_bell_run():
    r = run_experiment(cfg(experiment="bell", noise=QUIET, shots=1))
    for v in r.extras["fidelities"].values():
        assert v["exact"] == pytest.approx(1.0, abs=1e-10)
    assert r.extras["compiledCircuit"]
    _validate(r)


def test_noiseless_superdense_decodes_every_message():
    r = run_experiment(cfg(experiment="superdense", noise=QUIET, shots=1, tauGrid=[0.0, 0.5]))
    for label in ("physical", "logical"):
        assert np.allclose(r.curve(label).values(), 1.0, atol=1e-10)
    assert len(MESSAGES) == 4
    _validate(r)


@pytest.mark.parametrize("name,passed", [("D2", True), ("D2*", True), ("D4", True), ("single", False)])
def test_verify_sequence(name, passed):
    r = run_experiment(cfg(experiment="verify-sequence", sequence=name))
    assert r.extras["passed"] is passed
    if not passed:
        assert r.extras["report"]["survivors"]
    _validate(r)


def test_reference_sections_carry_quotes():
    for section in ("memory", "memoryTwoLogical", "bell", "ramsey", "superdense"):
        items = load_reference(section)
        assert items
        assert all(isinstance(x["quote"], str) and x["quote"] for x in items)
