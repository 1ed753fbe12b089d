import json
import math

import numpy as np
import pytest

from dipolar_qip.errors import ValidationError
from dipolar_qip.expsim import TomographyPlan, load_plan
from dipolar_qip.io import (
    csv_text,
    load_system,
    matrix_from_json,
    matrix_to_json,
    read_csv_columns,
    read_json,
    standin_system,
    system_from_json,
    system_to_json,
    write_outputs,
)
from dipolar_qip.qnge import QngeSpec, load_qnge_spec
from dipolar_qip.smp import RobustnessGrid, Smp, load_smp, save_smp
from dipolar_qip.spin import SpinSystem


def test_system_round_trip():
    sys = SpinSystem([10.0, -20.0, 5.0], [[0, 100.0, 0], [100.0, 0, -30.0], [0, -30.0, 0]],
                     [[0, 7.0, 0], [7.0, 0, 0], [0, 0, 0]])
    back = system_from_json(json.loads(json.dumps(system_to_json(sys))))
    assert np.array_equal(back.shifts_hz, sys.shifts_hz)
    assert np.array_equal(back.d_hz, sys.d_hz)
    assert np.array_equal(back.j_hz, sys.j_hz)


def test_standin_labels_unambiguously():
    from dipolar_qip.spin import build_hamiltonian, eigenbasis

    sys = standin_system()
    eb = eigenbasis(build_hamiltonian(sys), strict=True)
    assert sys.n == 4 and len(set(eb.labels)) == 16


@pytest.mark.parametrize("data, field", [
    ({"n": 2, "shifts_hz": [0.0, 1.0]}, "d_hz"),
    ({"n": 0, "shifts_hz": [], "d_hz": []}, "n"),
    ({"n": 2, "shifts_hz": [0.0], "d_hz": []}, "shifts_hz"),
    ({"n": 2, "shifts_hz": [0.0, "x"], "d_hz": []}, "shifts_hz"),
    ({"n": 2, "shifts_hz": [0.0, 1.0], "d_hz": [[1, 0, 5.0]]}, "d_hz[0]"),
    ({"n": 2, "shifts_hz": [0.0, 1.0], "d_hz": [[0, 1, 5.0], [0, 1, 6.0]]}, "duplicate"),
    ({"n": 2, "shifts_hz": [0.0, 1.0], "d_hz": [[0, 1]]}, "d_hz[0]"),
    ({"n": 2, "shifts_hz": [0.0, 1.0], "d_hz": [[0, 1, "a"]]}, "not a number"),
    ({"n": 2, "shifts_hz": [0.0, 1.0], "d_hz": [], "j_hz": [[0, 2, 1.0]]}, "j_hz[0]"),
])
def test_system_validation_names_field(data, field):
    with pytest.raises(ValidationError, match=field.replace("[", r"\[").replace("]", r"\]")):
        system_from_json(data)


def test_read_json_errors(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "a": 1,\n  oops\n}')
    with pytest.raises(ValidationError, match="line 3"):
        read_json(bad)


def test_load_system_prefixes_path(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"n": 1}))
    with pytest.raises(ValidationError, match="s.json"):
        load_system(p)


def test_matrix_round_trip(rng):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.array_equal(matrix_from_json(json.loads(json.dumps(matrix_to_json(m)))), m)


def test_matrix_real_only_and_errors():
    assert np.array_equal(matrix_from_json({"real": [[1.0, 0.0], [0.0, 1.0]]}), np.eye(2))
    with pytest.raises(ValidationError):
        matrix_from_json({"real": [[1.0, 0.0]]})
    with pytest.raises(ValidationError):
        matrix_from_json({"imag": [[1.0]]})


def test_csv_round_trip_is_exact(tmp_path):
    vals = [(0.1, 1 / 3), (-1e-300, 2.5e10)]
    p = tmp_path / "x.csv"
    p.write_text(csv_text(["freq_hz", "amplitude"], vals))
    assert np.array_equal(read_csv_columns(p, ("freq_hz", "amplitude")), np.array(vals))


def test_csv_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("freq_hz,amp\n1,2\n")
    with pytest.raises(ValidationError, match="header"):
        read_csv_columns(p, ("freq_hz", "amplitude"))
    p.write_text("freq_hz,amplitude\n1,2\n3,abc\n")
    with pytest.raises(ValidationError, match="line 3"):
        read_csv_columns(p, ("freq_hz", "amplitude"))
    p.write_text("")
    with pytest.raises(ValidationError):
        read_csv_columns(p, ("freq_hz", "amplitude"))


def test_write_outputs_writes_all(tmp_path):
    files = {tmp_path / "a.txt": "A", tmp_path / "sub" / "b.txt": "B"}
    write_outputs(files)
    assert (tmp_path / "a.txt").read_text() == "A"
    assert (tmp_path / "sub" / "b.txt").read_text() == "B"
    assert not list(tmp_path.rglob("*.tmp"))


def test_write_outputs_failure_leaves_nothing(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    files = {tmp_path / "a.txt": "A", blocker / "b.txt": "B"}
    with pytest.raises(OSError):
        write_outputs(files)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["blocker"]


def test_write_outputs_keeps_old_file_on_failure(tmp_path):
    old = tmp_path / "a.txt"
    old.write_text("old")
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(OSError):
        write_outputs({old: "new", blocker / "b.txt": "B"})
    assert old.read_text() == "old"


def test_smp_round_trip(tmp_path, rng):
    smp = Smp.from_array(rng.uniform(0.1, 1.0, size=(3, 5)))
    p = tmp_path / "p.json"
    save_smp(smp, p)
    assert load_smp(p) == smp
    with pytest.raises(ValidationError):
        Smp.from_json({"segments": [{"tau_s": 1.0}]})
    with pytest.raises(ValidationError):
        load_smp(tmp_path / "missing.json")


def test_grid_round_trip():
    g = RobustnessGrid([(0.9, 1.0), (1.0, 2.0)], [(-5.0, 1.0), (5.0, 1.0)])
    assert RobustnessGrid.from_json(json.loads(json.dumps(g.to_json()))) == g
    with pytest.raises(ValidationError):
        RobustnessGrid.from_json({"rf_scales": [[1.0, 1.0]]})
    with pytest.raises(ValidationError):
        RobustnessGrid.from_json({"rf_scales": [[1.0, -1.0]], "static_offsets_hz": [[0.0, 1.0]]})


def test_plan_round_trip(tmp_path):
    plan = TomographyPlan([[0, 1, 2], [3, 4, 5]], math.radians(5.0))
    p = tmp_path / "plan.json"
    p.write_text(json.dumps(plan.to_json()))
    back = load_plan(p)
    assert back.sets == plan.sets
    assert back.theta_rad == pytest.approx(plan.theta_rad, abs=1e-15)
    with pytest.raises(ValidationError):
        TomographyPlan.from_json({"sets": [["a"]]})


def test_qnge_spec_round_trip(tmp_path):
    spec = QngeSpec(2, 2, 1.0, np.array([0.0, 2 / 3, 4 / 3, 2.0]))
    p = tmp_path / "q.json"
    p.write_text(json.dumps(spec.to_json()))
    back = load_qnge_spec(p)
    assert (back.n0, back.n, back.l_range) == (2, 2, 1.0)
    assert np.array_equal(back.f_samples, spec.f_samples)
    with pytest.raises(ValidationError, match="f_samples"):
        QngeSpec.from_json({"n0": 2, "n": 2, "l": 1.0})
