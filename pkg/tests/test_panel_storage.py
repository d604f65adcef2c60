import json
import os

import numpy as np
import pytest

from exceptions import InvalidInputError, ReportIOError
from panel_storage import (
    load_matrix, load_model_spec, load_panel_csv, read_json, save_panel_csv, write_json,
)
from simulator import TrajectoryPanel, simulate_panel


def test_panel_csv_round_trip(tmp_path, coupled_small_spec):
    panel = simulate_panel(coupled_small_spec, n_waves=3, n_subjects=6, seed=4)
    path = save_panel_csv(panel, str(tmp_path / "panel.csv"))
    loaded = load_panel_csv(path)
    assert loaded.observations.shape == (6, 3, 4)
    assert np.allclose(loaded.observations, panel.observations, rtol=1e-12, atol=0.0)
    assert loaded.seed is None


def test_panel_csv_header_and_line_endings(tmp_path):
    panel = TrajectoryPanel(observations=np.ones((1, 2, 2)))
    path = save_panel_csv(panel, str(tmp_path / "panel.csv"))
    with open(path, 'rb') as f:
        raw = f.read()
    assert raw.startswith(b"subject,wave,item_1,item_2\n")
    assert b"\r\n" not in raw


def test_panel_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,wave,item_1\n0,0,1.0\n")
    with pytest.raises(InvalidInputError):
        load_panel_csv(str(path))


def test_panel_csv_rejects_missing_wave(tmp_path):
    path = tmp_path / "gappy.csv"
    path.write_text("subject,wave,item_1\n0,0,1.0\n0,1,2.0\n1,0,3.0\n")
    with pytest.raises(InvalidInputError):
        load_panel_csv(str(path))


def test_panel_csv_missing_file(tmp_path):
    with pytest.raises(ReportIOError):
        load_panel_csv(str(tmp_path / "absent.csv"))


def test_load_matrix_bare_array_and_object(tmp_path):
    bare = tmp_path / "b.json"
    bare.write_text(json.dumps([[0.7, 0.3], [0.2, 0.8]]))
    wrapped = tmp_path / "wrapped.json"
    wrapped.write_text(json.dumps({'b': [[1.0, 0.0], [0.0, 1.0]], 'note': 'identity'}))

    assert np.allclose(load_matrix(str(bare)), [[0.7, 0.3], [0.2, 0.8]])
    assert np.array_equal(load_matrix(str(wrapped)), np.eye(2))

    with pytest.raises(InvalidInputError):
        load_matrix(str(wrapped), keys=('covariance',))


def test_malformed_json_is_invalid_input(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{'b': [[1.0]]")
    with pytest.raises(InvalidInputError):
        read_json(str(path))


def test_missing_json_is_io_error(tmp_path):
    with pytest.raises(ReportIOError) as info:
        read_json(str(tmp_path / "nope.json"))
    assert info.value.exit_code == 4


def test_load_model_spec(tmp_path, coupled_small_spec):
    path = write_json(coupled_small_spec.to_dict(), str(tmp_path / "spec.json"))
    assert load_model_spec(path).to_dict() == coupled_small_spec.to_dict()


def test_write_json_creates_directories_and_leaves_no_temp_files(tmp_path):
    target = tmp_path / "reports" / "nested" / "out.json"
    write_json({'value': 1}, str(target))
    assert json.loads(target.read_text()) == {'value': 1}
    assert os.listdir(target.parent) == ["out.json"]


def test_failed_write_keeps_previous_file(tmp_path):
    target = tmp_path / "out.json"
    write_json({'value': 1}, str(target))
    with pytest.raises(TypeError):
        write_json({'value': object()}, str(target))
    assert json.loads(target.read_text()) == {'value': 1}
    assert os.listdir(tmp_path) == ["out.json"]


def test_unwritable_destination_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("occupied")
    with pytest.raises(ReportIOError):
        write_json({'value': 1}, str(blocker / "out.json"))


@pytest.mark.skipif(os.name == 'nt', reason="POSIX permission bits")
def test_written_files_follow_the_umask(tmp_path):
    umask = os.umask(0)
    os.umask(umask)
    path = write_json({'a': 1}, str(tmp_path / "report.json"))
    assert os.stat(path).st_mode & 0o777 == 0o666 & ~umask
