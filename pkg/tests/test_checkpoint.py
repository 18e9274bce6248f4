import numpy as np
import pytest

from fedgansim import checkpoint, nn
from fedgansim.errors import FormatError


def sample_params():
    spec = nn.mlp_spec([4, 3, 2])
    params = nn.init_params(spec, 9)
    params["scalar"] = np.array(2.5)
    return params


def test_round_trip_bit_exact(tmp_path):
    params = sample_params()
    path = tmp_path / "g.fgs"
    checkpoint.save(params, path)
    back = checkpoint.load(path)
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == params[k].shape
        np.testing.assert_array_equal(back[k], params[k])
    assert not (tmp_path / "g.fgs.partial").exists()


def test_save_load_save_bytes_identical(tmp_path):
    blob = checkpoint.dumps(sample_params())
    assert blob.startswith(b"FGS1 ")
    assert checkpoint.dumps(checkpoint.loads(blob)) == blob


def test_header_layout():
    blob = checkpoint.dumps({"w": np.array([[1.0, 2.0]])})
    assert blob.startswith(b"FGS1 1\nw 2 1 2\n")
    assert blob.endswith(np.array([1.0, 2.0], dtype="<f8").tobytes())


@pytest.mark.parametrize("blob", [
    b"",
    b"XXXX 1\n",
    b"FGS1 1\nw 1 2\n" + b"\x00" * 8,          # truncated payload
    b"FGS1 1\nw 1 1\n" + b"\x00" * 16,         # trailing bytes
    b"FGS1 2\nw 1 1\n" + b"\x00" * 8 + b"w 1 1\n" + b"\x00" * 8,  # duplicate
])
def test_malformed_rejected(blob):
    with pytest.raises(FormatError):
        checkpoint.loads(blob)
