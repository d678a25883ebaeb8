import json
from pathlib import Path

import h5py
import numpy as np
import pytest

from sofa_ingest.cli import main
from sofa_ingest.sofa import SofaError, convert, hutubs_split

# the converter is validated against the toolkit it feeds, through the
# published container format
from hrtfnp.store import load_container, load_split


def write_fixture_sofa(
    path: Path,
    n_positions: int = 2,
    n_taps: int = 256,
    fs: float = 44100.0,
    receiver_ys=(0.09, -0.09),
    radius: float = 1.47,
):
    """Minimal binaural SOFA file with spherical source positions."""
    rng = np.random.default_rng(0)
    with h5py.File(path, "w") as f:
        f.attrs["SOFAConventions"] = np.bytes_("SimpleFreeFieldHRIR")
        ir = rng.standard_normal((n_positions, 2, n_taps))
        f.create_dataset("Data.IR", data=ir)
        f.create_dataset("Data.SamplingRate", data=np.array([fs]))
        az = np.linspace(0.0, 300.0, n_positions)
        el = np.linspace(-30.0, 60.0, n_positions)
        sp = f.create_dataset(
            "SourcePosition",
            data=np.column_stack([az, el, np.full(n_positions, radius)]),
        )
        sp.attrs["Type"] = np.bytes_("spherical")
        sp.attrs["Units"] = np.bytes_("degree, degree, metre")
        rp = f.create_dataset(
            "ReceiverPosition",
            data=np.array([[[0.0], [receiver_ys[0]], [0.0]], [[0.0], [receiver_ys[1]], [0.0]]]),
        )
        rp.attrs["Type"] = np.bytes_("cartesian")
    return ir, az, el


def test_convert_round_trips_through_primary_loader(tmp_path):
    sofa_path = tmp_path / "fixture.sofa"
    ir, az, el = write_fixture_sofa(sofa_path)
    out = tmp_path / "subject_9.hrtfc"
    meta = convert(sofa_path, out, "9")

    loaded = load_container(out)
    assert loaded.subject_id == "9"
    assert loaded.fs == 44100.0
    assert loaded.hrirs.shape == (2, 2, 256)
    # taps are bit-identical through the f32 container payload
    assert np.array_equal(
        loaded.hrirs, np.asarray(ir, dtype=np.float32).astype(float)
    )
    # positions are unit vectors matching the spherical coordinates
    assert np.abs(np.linalg.norm(loaded.positions, axis=1) - 1.0).max() < 1e-12
    expect = np.column_stack(
        [
            np.cos(np.radians(el)) * np.cos(np.radians(az)),
            np.cos(np.radians(el)) * np.sin(np.radians(az)),
            np.sin(np.radians(el)),
        ]
    )
    assert np.abs(loaded.positions - expect).max() < 1e-12
    # discarded radius is recorded in the sidecar
    assert meta["radius_m"]["mean"] == pytest.approx(1.47)
    sidecar = json.loads((tmp_path / "subject_9.hrtfc.meta.json").read_text())
    assert sidecar["receiver_order"] == "left-first"


def test_fixture_feeds_primary_pipeline_end_to_end(tmp_path):
    sofa_path = tmp_path / "fixture.sofa"
    write_fixture_sofa(sofa_path)
    raw = tmp_path / "raw.hrtfc"
    assert main(["ingest", "--sofa", str(sofa_path), "--out", str(raw), "--subject-id", "1"]) == 0

    from hrtfnp.cli import main as hrtfnp_main

    aligned = tmp_path / "aligned.hrtfc"
    assert (
        hrtfnp_main(["preprocess", "--input", str(raw), "--output", str(aligned)]) == 0
    )
    result = load_container(aligned)
    assert result.n_taps == 192
    assert result.fs == 33075.0
    assert result.spectra.shape == (2, 2, 97)
    assert np.all(np.isfinite(result.spectra.view(float)))


def test_swapped_receivers_abort(tmp_path):
    sofa_path = tmp_path / "swapped.sofa"
    write_fixture_sofa(sofa_path, receiver_ys=(-0.09, 0.09))
    with pytest.raises(SofaError):
        convert(sofa_path, tmp_path / "x.hrtfc", "1")


def test_ambiguous_receivers_abort(tmp_path):
    sofa_path = tmp_path / "flat.sofa"
    write_fixture_sofa(sofa_path, receiver_ys=(0.0, 0.0))
    assert main(["ingest", "--sofa", str(sofa_path), "--out", str(tmp_path / "x"), "--subject-id", "1"]) == 1


def test_missing_fields_reported(tmp_path):
    path = tmp_path / "empty.sofa"
    with h5py.File(path, "w") as f:
        f.create_dataset("Data.IR", data=np.zeros((1, 2, 8)))
    with pytest.raises(SofaError):
        convert(path, tmp_path / "x.hrtfc", "1")


def test_wrong_receiver_count(tmp_path):
    path = tmp_path / "mono.sofa"
    with h5py.File(path, "w") as f:
        f.create_dataset("Data.IR", data=np.zeros((3, 1, 8)))
        f.create_dataset("Data.SamplingRate", data=np.array([44100.0]))
    with pytest.raises(SofaError):
        convert(path, tmp_path / "x.hrtfc", "1")


def test_manifest_matches_published_split(tmp_path):
    out = tmp_path / "split.json"
    assert main(["manifest", "--out", str(out)]) == 0
    split = load_split(out)  # primary-side validation (disjointness)
    assert split.validate == [4, 28, 30, 53, 65]
    assert split.test == [1, 18, 27, 67]
    assert split.discarded == [88, 96]
    assert len(split.train) == 85
    assert 30 not in split.train
    assert set(split.train) | set(split.validate) | set(split.test) | set(
        split.discarded
    ) == set(range(1, 97))


def test_hutubs_split_is_disjoint():
    split = hutubs_split()
    groups = [split["train"], split["validate"], split["test"], split["discarded"]]
    ids = [i for g in groups for i in g]
    assert len(ids) == len(set(ids)) == 96
