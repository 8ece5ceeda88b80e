import json

import numpy as np
import pytest

from mrsr.phantom import Ellipsoid, LayeredShell, PhantomSpec, Slab, default_spec, generate_phantom, random_spec
from mrsr.quant import estimate_t2, roi_mean_t2, RoiMask
from mrsr.resample import degrade_slices, tricubic_upsample
from mrsr.volume import ScanParams

PARAMS = ScanParams.dess_default()


def test_single_slab_35_2():
    spec = PhantomSpec((12, 12, 12), (1, 1, 1), (Slab((2, 2, 2), (9, 9, 9), 0.8, 35.2),))
    vol, truth = generate_phantom(spec, PARAMS)
    m = estimate_t2(vol, PARAMS)
    assert np.array_equal(m.valid, truth.valid)
    assert truth.valid.sum() == 8**3
    assert np.max(np.abs(m.values[m.valid] - 35.2)) <= 1e-9 * 35.2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noiseless_round_trip(seed):
    spec = random_spec(seed, dims=(32, 32, 24))
    vol, truth = generate_phantom(spec, PARAMS)
    m = estimate_t2(vol, PARAMS)
    assert np.array_equal(m.valid, truth.valid)
    rel = np.abs(m.values[m.valid] - truth.values[m.valid]) / truth.values[m.valid]
    assert rel.max() <= 1e-9


def test_second_echo_never_exceeds_first():
    vol, _ = generate_phantom(default_spec(), PARAMS)
    assert np.all(vol.data[1] <= vol.data[0])


def test_background_invalid_in_truth():
    _, truth = generate_phantom(default_spec(), PARAMS)
    assert not truth.valid[0, 0, 0]
    assert truth.values[0, 0, 0] == 0


def test_last_writer_wins():
    big = Ellipsoid((5, 5, 5), (4, 4, 4), 0.5, 30.0)
    small = Ellipsoid((5, 5, 5), (1, 1, 1), 0.9, 50.0)
    _, truth = generate_phantom(PhantomSpec((11, 11, 11), (1, 1, 1), (big, small)), PARAMS)
    assert truth.values[5, 5, 5] == 50.0
    assert truth.values[5, 5, 8] == 30.0
    _, flipped = generate_phantom(PhantomSpec((11, 11, 11), (1, 1, 1), (small, big)), PARAMS)
    assert flipped.values[5, 5, 5] == 30.0


def test_noise_is_seeded():
    spec = default_spec(dims=(24, 24, 24), noise_sigma=0.01, seed=9)
    a, _ = generate_phantom(spec, PARAMS)
    b, _ = generate_phantom(spec, PARAMS)
    assert a.data.tobytes() == b.data.tobytes()
    c, _ = generate_phantom(default_spec(dims=(24, 24, 24), noise_sigma=0.01, seed=10), PARAMS)
    assert not np.array_equal(a.data, c.data)


def test_spec_json_round_trip():
    spec = random_spec(5)
    text = json.dumps(spec.to_json())
    assert PhantomSpec.from_json(json.loads(text)) == spec
    spec = default_spec()
    assert PhantomSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


@pytest.mark.parametrize(
    "structure",
    [Slab((0, 0, 0), (1, 1, 1), 0.0, 30.0), Slab((0, 0, 0), (1, 1, 1), 0.5, 150.0),
     LayeredShell((1, 1, 1), (1, 1, 1), ((0.5, 1.2, 30.0),))],
)
def test_spec_validation(structure):
    with pytest.raises(ValueError):
        PhantomSpec((4, 4, 4), (1, 1, 1), (structure,))


def test_empty_spec_rejected():
    with pytest.raises(ValueError):
        PhantomSpec((4, 4, 4), (1, 1, 1), ())


def test_layers_are_disjoint_shells():
    spec = default_spec()
    shell = spec.structures[1]
    coords = spec.coords()
    outer, deep = shell.layer_mask(coords, 0), shell.layer_mask(coords, 1)
    assert outer.any() and deep.any()
    assert not (outer & deep).any()


def test_blur_raises_deep_layer_t2():
    spec = default_spec()
    vol, truth = generate_phantom(spec, PARAMS)
    deep = spec.structures[1].layer_mask(spec.coords(), 1)
    tci = tricubic_upsample(degrade_slices(vol, 2), 2)
    assert roi_mean_t2(truth, RoiMask(deep)) == pytest.approx(25.0)
    assert roi_mean_t2(estimate_t2(tci, PARAMS), RoiMask(deep)) > 25.0
