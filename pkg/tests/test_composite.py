import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flareforge import CompositeOptions, NoiseSpec, ParameterError, compose
from flareforge.composite import srgb_decode, srgb_encode


def random_plate(seed, size=48):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (size, size, 3)).astype(np.uint8)


def box_layer(size, y0, y1, x0, x1, value):
    layer = np.zeros((size, size, 3))
    layer[y0:y1, x0:x1] = value
    return layer


def test_gamma_roundtrip_exact_for_all_codes():
    v = np.arange(256, dtype=np.uint8).reshape(1, 256, 1).repeat(3, axis=2)
    assert np.array_equal(srgb_encode(srgb_decode(v)), v)


def test_zero_layers_identity_bit_exact():
    clean = random_plate(0)
    pair = compose(clean, [], [])
    assert np.array_equal(pair.input, clean)
    assert np.array_equal(pair.gt, clean)
    assert not pair.masks["flare"].any()
    assert not pair.masks["ghost"].any()
    assert not pair.masks["light"].any()


def test_scatter_only_gt_is_clean():
    clean = random_plate(1)
    layer = box_layer(48, 10, 20, 10, 20, 0.05)
    pair = compose(clean, [layer], [], CompositeOptions(light_source_in_gt=False))
    assert np.array_equal(pair.gt, clean)
    unsat = pair.input_linear < 1.0
    recovered = pair.input_linear - srgb_decode(clean)
    assert np.abs(recovered - layer)[unsat].max() < 1e-6


def test_layer_recovery_multiple_layers():
    clean = random_plate(2)
    a = box_layer(48, 5, 15, 5, 15, 0.03)
    b = box_layer(48, 12, 25, 12, 25, 0.02)
    ghost = box_layer(48, 30, 40, 30, 40, 0.04)
    pair = compose(clean, [a, b], [ghost],
                   CompositeOptions(light_source_in_gt=False))
    unsat = pair.input_linear < 1.0
    recovered = pair.input_linear - srgb_decode(clean) - b - ghost
    assert np.abs(recovered - a)[unsat].max() < 1e-6


def test_saturated_source_clips_and_masks():
    clean = random_plate(3)
    core = box_layer(48, 20, 24, 20, 24, 10.0)
    pair = compose(clean, [], [], CompositeOptions(light_source_in_gt=True,
                                                   light_layers=(core,)))
    assert np.all(pair.input[20:24, 20:24] == 255)
    assert np.all(pair.input_linear[20:24, 20:24] == 1.0)
    assert pair.masks["light"][20:24, 20:24].all()
    assert pair.masks["flare"][20:24, 20:24].all()
    # gt also carries the saturated core
    assert np.all(pair.gt[20:24, 20:24] == 255)


def test_outside_flare_mask_within_one_code_value():
    # dark plate + dim flare: the gamma curve is steepest here, the mask
    # must still cover every pixel the 8-bit output moved on
    clean = np.zeros((32, 32, 3), dtype=np.uint8)
    rng = np.random.default_rng(7)
    layer = np.zeros((32, 32, 3))
    layer[4:20, 4:20] = rng.uniform(0.0, 0.01, (16, 16, 3))
    pair = compose(clean, [layer], [], CompositeOptions(light_source_in_gt=False))
    changed = (pair.input != pair.gt).any(axis=-1)
    assert not (changed & ~pair.masks["flare"]).any()
    outside = ~pair.masks["flare"]
    assert outside.any()
    diff = np.abs(pair.input.astype(int) - pair.gt.astype(int))
    assert diff[outside].max() <= 1


def test_ghost_mask_subset_of_flare_mask():
    clean = random_plate(4)
    scatter = box_layer(48, 0, 20, 0, 20, 0.05)
    ghost = box_layer(48, 30, 44, 30, 44, 0.06)
    pair = compose(clean, [scatter], [ghost])
    assert not (pair.masks["ghost"] & ~pair.masks["flare"]).any()
    assert pair.masks["ghost"][32, 32]
    assert not pair.masks["ghost"][5, 5]


@settings(max_examples=15, deadline=None)
@given(scale=st.floats(min_value=1.0, max_value=4.0))
def test_monotone_in_source_intensity(scale):
    clean = random_plate(5, size=24)
    layer = box_layer(24, 4, 20, 4, 20, 0.02)
    base = compose(clean, [layer], [], CompositeOptions(light_source_in_gt=False))
    more = compose(clean, [layer * scale], [],
                   CompositeOptions(light_source_in_gt=False))
    assert np.all(more.input.astype(int) >= base.input.astype(int))


def test_exposure_scales_layers():
    clean = np.zeros((24, 24, 3), dtype=np.uint8)
    layer = box_layer(24, 4, 20, 4, 20, 0.1)
    dim = compose(clean, [layer], [], CompositeOptions(light_source_in_gt=False,
                                                       exposure=0.5))
    assert dim.input_linear[10, 10, 0] == pytest.approx(0.05)


def test_size_mismatch_rejected():
    clean = random_plate(6)
    with pytest.raises(ParameterError):
        compose(clean, [np.zeros((24, 24, 3))], [])


def test_noise_keeps_pair_aligned():
    clean = random_plate(8)
    layer = box_layer(48, 10, 20, 10, 20, 0.05)
    opts = CompositeOptions(light_source_in_gt=False,
                            noise=NoiseSpec(seed=3))
    pair = compose(clean, [layer], [], opts)
    # identical noise on both sides: the linear difference is still the layer
    unsat = (pair.input_linear < 1.0) & (pair.input_linear > 0.0) \
        & (pair.gt_linear < 1.0) & (pair.gt_linear > 0.0)
    diff = pair.input_linear - pair.gt_linear
    assert np.abs(diff - layer)[unsat].max() < 1e-9
    again = compose(clean, [layer], [], opts)
    assert np.array_equal(pair.input, again.input)


def test_meta_records_options():
    pair = compose(random_plate(9), [], [],
                   CompositeOptions(light_source_in_gt=False, exposure=2.0))
    assert pair.meta["light_source_in_gt"] is False
    assert pair.meta["exposure"] == 2.0
