import numpy as np
import pytest

from polarseg import cascade as cc
from polarseg import fusion, nncore
from polarseg import synthdata as sd

SIZE = 32
CONFIGS = [cc.LevelConfig(8, n_angle=16, n_radius=8), cc.LevelConfig(4, n_angle=16, n_radius=8)]


def small_dataset(n=4, seed=0):
    ranges = sd.DatasetRanges(size=SIZE, shape=sd.ShapeRanges(base_radius=(7, 10), center_jitter=1.0))
    samples = [sd.gen_sample(seed * 1000 + i, ranges) for i in range(n)]
    return [s.image for s in samples], [s.mask for s in samples]


PARAMS = cc.CascadeTrainParams(hidden=4, epochs=2)


def test_level_config_validation():
    assert cc.LevelConfig(16).input_dim == 2 * 16 * 48
    with pytest.raises(ValueError):
        cc.LevelConfig(12, n_angle=80)
    with pytest.raises(ValueError):
        cc.CascadeModel([])


def test_model_dims_must_match_config():
    with pytest.raises(ValueError):
        cc.CascadeModel([(nncore.zero_bilstm(10, 2, 5), CONFIGS[0])])


@pytest.mark.parametrize("u", [0.0, 0.5, 1.0])
def test_zero_model_cascade_is_zero_for_any_init(u):
    cfg = CONFIGS[0]
    model = nncore.zero_bilstm(cfg.input_dim, 3, cfg.band_size)
    casc = cc.CascadeModel([(model, cfg)], uniform_init_value=u)
    img = np.random.default_rng(0).random((SIZE, SIZE))
    final, per = cc.run_cascade(casc, img)
    assert len(per) == 1 and per[-1] is final
    assert np.all(final.data[final.valid] == 0)


def test_first_level_context_is_constant():
    cfg = CONFIGS[0]
    model = nncore.zero_bilstm(cfg.input_dim, 3, cfg.band_size)
    casc = cc.CascadeModel([(model, cfg)], uniform_init_value=0.3)
    images, _ = small_dataset(1)
    (ctx,) = cc.level_inputs(casc, images, 0)
    np.testing.assert_array_equal(ctx.data, 0.3)


def test_single_level_single_sample_matches_train_bilstm():
    images, labels = small_dataset(1)
    cfg = CONFIGS[0]
    views = fusion.ViewpointSet((0.0,))
    params = cc.CascadeTrainParams(hidden=3, epochs=3, views=views)
    casc, curves = cc.train_cascade([cfg], images, labels, params, seed=7)
    init_seed, shuffle_seed = cc._level_seeds(7, 0)
    model = nncore.init_bilstm(cfg.input_dim, 3, cfg.band_size, 0.01, init_seed)
    ctx = fusion.uniform_map(images[0].shape, 0.5, cfg.polar())
    data = [
        (
            fusion.input_sequence(images[0], ctx, 0.0, cfg.scale, cfg.polar()),
            fusion.label_sequence(labels[0], 0.0, cfg.scale, cfg.polar()),
        )
    ]
    ref, reports = nncore.train_bilstm(model, data, 3, nncore.TrainConfig(), shuffle_seed)
    for k in nncore.PARAM_NAMES:
        assert np.array_equal(casc.levels[0][0].params()[k], ref.params()[k])
    assert [r.mean_loss for r in curves[0]] == [r.mean_loss for r in reports]


@pytest.fixture(scope="module")
def trained():
    images, labels = small_dataset()
    partials = []

    def on_level(k, partial, reports):
        partials.append(partial)

    casc, curves = cc.train_cascade(CONFIGS, images, labels, PARAMS, seed=1, on_level=on_level)
    return images, labels, casc, curves, partials


def test_training_records_curves_and_levels(trained):
    _, _, casc, curves, partials = trained
    assert len(casc) == 2 and [len(c) for c in curves] == [2, 2]
    assert [len(p) for p in partials] == [1, 2]


def test_training_uses_every_view(trained):
    images, labels, casc, _, _ = trained
    data = cc.build_level_dataset(images, labels, cc.level_inputs(casc, images, 0), CONFIGS[0], casc.views)
    assert len(data) == 3 * len(images)


def test_earlier_levels_frozen(trained):
    images, _, casc, _, partials = trained
    level0_only = partials[0]
    for img in images:
        before = cc.run_cascade(level0_only, img)[0].data
        after = cc.run_cascade(casc, img)[1][0].data
        assert np.array_equal(before, after)
    # replacing the last level never changes earlier maps
    cfg = CONFIGS[1]
    swapped = cc.CascadeModel([casc.levels[0], (nncore.zero_bilstm(cfg.input_dim, 4, cfg.band_size), cfg)])
    assert np.array_equal(cc.run_cascade(swapped, images[0])[1][0].data, cc.run_cascade(casc, images[0])[1][0].data)


def test_training_deterministic(trained):
    images, labels, casc, curves, _ = trained
    again, curves2 = cc.train_cascade(CONFIGS, images, labels, PARAMS, seed=1)
    for (a, _), (b, _) in zip(casc.levels, again.levels):
        for k in nncore.PARAM_NAMES:
            assert np.array_equal(a.params()[k], b.params()[k])
    assert [[r.mean_loss for r in c] for c in curves] == [[r.mean_loss for r in c] for c in curves2]


def test_parallel_inputs_identical(trained):
    images, _, casc, _, _ = trained
    serial = cc.level_inputs(casc, images, 1, jobs=1)
    threaded = cc.level_inputs(casc, images, 1, jobs=3)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(serial, threaded))


def test_level_changes(trained):
    images, _, casc, _, _ = trained
    _, per = cc.run_cascade(casc, images[0])
    (change,) = cc.level_changes(per)
    valid = per[0].valid & per[1].valid
    assert change == pytest.approx(np.abs(per[1].data - per[0].data)[valid].mean())


def test_image_shape_checked(trained):
    _, _, casc, _, _ = trained
    casc2 = cc.CascadeModel(casc.levels, image_shape=(SIZE, SIZE))
    with pytest.raises(ValueError):
        cc.run_cascade(casc2, np.zeros((SIZE + 2, SIZE)))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        cc.train_cascade(CONFIGS, [], [], PARAMS)


def test_save_load_round_trip(tmp_path, trained):
    images, _, casc, _, _ = trained
    casc.image_shape = (SIZE, SIZE)
    cc.save_cascade(tmp_path, casc, {"note": "x"})
    back = cc.load_cascade(tmp_path)
    assert back.image_shape == (SIZE, SIZE) and back.uniform_init_value == casc.uniform_init_value
    assert back.views.offsets == casc.views.offsets
    a = cc.run_cascade(casc, images[0])[0].data
    b = cc.run_cascade(back, images[0])[0].data
    assert np.array_equal(a, b)
    casc.image_shape = None
