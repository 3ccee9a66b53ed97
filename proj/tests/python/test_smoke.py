import math

import numpy as np
import pytest

import limeil


def small_data(seed=0):
    return limeil.gen_synthetic(classes=3, per_class=30, seed=seed, noise_level=0.1,
                                freq_bins=8, time_frames=8, speakers=10)


def test_synthetic_and_split():
    data = small_data()
    assert len(data) == 90
    assert data[0].values.shape == (8, 8)
    train, val, test = limeil.split_by_speaker(data, seed=1)
    assert len(train) + len(val) + len(test) == 90
    speakers = [{s.speaker_id for s in part} for part in (train, val, test)]
    assert not (speakers[0] & speakers[1]) and not (speakers[0] & speakers[2]) and not (speakers[1] & speakers[2])


def test_train_and_predict(tmp_path):
    data = small_data()
    model = limeil.Model("in:8x8x1;c3x4-p2-fc8-out3", seed=2)
    assert len(model.params) == limeil.parameter_count(model.arch)
    trained = limeil.train(model, data, epochs=8, lr=0.01, batch_size=16, seed=3)
    assert trained.accuracy(data) > 0.9
    p = trained.predict_proba(data[0])
    assert math.isclose(sum(p), 1.0, rel_tol=1e-12)
    path = tmp_path / "m.lewc"
    trained.save(str(path))
    assert limeil.Model.load(str(path)).params == trained.params
    scores = trained.explain(data[0], target=0, segments=4, n_samples=64, seed=1)
    assert len(scores) >= 1


def test_weights_and_ewc():
    assert limeil.kernel_weight(0.0) == 1.0
    assert abs(limeil.kernel_weight(0.25, 0.25) - math.exp(-0.5)) < 1e-12
    assert limeil.sample_weight([1, 0], [0, 1]) == 2.0
    assert limeil.sample_weight([1, 0], [0, 1], "manhattan") == 2.0
    assert abs(limeil.sample_weight([1, 0], [0, 1], "cosine") - 1.0) < 1e-15
    value, grad = limeil.ewc_penalty([4.0], [1.0], [1.0], 2.0)
    assert value == 9.0 and grad == [6.0]


def test_slic_labels():
    img = np.zeros((8, 8), dtype=np.float32)
    img[:, :4] = 1.0
    labels = limeil.slic(img, segments=2)
    assert labels.shape == (8, 8)
    assert set(np.unique(labels)) == {0, 1}
    assert (labels[:, :4] == labels[0, 0]).all()


def test_errors_carry_codes():
    with pytest.raises(limeil.LimeilError) as info:
        limeil.Model("in:8x8x1;c3x4-p9-out3")
    assert info.value.code == "invalid_arch"
    with pytest.raises(limeil.LimeilError) as info:
        limeil.Model.load("/nonexistent/model.lewc")
    assert info.value.code == "io"
    assert limeil.main(["--help"]) == 0
