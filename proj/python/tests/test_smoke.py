import math

import numpy as np
import pytest

import amil


def test_squash_and_pooling():
    assert amil.squash([3.0, 4.0]) == pytest.approx([0.6 * 25 / 26, 0.8 * 25 / 26])
    s, weights = amil.adjust_pool(np.array([[1.0, 0.0], [0.0, 1.0]]), 3)
    assert len(weights) == 3
    assert all(sum(w) == pytest.approx(1.0) for w in weights)
    assert np.linalg.norm(s) < 1.0


def test_losses():
    assert amil.margin_loss(0.5, 1) == pytest.approx(0.16)
    assert amil.instance_prob(math.log(2.0)) == pytest.approx(0.5)
    assert amil.bag_prob_negative([0.5, 0.5]) == 0.25
    assert amil.coupled_bag_loss(0.5, [0.5], 1) == pytest.approx(math.log(2.0))
    assert amil.update_k(amil.AdversarialState(), 1.0, 0.0).k == pytest.approx(0.0005)
    with pytest.raises(ValueError):
        amil.margin_loss(1.5, 1)


def test_pose_round_trip():
    image, keypoints, heatmaps = amil.generate_sample(3)
    assert image.shape == (64, 64)
    assert heatmaps.shape == (7, 8, 8)
    decoded = amil.decode_pose(heatmaps, 64)
    for (x, y, _), (dx, dy) in zip(keypoints, decoded):
        assert abs(x - dx) <= 4.0 and abs(y - dy) <= 4.0
    gt = [[(x, y) for x, y, _ in keypoints]]
    assert amil.pck(gt, gt, 0.2) == 1.0


def test_schedule_and_audit():
    assert amil.lr_schedule(0.001, 40) == pytest.approx(0.00025)
    errors = amil.gradient_audit(2, ["pooling", "margin"])
    assert set(errors) == {"pooling", "margin"}
    assert max(errors.values()) < 1e-4
