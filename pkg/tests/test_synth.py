import numpy as np
import pytest

from lsnet.synth import CLASS_NAMES, DEFAULT_PROPORTIONS, synth_scene


def test_deterministic():
    a, b = synth_scene(7, 2000), synth_scene(7, 2000)
    assert a.cloud.positions.tobytes() == b.cloud.positions.tobytes()
    assert np.array_equal(a.cloud.labels, b.cloud.labels)
    assert synth_scene(8, 2000).cloud.positions.tobytes() != a.cloud.positions.tobytes()


def test_building_points_inside_box_height():
    scene = synth_scene(3, 4096)
    pos, lab = scene.cloud.positions, scene.cloud.labels
    b = pos[lab == 1]
    owner = np.zeros(len(b), dtype=bool)
    for box in scene.buildings:
        inside = (b[:, 0] >= box.x0 - 1e-9) & (b[:, 0] <= box.x1 + 1e-9) & (b[:, 1] >= box.y0 - 1e-9) & (b[:, 1] <= box.y1 + 1e-9)
        assert np.all((b[inside, 2] >= 0) & (b[inside, 2] <= box.height + 1e-9))
        owner |= inside
    assert owner.all()


def test_ground_is_flat():
    scene = synth_scene(1, 4096)
    z = scene.cloud.positions[scene.cloud.labels == 0, 2]
    assert np.abs(z).max() < 0.2


@pytest.mark.parametrize("seed", range(10))
def test_class_histogram_matches_proportions(seed):
    scene = synth_scene(seed, 4096)
    hist = np.bincount(scene.cloud.labels, minlength=4) / 4096
    assert np.all(np.abs(hist - np.array(DEFAULT_PROPORTIONS)) <= 0.02)


def test_custom_proportions():
    hist = np.bincount(synth_scene(0, 1000, proportions=(1, 1, 1, 1)).cloud.labels, minlength=4)
    assert hist.tolist() == [250] * 4


def test_vertical_structures_make_xy_branch_differ():
    from lsnet.neighbors import Projection, knn_table

    pos = synth_scene(0, 2048).cloud.positions
    assert not np.array_equal(knn_table(pos, 8, Projection.XY).indices, knn_table(pos, 8).indices)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        synth_scene(0, 99)
    with pytest.raises(ValueError):
        synth_scene(0, 1000, extent=10)
    assert len(CLASS_NAMES) == 4
