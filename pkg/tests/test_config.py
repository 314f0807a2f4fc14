from pathlib import Path

import pytest

from lsnet.config import ConfigError, format_config, load_config, parse_config
from lsnet.neighbors import Projection, SplitSpec

EXAMPLE = """\
# desk-scale run
num_classes=4
class_names=ground,building,tree,pole
branches=xy,3d
fma_pool=mean
level.1.d_out=16
level.1.k=25
level.2.d_out=32
level.2.s1=3
train.epochs=2
train.rotate=false
train.lr0=0.005
data=scene.lspc
out=run
"""


def test_parse_example(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text(EXAMPLE)
    run = load_config(f)
    net = run.network
    assert net.branches == (Projection.XY, Projection.FULL3D)
    assert net.fma_pool == "mean"
    assert [lvl.d_out for lvl in net.levels] == [16, 32]
    assert net.levels[0].k == 25 and net.levels[0].split == SplitSpec(6, 4)
    assert net.levels[1].split == SplitSpec(3, 4)
    assert run.train.epochs == 2 and run.train.rotate is False and run.train.lr0 == 0.005
    assert run.data == [tmp_path / "scene.lspc"]
    assert run.out == tmp_path / "run"


def test_round_trip():
    run = parse_config(EXAMPLE, Path("/x"))
    again = parse_config(format_config(run), Path("/x"))
    assert again.network == run.network
    assert again.train == run.train


@pytest.mark.parametrize(
    "text",
    [
        "num_classes=4\nnum_classes=5\n",
        "num_classes=4\nbogus=1\n",
        "branches=xy\n",
        "num_classes=4\nlevel.2.k=9\n",
        "num_classes=4\nlevel.1.width=9\n",
        "num_classes=4\ntrain.momentum=0.9\n",
        "num_classes=four\n",
        "num_classes=4\nfma_pool=sum\n",
        "num_classes=4\nlevel.1.k=4\nlevel.1.s1=5\n",
        "num_classes=4\njust text\n",
    ],
)
def test_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)
