import dataclasses
import logging

import pytest

from fastrife.datasets import load_dataset
from fastrife.image import save_image
from fastrife.synthetic import static_triplet, write_triplet_tree


def _touch_png(path):
    path.parent.mkdir(parents=True, exist_ok=True)
    save_image(static_triplet(4, 4).gt, path)


def test_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_unknown_layout(tmp_path):
    with pytest.raises(ValueError):
        load_dataset(tmp_path, "flat")


@pytest.mark.parametrize("layout", ["triplet-dirs", "middlebury-other"])
def test_empty_directory(tmp_path, layout):
    assert load_dataset(tmp_path, layout) == []


def test_fixture_tree(tmp_path):
    tris = [dataclasses.replace(static_triplet(8, 6, seed=i), name=n) for i, n in enumerate("ab")]
    write_triplet_tree(tmp_path, tris)
    recs = load_dataset(tmp_path)
    assert [r.id for r in recs] == ["a", "b"]
    for r in recs:
        assert r.frame0 == str(tmp_path / r.id / "frame0.png")
        assert r.gt == str(tmp_path / r.id / "gt.png")
        assert r.frame1 == str(tmp_path / r.id / "frame1.png")


def test_im_names_and_incomplete(tmp_path, caplog):
    for n in ("im1.png", "im2.png", "im3.png"):
        _touch_png(tmp_path / "x" / n)
    _touch_png(tmp_path / "y" / "frame0.png")
    with caplog.at_level(logging.WARNING):
        recs = load_dataset(tmp_path)
    assert [r.id for r in recs] == ["x"]
    assert recs[0].gt.endswith("im2.png")
    assert any("y" in m for m in caplog.messages)


def test_vimeo_list(tmp_path, caplog):
    lines = ["00001/0001", "00001/0002", "this is garbage", "00002/0007"]
    for line in lines[:2] + lines[3:]:
        for n in ("im1.png", "im2.png", "im3.png"):
            _touch_png(tmp_path / "sequences" / line / n)
    (tmp_path / "tri_testlist.txt").write_text("\n".join(lines) + "\n\n")
    with caplog.at_level(logging.WARNING):
        recs = load_dataset(tmp_path, "vimeo-list")
    assert [r.id for r in recs] == ["00001/0001", "00001/0002", "00002/0007"]
    assert recs[2].frame1 == str(tmp_path / "sequences" / "00002" / "0007" / "im3.png")
    warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
    assert len(warnings) == 1 and ":3:" in warnings[0].getMessage()


def test_vimeo_missing_list(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path, "vimeo-list")


def test_middlebury_single_tree(tmp_path):
    for scene, names in {"Beanbags": ("frame10.png", "frame11.png"),
                         "Dimetrodon": ("frame10.png", "frame10i11.png", "frame11.png")}.items():
        for n in names:
            _touch_png(tmp_path / scene / n)
    recs = load_dataset(tmp_path, "middlebury-other")
    assert [r.id for r in recs] == ["Dimetrodon"]
    assert recs[0].gt == str(tmp_path / "Dimetrodon" / "frame10i11.png")


def test_middlebury_split_tree(tmp_path):
    for scene in ("MiniCooper", "Walking"):
        _touch_png(tmp_path / "other-data" / scene / "frame10.png")
        _touch_png(tmp_path / "other-data" / scene / "frame11.png")
    _touch_png(tmp_path / "other-gt-interp" / "Walking" / "frame10i11.png")
    recs = load_dataset(tmp_path, "middlebury-other")
    assert [r.id for r in recs] == ["Walking"]
    assert recs[0].gt == str(tmp_path / "other-gt-interp" / "Walking" / "frame10i11.png")
    assert recs[0].frame0 == str(tmp_path / "other-data" / "Walking" / "frame10.png")
