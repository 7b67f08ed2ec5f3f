"""Triplet dataset layouts on disk."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass

log = logging.getLogger(__name__)

LAYOUTS = ("triplet-dirs", "vimeo-list", "middlebury-other")
_TRIPLET_NAMES = (("frame0.png", "gt.png", "frame1.png"), ("im1.png", "im2.png", "im3.png"))
_VIMEO_LINE = re.compile(r"^[\w.-]+/[\w.-]+$")


@dataclass(frozen=True)
class TripletRecord:
    frame0: str
    gt: str
    frame1: str
    id: str


def _triplet_dirs(root: str) -> list:
    out = []
    for name in sorted(os.listdir(root)):
        d = os.path.join(root, name)
        if not os.path.isdir(d):
            continue
        for names in _TRIPLET_NAMES:
            paths = [os.path.join(d, n) for n in names]
            if all(os.path.isfile(p) for p in paths):
                out.append(TripletRecord(paths[0], paths[1], paths[2], name))
                break
        else:
            log.warning("%s: no frame0/gt/frame1 or im1/im2/im3 triplet, skipped", d)
    return out


def _vimeo_list(root: str) -> list:
    listing = os.path.join(root, "tri_testlist.txt")
    if not os.path.isfile(listing):
        raise FileNotFoundError(f"{listing}: missing")
    out = []
    with open(listing, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if not _VIMEO_LINE.match(line):
                log.warning("%s:%d: malformed entry %r, skipped", listing, lineno, line)
                continue
            seq = os.path.join(root, "sequences", *line.split("/"))
            paths = [os.path.join(seq, n) for n in _TRIPLET_NAMES[1]]
            if not all(os.path.isfile(p) for p in paths):
                log.warning("%s:%d: frames missing under %s, skipped", listing, lineno, seq)
                continue
            out.append(TripletRecord(paths[0], paths[1], paths[2], line))
    return out


def _middlebury_other(root: str) -> list:
    data_dir = os.path.join(root, "other-data")
    gt_dir = os.path.join(root, "other-gt-interp")
    split = os.path.isdir(data_dir) and os.path.isdir(gt_dir)
    scenes_root = data_dir if split else root
    out = []
    for scene in sorted(os.listdir(scenes_root)):
        d = os.path.join(scenes_root, scene)
        if not os.path.isdir(d):
            continue
        f0 = os.path.join(d, "frame10.png")
        f1 = os.path.join(d, "frame11.png")
        gt = os.path.join(gt_dir if split else scenes_root, scene, "frame10i11.png")
        if os.path.isfile(f0) and os.path.isfile(f1) and os.path.isfile(gt):
            out.append(TripletRecord(f0, gt, f1, scene))
        else:
            log.info("%s: no ground truth interpolation, skipped", scene)
    return out


def load_dataset(root, layout: str = "triplet-dirs") -> list:
    """List the triplets under ``root``.

    ``triplet-dirs``: one subdirectory per triplet holding frame0/gt/frame1.png
    or im1/im2/im3.png. ``vimeo-list``: ``tri_testlist.txt`` entries resolved to
    ``sequences/<entry>/im{1,2,3}.png``. ``middlebury-other``: scenes with
    frame10/frame10i11/frame11.png, either together or split across
    ``other-data`` and ``other-gt-interp``.
    """
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise FileNotFoundError(f"{root}: dataset root does not exist")
    if layout == "triplet-dirs":
        return _triplet_dirs(root)
    if layout == "vimeo-list":
        return _vimeo_list(root)
    if layout == "middlebury-other":
        return _middlebury_other(root)
    raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
