"""upk: segmentation scoring, frame filtration, RGB-D backprojection and
6-DoF object tracking for eating-video sequences, plus a synthetic RGB-D
benchmark with known ground-truth poses."""

__version__ = "0.1.0"
