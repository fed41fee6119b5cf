"""Published per-class IoU rows (S3DIS Area 5) of competing methods and SAT.

Column order: ceiling, floor, wall, beam, column, window, door, table, chair,
sofa, bookcase, board, clutter.  Rows with only mIoU/mAcc reported are left
out since their class variance cannot be computed.
"""

CLASSES = ("ceiling", "floor", "wall", "beam", "column", "window", "door", "table", "chair", "sofa",
           "bookcase", "board", "clutter")
BEAM = CLASSES.index("beam")

ROWS_FULL = {
    "PointNet": (88.8, 97.3, 69.8, 1.0, 3.9, 46.3, 10.8, 59.0, 52.6, 5.9, 40.3, 26.4, 33.2),
    "RSNet": (93.3, 98.3, 79.2, 0.0, 15.8, 45.4, 50.1, 67.9, 65.5, 52.5, 22.5, 41.0, 43.6),
    "PointCNN": (92.3, 98.2, 79.4, 0.0, 17.6, 22.8, 62.1, 74.4, 80.6, 31.7, 66.7, 62.1, 56.7),
    "SPGraph": (89.4, 96.9, 78.1, 0.0, 42.8, 48.9, 61.6, 84.7, 75.4, 69.8, 52.6, 2.1, 52.2),
    "PCCN": (92.3, 96.2, 75.9, 3.0, 6.0, 69.5, 63.5, 66.9, 65.6, 47.3, 68.9, 59.1, 46.2),
    "PointWeb": (92.0, 98.5, 79.4, 0.0, 21.1, 59.7, 34.8, 76.3, 88.3, 46.9, 69.3, 64.9, 52.5),
    "MinkowskiNet": (91.8, 98.7, 86.2, 0.0, 34.1, 48.9, 62.4, 81.6, 89.8, 47.2, 74.9, 74.4, 58.6),
    "KPConv": (92.8, 97.3, 82.4, 0.0, 23.9, 58.0, 69.0, 81.5, 91.0, 75.4, 75.3, 66.7, 58.9),
    "CBL": (93.9, 98.4, 84.2, 0.0, 37.0, 57.7, 71.9, 91.7, 81.8, 77.8, 75.6, 69.1, 62.9),
    "PointTransformer": (94.0, 98.5, 86.3, 0.0, 38.0, 63.4, 74.3, 82.4, 89.1, 80.2, 74.3, 76.0, 59.3),
    "PointNeXt-XL": (94.2, 98.5, 84.4, 0.0, 37.7, 59.3, 74.0, 83.1, 91.6, 77.4, 76.72, 78.8, 60.6),
    "StratifiedFormer": (96.2, 98.7, 85.6, 0.0, 46.1, 60.0, 76.8, 92.6, 84.5, 77.8, 75.2, 78.1, 64.0),
    "SAT": (93.6, 98.5, 87.2, 0.0, 49.3, 61.1, 73.6, 83.7, 91.8, 81.7, 77.9, 82.3, 63.4),
}
