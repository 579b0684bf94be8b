from .synth import ROISeries, SceneConfig, apply_clouds, simulate_sar, speckle, synth_scene
from .split import Histogram, SplitResult, cumulative_histogram, dissimilarity, split_dataset, split_rois
from .store import (DatasetError, DatasetIndex, IndexEntry, estimate_coverage, load_index,
                    read_split, scan_index, write_index, write_series, write_split)

__all__ = [
    "ROISeries", "SceneConfig", "apply_clouds", "simulate_sar", "speckle", "synth_scene",
    "Histogram", "SplitResult", "cumulative_histogram", "dissimilarity", "split_dataset",
    "split_rois", "DatasetError", "DatasetIndex", "IndexEntry", "estimate_coverage",
    "load_index", "read_split", "scan_index", "write_index", "write_series", "write_split",
]
