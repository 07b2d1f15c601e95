"""Two-stage random decision forest hand segmentation from depth maps."""
from .cascade import CascadeModel, detect_rois, load_model, run_cascade, save_model, train_cascade
from .evaluation import evaluate_batch
from .features import SplitParams, feature, goes_left
from .forest import Forest, TrainConfig, Tree
from .inference import forest_probability, infer_map, tree_posterior
from .metrics import Confusion, Scores, confusion, scores
from .postprocess import FilterConfig, bilateral_filter, sweep_boundary
from .raster import (BACKGROUND_DEPTH, DepthMap, LabelMask, Pixel, ProbabilityMap, Roi,
                     SamplePair, depth_at, load_sample_pair)
from .training import best_candidate, sample_training_points, split_loss, train_forest, train_tree

__version__ = "0.1.0"
