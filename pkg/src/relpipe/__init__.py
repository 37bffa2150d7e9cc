"""Relationship prediction from label clustering, depth statistics and boosted trees."""

from .boosting import BoostedModel, BoostingParams, train_boosted
from .clustering import (ClusterModel, CohesionReport, FrequencyMatrix, build_frequency_matrix,
                         cohesion, identity_model, kmeans, select_k)
from .dataset_io import (BoundingBox, DepthRaster, Instance, InstanceMask, LabelVocabulary,
                         RelationTriple, SceneRecord, decode_mask, encode_mask, load_dataset,
                         mask_iou, read_depth, write_dataset, write_depth)
from .depth import DepthStats, masked_depth_stats, percentile
from .evaluation import EvalConfig, EvalReport, evaluate, match_instances, relation_accuracy
from .features import CandidatePair, PairFeatures, assemble_features, box_iou, generate_candidates
from .predictors import (FrequencyModel, RoutingRule, boosted_predict, frequency_predict,
                         predict_scene, route_groups)

__version__ = "0.1.0"
