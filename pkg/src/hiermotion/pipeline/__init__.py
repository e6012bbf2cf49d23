"""Milestone-based hierarchical generation pipeline."""

from .conditions import (FrameCondition, StartSpec, blend_weights, build_milestone_condition,
                         empty_object, frame_conditions, leg_object)
from .generate import (InteractionResult, Keyframe, LegResult, MilestonePlan, Segment, complete_trajectory,
                       generate_interaction, generate_leg, generate_milestone_poses, generate_milestones,
                       infill_motion, sample_goal, sample_goal_pose)
from .models import (DENOISERS, SUBMODELS, DenoiserConfig, Leg, ModelBundle, PipelineConfig,
                     legs_from_record, legs_from_records, load_submodel, save_submodel, train_bundle,
                     train_submodel, untrained_bundle)

__all__ = [
    "DENOISERS", "SUBMODELS", "DenoiserConfig", "FrameCondition", "InteractionResult", "Keyframe", "Leg",
    "LegResult", "MilestonePlan", "ModelBundle", "PipelineConfig", "Segment", "StartSpec", "blend_weights",
    "build_milestone_condition", "complete_trajectory", "empty_object", "frame_conditions",
    "generate_interaction", "generate_leg", "generate_milestone_poses", "generate_milestones",
    "infill_motion", "leg_object", "legs_from_record", "legs_from_records", "load_submodel",
    "sample_goal", "sample_goal_pose", "save_submodel", "train_bundle", "train_submodel",
    "untrained_bundle",
]
