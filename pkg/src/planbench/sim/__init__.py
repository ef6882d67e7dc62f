"""Deterministic household simulator for checking plan executability."""

from .engine import (
    SKILL_TABLE,
    AdaptationError,
    ExecutionTrace,
    Instruction,
    Perturbation,
    SimConfig,
    StepRecord,
    TaskSpec,
    TranslationError,
    adapt_input,
    check_goal,
    check_predicate,
    execute_plan,
    load_tasks,
    run_task,
    success_rate,
    translate_instruction,
)
from .resolver import Resolution, ResolutionContext, ResolutionError, Resolver, resolve_object
from .skills import Reason, Skill, SkillKind, SkillOutcome, execute_skill
from .world import SceneError, SimObject, WorldState, bundled_scene, bundled_scene_spec, load_scene, load_scene_file

__all__ = [
    "SKILL_TABLE", "AdaptationError", "ExecutionTrace", "Instruction", "Perturbation", "SimConfig",
    "StepRecord", "TaskSpec", "TranslationError", "adapt_input", "check_goal", "check_predicate",
    "execute_plan", "load_tasks", "run_task", "success_rate", "translate_instruction",
    "Resolution", "ResolutionContext", "ResolutionError", "Resolver", "resolve_object",
    "Reason", "Skill", "SkillKind", "SkillOutcome", "execute_skill",
    "SceneError", "SimObject", "WorldState", "bundled_scene", "bundled_scene_spec", "load_scene",
    "load_scene_file",
]
