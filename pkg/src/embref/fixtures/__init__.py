from .scenes import (
    RELATIONS,
    GenerationError,
    GeneratorConfig,
    SceneObject,
    ScenePose,
    SceneSample,
    generate_scene,
    horizontal_flip,
    pointing_ray_hits_box,
    relation_scores,
    resolve_referent,
    samples_equal,
)
from .dataset import (
    ChecksumError,
    DatasetError,
    DatasetManifest,
    DatasetReader,
    MissingSampleError,
    VocabularyError,
    generate_dataset,
    generator_config_from_manifest,
    read_dataset,
    write_dataset,
)

__all__ = [
    "RELATIONS",
    "GenerationError",
    "GeneratorConfig",
    "SceneObject",
    "ScenePose",
    "SceneSample",
    "generate_scene",
    "horizontal_flip",
    "pointing_ray_hits_box",
    "relation_scores",
    "resolve_referent",
    "samples_equal",
    "ChecksumError",
    "DatasetError",
    "DatasetManifest",
    "DatasetReader",
    "MissingSampleError",
    "VocabularyError",
    "generate_dataset",
    "generator_config_from_manifest",
    "read_dataset",
    "write_dataset",
]
