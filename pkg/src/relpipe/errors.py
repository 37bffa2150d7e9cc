"""Exception types shared across the pipeline.

Every error carries a short machine-readable ``category`` that the CLI
prints on stderr next to the human message.
"""


class RelpipeError(Exception):
    category = "error"


class DataParseError(RelpipeError, ValueError):
    category = "parse_error"

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: byte {offset}: {message}")


class DataValidationError(RelpipeError, ValueError):
    category = "validation_error"

    def __init__(self, message, scene_id=None, instance_id=None):
        self.scene_id = scene_id
        self.instance_id = instance_id
        where = []
        if scene_id is not None:
            where.append(f"scene {scene_id}")
        if instance_id is not None:
            where.append(f"instance {instance_id}")
        prefix = (", ".join(where) + ": ") if where else ""
        super().__init__(prefix + message)


class ConfigError(RelpipeError, ValueError):
    category = "config_error"


class ArtifactError(RelpipeError):
    category = "missing_artifact"


class ModelError(RelpipeError, ValueError):
    category = "model_error"
