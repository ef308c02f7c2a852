"""Exception types shared across the pipeline.

Each maps to a CLI exit code: ConfigError -> 2, NumericalError -> 3,
ArtifactError -> 4. MeshError is a ConfigError since bad meshes arrive
through configuration.
"""


class ConfigError(ValueError):
    pass


class MeshError(ConfigError):
    pass


class NumericalError(RuntimeError):
    pass


class ArtifactError(IOError):
    pass
