"""Exception types shared across the package."""


class TabAblateError(Exception):
    """Base class for all package errors."""


# data
class MissingColumn(TabAblateError):
    pass


class UnknownCategory(TabAblateError):
    def __init__(self, row, feature, value):
        self.row = row
        self.feature = feature
        self.value = value
        super().__init__(f"row {row}: unknown category {value!r} for feature {feature!r}")


class NonBinaryLabel(TabAblateError):
    pass


class ParseFailure(TabAblateError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class EmptyFitSet(TabAblateError):
    pass


class DegenerateSplit(TabAblateError):
    pass


# model
class Divergence(TabAblateError):
    pass


class SchemaMismatch(TabAblateError):
    pass


class DimensionMismatch(TabAblateError):
    pass


class SingleClassAuroc(TabAblateError):
    pass


# distributions
class EmptyTrain(TabAblateError):
    pass


class NoOppositeClassRows(TabAblateError):
    pass


class SingleCategoryFeature(TabAblateError):
    pass


# explain
class UnsupportedModel(TabAblateError):
    pass


class SingularSystem(RuntimeWarning):
    """Kernel SHAP normal equations were rank deficient; a ridge was added."""


# metrics
class GridMismatch(TabAblateError):
    pass


class LengthMismatch(TabAblateError):
    pass


class NoRandomFeatures(TabAblateError):
    pass


# config / cli
class ConfigError(TabAblateError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigRoleViolation(ConfigError):
    """A distribution was used in a role (baseline/perturbation) it does not support."""


class IncompleteGrid(TabAblateError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} grid cells missing or failed: {', '.join(self.missing[:10])}")


class EmptySpec(TabAblateError):
    pass
