"""Exception types shared across the package."""


class DomainError(ValueError):
    """A physical parameter lies outside the domain of a formula."""


class ConfigurationError(ValueError):
    """A simulation setup cannot be represented (e.g. unresolvable on the grid)."""


class FormatError(ValueError):
    """A binary or text artifact does not match its declared format."""


class ModeMismatchError(ValueError):
    """An operation was requested on data acquired in the wrong imaging mode."""
