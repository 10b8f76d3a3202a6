import logging


class Logger:
    """
    A logger mixin that provides a lazily created logging instance.

    Classes inheriting from it log under `iob.<ClassName>`; module-level code
    can instantiate it directly with an explicit name, e.g. `Logger("consensus").log`.
    """
    def __init__(self, name: str | None = None):
        self._log_name = name

    @property
    def log(self) -> logging.Logger:
        # Create the logger only when accessed (lazy loading)
        if not hasattr(self, '_log'):
            name = getattr(self, '_log_name', None) or self.__class__.__name__
            self._log = logging.getLogger(f"iob.{name}")
        return self._log
