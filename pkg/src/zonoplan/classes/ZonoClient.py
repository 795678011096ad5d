from __future__ import annotations
import json
import os
import textwrap
from contextlib import contextmanager
from pathlib import *

class ZonoClient():
    """
    Base class for the zonoplan workflows (generation, planning, simulation, benchmark).
    Holds the verbose switch, the configuration snapshot written next to every output,
    the worker-thread count and the translation of failures into user-facing errors.
    """

                    ##################
    ################ Class Attributes ##################
                    ##################

    __name__ = "ZonoClient"
    # Attributes written to the configuration snapshot
    _PROPERTIES = []
    _VERBOSE = True
    _SAVE_FILE = "config.json"
    # Worker threads (ZONOPLAN_THREADS overrides)
    _MAX_THREADS = 4
    _THREADS_ENV = "ZONOPLAN_THREADS"
    # Hints appended to runtime errors, keyed by a fragment of the message
    _ERROR_HINTS = {
        "containment": "The reachable sets could not be made conservative: "
                       "use a smaller interval length or a finer generation grid",
        "inconsisten": "The receding-horizon loop reached a state its reachable sets do not cover",
    }

                    #####################
    ################ Instance Properties ##################
                    #####################

    @property
    def verbose(self) -> bool:
        """Logs are printed when True"""
        return self.__dict__.get("_verbose", self._VERBOSE)

    @verbose.setter
    def verbose(self, verbose: bool) -> None:
        self._verbose = bool(verbose)
    # -----------------------------------------------

    ##################################################
    # Configuration snapshot
    ##################################################

    def _data_to_save(self) -> dict:
        return {prop: getattr(self, prop) for prop in self._PROPERTIES}
    # ------------------------------------------------

    def _save_config(self, config: dict, output_dir) -> Path:
        """Writes `config` as `output_dir`/config.json and returns the file"""
        file = Path(output_dir) / self._SAVE_FILE
        file.parent.mkdir(parents=True, exist_ok=True)
        file.write_text(json.dumps(config, indent=4))
        self._print(f">> Configuration was saved in: {file}")
        return file
    # ------------------------------------------------

    @classmethod
    def _max_threads(cls) -> int:
        value = os.environ.get(cls._THREADS_ENV)
        if value is None:
            return cls._MAX_THREADS
        if not value.strip().isdigit() or int(value) < 1:
            raise ValueError(f"{cls._THREADS_ENV} must be a positive integer (got '{value}')")
        return int(value)
    # ------------------------------------------------

    ##################################################
    # Logs
    ##################################################

    def _print(self, *args, min_space: int = -1, max_space: int = 1, sep=" ", end="\n") -> None:
        """
        Prints a log line when `verbose` is True.
        Leading and trailing newlines count as blank lines, framed between `min_space` and
        `max_space` with the blank lines already printed (`min_space`=-1: the log may end
        without newline).
        """
        if not self.verbose:
            return
        assert -1 <= min_space <= max_space, f"Wrong min_space ({min_space}) or max_space ({max_space})"
        message = sep.join(map(str, args)) + end
        pending = self.__dict__.get("_blank_lines", 0)
        lead = len(message) - len(message.lstrip("\n"))
        lead = min(max(lead, min_space - pending, 0), max(max_space - pending, 0))
        if not message.strip("\n"):
            self._blank_lines = pending + lead
            self._printc("\n" * lead, end="")
            return
        trail = len(message) - len(message.rstrip("\n"))
        trail = min(max(trail, min_space + 1), max_space + 1)
        self._blank_lines = max(trail - 1, 0)
        self._printc("\n" * lead + message.strip("\n") + "\n" * trail, end="")
    # ------------------------------------------------

    @classmethod
    def _printc(cls, *args, wrapper: textwrap.TextWrapper = None, sep=" ", end="\n", **kwargs) -> None:
        """Prints from class methods when `_VERBOSE` is True; `wrapper` fills the message."""
        if not cls._VERBOSE:
            return
        message = sep.join(map(str, args)) + end
        if wrapper is not None:
            message = wrapper.fill(text=message)
        print(message, end="", **kwargs)
    # ------------------------------------------------

    @contextmanager
    def _silent_session(self):
        """Under this context, the instance prints nothing"""
        verbose = self.verbose
        self.verbose = False
        try:
            yield
        finally:
            self.verbose = verbose
    # ------------------------------------------------

    @classmethod
    @contextmanager
    def _silent_class(cls):
        """Under this context, class methods print nothing"""
        verbose = cls._VERBOSE
        cls._VERBOSE = False
        try:
            yield
        finally:
            cls._VERBOSE = verbose
    # ------------------------------------------------

    ########################################
    # Interpret runtime errors
    ########################################

    @classmethod
    def _handle_error(cls, error: Exception, context: str = "") -> None:
        """Rethrows `error` as a RuntimeError with a hint for the user"""
        message = str(error.args[0]) if error.args else repr(error)
        interpret = f"\n\t{message}"
        if isinstance(error, FileNotFoundError):
            interpret += "\nCheck the path, or create the missing file with the matching zonoplan subcommand"
        else:
            for key, hint in cls._ERROR_HINTS.items():
                if key in message.lower():
                    interpret += "\n" + hint
                    break
        if context:
            interpret = f"{context} failed:" + interpret
        raise RuntimeError(interpret) from error
    # ------------------------------------------------

#######################################################

if __name__=="__main__":
    pass
