from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Coroutine
from functools import wraps
from typing import TYPE_CHECKING, Concatenate, ParamSpec, TypeVar

from pycinematic.errors import LabError

if TYPE_CHECKING:
    from textual.notifications import SeverityLevel
    from textual.widget import Widget

P = ParamSpec("P")
R = TypeVar("R")
W = TypeVar("W", bound="Widget")

AsyncMethod = Callable[Concatenate[W, P], Coroutine[object, object, R]]

UNREADABLE: tuple[type[Exception], ...] = (LabError, OSError, ValueError, csv.Error)
"""Failures that come from bad bundle contents rather than from bugs."""

logger = logging.getLogger("pycinematic")


def catch_errors(
    *, severity: SeverityLevel = "error", title: str = "Bundle Unreadable"
) -> Callable[[AsyncMethod[W, P, R]], AsyncMethod[W, P, "R | None"]]:
    """Wrap an async widget/screen method so unreadable bundle contents become a notification.

    Only `UNREADABLE` failures are caught; anything else still reaches Textual's error screen.
    """

    def decorator(func: AsyncMethod[W, P, R]) -> AsyncMethod[W, P, "R | None"]:
        @wraps(func)
        async def wrapper(self: W, *args: P.args, **kwargs: P.kwargs) -> R | None:
            try:
                return await func(self, *args, **kwargs)
            except UNREADABLE as e:
                self.log(f"{func.__qualname__}: {type(e).__name__}: {e}")
                self.notify(str(e), title=title, severity=severity)
                return None

        return wrapper

    return decorator


def exit_on_error(func: Callable[P, int]) -> Callable[P, int]:
    """Wrap a command handler so a `LabError` or unreadable input is logged and turned into exit status 1."""

    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> int:
        try:
            return func(*args, **kwargs)
        except (LabError, OSError) as e:
            logger.error("%s: %s", type(e).__name__, e)
            return 1

    return wrapper
