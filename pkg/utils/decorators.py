"""
Decorators for RicciLab.
Provides timing and error-context decorators.
"""

import functools
import time
from typing import Any, Callable

from utils.logger import get_logger


def log_execution_time(func: Callable) -> Callable:
    """
    Decorator that logs function execution time.

    Useful for monitoring flows, solves and study members.

    Usage:
        @log_execution_time
        def flow(g0, mesh):
            ...
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        logger = get_logger()
        start_time = time.perf_counter()

        try:
            result = func(*args, **kwargs)
            elapsed = time.perf_counter() - start_time
            logger.debug(f"{func.__qualname__} completed in {elapsed:.3f}s")
            return result

        except Exception as e:
            elapsed = time.perf_counter() - start_time
            logger.error(f"{func.__qualname__} failed after {elapsed:.3f}s: {e}")
            raise

    return wrapper


def with_error_context(**context_keys: str):
    """
    Decorator that attaches keyword arguments to RicciLab exception details.

    Each keyword maps a details key to the name of a keyword argument of the
    wrapped function. Values already set in the details are kept.

    Usage:
        @with_error_context(scenario="name")
        def run_member(config, name=None):
            ...
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            from utils.exceptions import RicciLabException

            try:
                return func(*args, **kwargs)
            except RicciLabException as e:
                for detail_key, arg_name in context_keys.items():
                    if arg_name in kwargs and e.details.get(detail_key) is None:
                        e.details[detail_key] = kwargs[arg_name]
                raise

        return wrapper

    return decorator
