from typing import Any, TypeVar, Callable
from functools import wraps

from lie_transport.errors import DimensionError

T = TypeVar("T")


def _dim_of(obj: Any) -> int:
    grid = getattr(obj, "grid", None)
    if grid is None:
        state = getattr(obj, "state", None)
        grid = getattr(state, "grid", None)
    if grid is None:
        raise TypeError(f"cannot infer grid dimension from {type(obj)!r}")
    return grid.dim


def requires_dim(*dims: int) -> Callable[[Callable[..., T]], Callable[..., T]]:
    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @wraps(func)
        def wrapper(first: Any, *args: Any, **kwargs: Any) -> T:
            n = _dim_of(first)
            if n not in dims:
                raise DimensionError(
                    f"{func.__name__} needs dimension in {dims}, got {n}"
                )
            return func(first, *args, **kwargs)

        return wrapper

    return decorator
