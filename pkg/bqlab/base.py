import typer

from bqlab.utils import catch_exceptions, to_sync


class AsyncTyper(typer.Typer):
    """
    Typer app whose callbacks and commands may be coroutines. Errors raised
    inside them are rendered and turned into the exit status they carry.
    """
    @staticmethod
    def _wrap(decorator):
        def wrapper(fn):
            return decorator(catch_exceptions()(to_sync(fn)))
        return wrapper

    def callback(self, *args, **kwargs):
        return self._wrap(super().callback(*args, **kwargs))

    def command(self, *args, **kwargs):
        return self._wrap(super().command(*args, **kwargs))
