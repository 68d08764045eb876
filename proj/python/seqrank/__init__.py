"""Python bindings for the seqrank C++ core.

Command functions (gen, train, eval, search, probe, loho, bias, replay) return
the same JSON report the CLI writes, decoded into a dict.
"""

import json

from . import _seqrank
from ._seqrank import (
    CompositionError,
    DimensionError,
    Error,
    IOError,
    LookupError,
    ParseError,
    build_mask,
    f1_scores,
    ranking_loss,
    site_probe,
)

__all__ = [
    "CompositionError", "DimensionError", "Error", "IOError", "LookupError", "ParseError",
    "build_mask", "f1_scores", "ranking_loss", "site_probe",
    "gen", "train", "eval", "search", "probe", "loho", "bias", "replay",
]


def _command(name):
    fn = getattr(_seqrank, name)

    def run(*args, **kwargs):
        return json.loads(fn(*args, **kwargs))

    run.__name__ = name
    run.__doc__ = fn.__doc__
    return run


gen = _command("gen")
train = _command("train")
eval = _command("eval")
search = _command("search")
probe = _command("probe")
loho = _command("loho")
bias = _command("bias")


def replay(report):
    return json.loads(_seqrank.replay(json.dumps(report)))
