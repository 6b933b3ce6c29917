"""Quantity literals ("100Mbps", "20ms", "1.5MB") and small arithmetic over them."""

from __future__ import annotations

import ast
import operator
import re

_TIME = {"ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0}
_RATE = {"bps": 1.0, "kbps": 1e3, "Kbps": 1e3, "Mbps": 1e6, "Gbps": 1e9}
_SIZE = {"B": 1.0, "kB": 1e3, "KB": 1e3, "MB": 1e6, "GB": 1e9}
UNITS = {**{u: ("time", f) for u, f in _TIME.items()},
         **{u: ("rate", f) for u, f in _RATE.items()},
         **{u: ("size", f) for u, f in _SIZE.items()}}

_LITERAL = re.compile(r"(?<![\w.])(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)\s*("
                      + "|".join(sorted(map(re.escape, UNITS), key=len, reverse=True))
                      + r")(?![\w])")
_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv}


class QuantityError(ValueError):
    pass


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return -_eval(node.operand)
    raise QuantityError("unsupported expression")


def parse_quantity(value, kind: str) -> float:
    """Return ``value`` in SI base units (seconds, bits/s, bytes).

    Bare numbers are taken as already being in base units.
    """
    if isinstance(value, bool):
        raise QuantityError(f"expected a {kind}, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise QuantityError(f"expected a {kind}, got {value!r}")

    def repl(m: re.Match) -> str:
        ukind, factor = UNITS[m.group(2)]
        if ukind != kind:
            raise QuantityError(f"{m.group(0)!r} is a {ukind}, expected a {kind}")
        return repr(float(m.group(1)) * factor)

    text = _LITERAL.sub(repl, value.strip())
    try:
        return float(_eval(ast.parse(text, mode="eval")))
    except (SyntaxError, QuantityError, ZeroDivisionError) as exc:
        raise QuantityError(f"cannot parse {kind} {value!r}") from exc


def parse_time_ns(value) -> int:
    return int(round(parse_quantity(value, "time") * 1e9))


def parse_rate(value) -> float:
    return parse_quantity(value, "rate")


def parse_size(value) -> int:
    return int(round(parse_quantity(value, "size")))
