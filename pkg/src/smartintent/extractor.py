"""Function-level extraction from Solidity source.

A two-pass byte scanner: pass one classifies every byte as code or
comment/string interior, pass two finds declaration keywords and matches the
body braces. No grammar, no AST; the unit of output is the verbatim source
slice from the keyword through its closing brace.
"""

from __future__ import annotations

from dataclasses import dataclass

from smartintent.dataset import SourceContract

_CODE, _LINE, _BLOCK, _SQ, _DQ = range(5)

_KEYWORDS = (b"function", b"constructor", b"fallback", b"receive", b"modifier")
_NAMED = frozenset((b"function", b"modifier"))
_IDENT = frozenset(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_$")


class ExtractError(ValueError):
    """Unbalanced braces at end of input; ``offset`` is the unmatched opener."""

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class FunctionUnit:
    """One extracted declaration: keyword through matching closing brace."""

    name: str
    code: str
    ordinal: int


def _code_mask(data: bytes) -> bytearray:
    """Mark bytes that are plain code, outside comments and string literals."""
    mask = bytearray(len(data))
    state = _CODE
    i, n = 0, len(data)
    while i < n:
        b = data[i]
        if state == _CODE:
            if b == 0x2F and i + 1 < n and data[i + 1] == 0x2F:
                state = _LINE
                i += 2
                continue
            if b == 0x2F and i + 1 < n and data[i + 1] == 0x2A:
                state = _BLOCK
                i += 2
                continue
            if b == 0x27:
                state = _SQ
                i += 1
                continue
            if b == 0x22:
                state = _DQ
                i += 1
                continue
            mask[i] = 1
            i += 1
            continue
        if state == _LINE:
            if b == 0x0A:
                state = _CODE
            i += 1
            continue
        if state == _BLOCK:
            if b == 0x2A and i + 1 < n and data[i + 1] == 0x2F:
                state = _CODE
                i += 2
                continue
            i += 1
            continue
        # Single- or double-quoted string; backslash escapes the next byte.
        if b == 0x5C:
            i += 2
            continue
        if (state == _SQ and b == 0x27) or (state == _DQ and b == 0x22):
            state = _CODE
        i += 1
    return mask


def _keyword_at(data: bytes, mask: bytearray, i: int) -> bytes | None:
    for kw in _KEYWORDS:
        end = i + len(kw)
        if not data.startswith(kw, i):
            continue
        if not all(mask[i:end]):
            continue
        if i > 0 and mask[i - 1] and data[i - 1] in _IDENT:
            continue
        if end < len(data) and mask[end] and data[end] in _IDENT:
            continue
        return kw
    return None


def _read_name(data: bytes, mask: bytearray, i: int) -> str:
    n = len(data)
    while i < n and (not mask[i] or data[i] in b" \t\r\n"):
        i += 1
    start = i
    while i < n and mask[i] and data[i] in _IDENT:
        i += 1
    return data[start:i].decode("utf-8")


def extract_functions(source: str, include_modifiers: bool = True) -> list[FunctionUnit]:
    """Extract function-level units from Solidity source, in source order.

    Declarations without bodies (interface and abstract signatures ending in
    ``;``) are skipped. Braces inside comments and string literals never count.
    Raises :class:`ExtractError` when a body brace is left open at end of input.
    """
    data = source.encode("utf-8")
    mask = _code_mask(data)
    units: list[FunctionUnit] = []
    i, n = 0, len(data)
    while i < n:
        if not mask[i] or data[i] not in b"fcrm":
            i += 1
            continue
        kw = _keyword_at(data, mask, i)
        if kw is None:
            i += 1
            continue
        start = i
        name = _read_name(data, mask, i + len(kw)) if kw in _NAMED else ""
        # Header: advance to the body '{' or to ';' for a bodyless declaration.
        j = i + len(kw)
        body_open = -1
        while j < n:
            if mask[j]:
                if data[j] == 0x7B:
                    body_open = j
                    break
                if data[j] == 0x3B:
                    break
            j += 1
        if body_open < 0:
            i = j + 1
            continue
        depth = 0
        openers: list[int] = []
        close = -1
        j = body_open
        while j < n:
            if mask[j]:
                if data[j] == 0x7B:
                    depth += 1
                    openers.append(j)
                elif data[j] == 0x7D:
                    depth -= 1
                    openers.pop()
                    if depth == 0:
                        close = j
                        break
            j += 1
        if close < 0:
            raise ExtractError(
                f"unbalanced braces: opener at byte {openers[0]} never closed",
                offset=openers[0],
            )
        if kw != b"modifier" or include_modifiers:
            units.append(
                FunctionUnit(
                    name=name,
                    code=data[start : close + 1].decode("utf-8"),
                    ordinal=len(units),
                )
            )
        i = close + 1
    return units


def contract_to_units(contract: SourceContract) -> list[FunctionUnit]:
    """Extract units from a contract; a zero-function source becomes one whole-source unit."""
    units = extract_functions(contract.source)
    if not units:
        return [FunctionUnit(name="", code=contract.source, ordinal=0)]
    return units
