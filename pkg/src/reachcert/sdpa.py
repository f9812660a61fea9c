"""Sparse SDPA (``.dat-s``) export and import.

SDPA reads the pair ``max F0.Y  s.t.  Fi.Y = ci, Y PSD``; our standard form
``min C.X  s.t.  Ai.X = bi`` maps onto it with ``Y = X``, ``Fi = Ai``,
``ci = bi`` and ``F0 = -C``. Free variables have no SDPA counterpart, so
``z = z+ - z-`` is written as a trailing diagonal (LP) block of size ``2p``
and flagged with a ``"free-split p`` comment so that re-import restores them.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .sdp import SdpStandardForm

FREE_MARKER = '"free-split'


def _merged(entries) -> dict:
    out: dict = {}
    for *key, v in entries:
        key = tuple(key)
        out[key] = out.get(key, 0.0) + v
    return {k: v for k, v in out.items() if v != 0.0}


def _fmt(v: float) -> str:
    return "0" if v == 0.0 else repr(float(v))


def sdpa_lines(sdp: SdpStandardForm, title: str = "") -> list[str]:
    p = sdp.n_free
    lines = []
    if title:
        lines.append('"' + title.replace("\n", " "))
    if p:
        lines.append(f"{FREE_MARKER} {p}")
    nblocks = len(sdp.block_dims) + (1 if p else 0)
    struct = [str(n) for n in sdp.block_dims] + ([str(-2 * p)] if p else [])
    lines.append(str(sdp.n_rows))
    lines.append(str(nblocks))
    lines.append(" ".join(struct))
    lines.append(" ".join(_fmt(b) for b in sdp.rhs))
    body = []
    for k, ents in enumerate(sdp.block_cost):
        for (i, j), v in sorted(_merged(ents).items()):
            body.append((0, k + 1, i + 1, j + 1, -v))
    for k, ents in enumerate(sdp.block_entries):
        for (r, i, j), v in _merged(ents).items():
            body.append((r + 1, k + 1, i + 1, j + 1, v))
    if p:
        kf = len(sdp.block_dims) + 1
        for c, v in enumerate(sdp.free_cost):
            if v != 0.0:
                body.append((0, kf, c + 1, c + 1, -v))
                body.append((0, kf, p + c + 1, p + c + 1, v))
        for (r, c), v in _merged(sdp.free_entries).items():
            body.append((r + 1, kf, c + 1, c + 1, v))
            body.append((r + 1, kf, p + c + 1, p + c + 1, -v))
    body.sort(key=lambda e: e[:4])
    lines += [f"{m} {b} {i} {j} {_fmt(v)}" for m, b, i, j, v in body]
    return lines


def export_sdpa(sdp: SdpStandardForm, path, title: str = "") -> int:
    """Write ``sdp`` to ``path``; returns the number of entry lines written."""
    lines = sdpa_lines(sdp, title)
    Path(path).write_text("\n".join(lines) + "\n")
    return count_entries(lines)


def count_entries(lines: list[str]) -> int:
    body = [ln for ln in lines if ln.strip() and ln[0] not in "\"*"]
    return max(0, len(body) - 4)


class SdpaFormatError(ValueError):
    pass


_SPLIT = re.compile(r"[\s,(){}]+")


def _numbers(line: str) -> list[str]:
    return [t for t in _SPLIT.split(line.strip()) if t]


def read_sdpa(path) -> SdpStandardForm:
    text = Path(path).read_text()
    return parse_sdpa(text)


def parse_sdpa(text: str) -> SdpStandardForm:
    n_free = 0
    data: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(FREE_MARKER):
            try:
                n_free = int(line[len(FREE_MARKER):].split()[0])
            except (IndexError, ValueError) as exc:
                raise SdpaFormatError(f"line {lineno}: malformed free-split marker") from exc
            continue
        if line[0] in "\"*":
            continue
        data.append((lineno, line))
    if len(data) < 4:
        raise SdpaFormatError("file ends before the header is complete")
    try:
        m = int(_numbers(data[0][1])[0])
        nblocks = int(_numbers(data[1][1])[0])
        struct = [int(t) for t in _numbers(data[2][1])[:nblocks]]
    except (IndexError, ValueError) as exc:
        raise SdpaFormatError(f"line {data[0][0]}: malformed header") from exc
    if len(struct) != nblocks:
        raise SdpaFormatError(f"line {data[2][0]}: expected {nblocks} block sizes")
    # the rhs vector may wrap over several lines
    rhs: list[float] = []
    pos = 3
    while len(rhs) < m:
        if pos >= len(data):
            raise SdpaFormatError("file ends inside the objective vector")
        try:
            rhs += [float(t) for t in _numbers(data[pos][1])]
        except ValueError as exc:
            raise SdpaFormatError(f"line {data[pos][0]}: bad number") from exc
        pos += 1
    rhs = rhs[:m]

    free_block = None
    if n_free:
        if struct[-1] != -2 * n_free:
            raise SdpaFormatError("free-split marker does not match the last block")
        free_block = nblocks - 1
    # remaining diagonal blocks are expanded into 1x1 blocks
    block_map: dict[int, list[int]] = {}
    dims: list[int] = []
    for b, s in enumerate(struct):
        if b == free_block:
            continue
        if s > 0:
            block_map[b] = [len(dims)]
            dims.append(s)
        elif s < 0:
            block_map[b] = list(range(len(dims), len(dims) + (-s)))
            dims += [1] * (-s)
        else:
            raise SdpaFormatError("zero block size")

    block_entries: list[list] = [[] for _ in dims]
    block_cost: list[list] = [[] for _ in dims]
    free_entries: list = []
    free_cost = np.zeros(n_free)
    for lineno, line in data[pos:]:
        toks = _numbers(line)
        if len(toks) < 5:
            raise SdpaFormatError(f"line {lineno}: expected 'mat blk i j value'")
        try:
            mat, blk, i, j = (int(t) for t in toks[:4])
            val = float(toks[4])
        except ValueError as exc:
            raise SdpaFormatError(f"line {lineno}: bad entry") from exc
        blk -= 1
        i, j = min(i, j) - 1, max(i, j) - 1
        if not (0 <= mat <= m and 0 <= blk < nblocks):
            raise SdpaFormatError(f"line {lineno}: index out of range")
        if blk == free_block:
            if i != j:
                raise SdpaFormatError(f"line {lineno}: off-diagonal entry in a diagonal block")
            if i >= n_free:
                continue  # mirror half of the split, implied by the first half
            if mat == 0:
                free_cost[i] = -val
            else:
                free_entries.append((mat - 1, i, val))
            continue
        targets = block_map[blk]
        if struct[blk] < 0:
            if i != j:
                raise SdpaFormatError(f"line {lineno}: off-diagonal entry in a diagonal block")
            k, i, j = targets[i], 0, 0
        else:
            k = targets[0]
            if j >= dims[k]:
                raise SdpaFormatError(f"line {lineno}: entry outside its block")
        if mat == 0:
            block_cost[k].append((i, j, -val))
        else:
            block_entries[k].append((mat - 1, i, j, val))
    return SdpStandardForm(
        block_dims=dims,
        rhs=np.array(rhs),
        block_entries=block_entries,
        free_entries=free_entries,
        n_free=n_free,
        block_cost=block_cost,
        free_cost=free_cost,
    )
