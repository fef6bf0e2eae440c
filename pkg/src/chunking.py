"""Token estimation and context-window partitioning of pull request diffs.

Diffs are packed greedily, in file and hunk order, into chunks whose estimated
size fits the analyzer's effective budget (context window minus the tokens
reserved for prompt scaffolding, project context and the response). A hunk is
only split when it alone exceeds the budget; consecutive slices then share a
fixed five-line overlap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

from .diffs import ChangedLine, FileDiff, Hunk, Language, LineKind

logger = logging.getLogger(__name__)

SLICE_OVERLAP_LINES = 5
BYTES_PER_TOKEN = 4


class OversizeInputError(Exception):
    """A single diff line cannot fit in the effective budget."""

    def __init__(self, path: str, line_number: int, estimated_tokens: int, budget: int):
        super().__init__(
            f"{path}:{line_number}: line needs ~{estimated_tokens} tokens, "
            f"effective budget is {budget}"
        )
        self.path = path
        self.line_number = line_number


@dataclass(frozen=True)
class TokenBudget:
    """Context window accounting.

    Attributes:
        max_context_tokens: Analyzer model context window.
        reserved_tokens: Tokens held back for scaffolding, retrieved context and
            the response.
        context_tokens: Part of the reservation given to project context; half
            of ``reserved_tokens`` when unset.
    """

    max_context_tokens: int
    reserved_tokens: int
    context_tokens: Optional[int] = None

    def __post_init__(self):
        if self.max_context_tokens <= 0:
            raise ValueError("max_context_tokens must be positive")
        if not 0 <= self.reserved_tokens < self.max_context_tokens:
            raise ValueError("reserved_tokens must be in [0, max_context_tokens)")
        if self.context_tokens is not None and not 0 <= self.context_tokens <= self.reserved_tokens:
            raise ValueError("context_tokens must be in [0, reserved_tokens]")

    @property
    def effective(self) -> int:
        return self.max_context_tokens - self.reserved_tokens

    @property
    def context_allowance(self) -> int:
        if self.context_tokens is not None:
            return self.context_tokens
        return self.reserved_tokens // 2


@dataclass(frozen=True)
class ChunkPiece:
    """A hunk (or a slice of one) assigned to a chunk.

    ``overlap_lines`` counts leading lines repeated from the previous slice of
    the same hunk; ``slice_index`` is None for whole hunks.
    """

    path: str
    hunk: Hunk
    file_index: int
    hunk_index: int
    language: Language = Language.OTHER
    overlap_lines: int = 0
    slice_index: Optional[int] = None

    @property
    def estimated_tokens(self) -> int:
        return estimate_tokens(piece_text(self.hunk, self.path, self.language))


@dataclass(frozen=True)
class Chunk:
    index: int
    pieces: tuple[ChunkPiece, ...]
    estimated_tokens: int
    overlap_lines: int = 0

    @property
    def paths(self) -> list[str]:
        """File paths in first-appearance order."""
        return list(dict.fromkeys(piece.path for piece in self.pieces))

    @property
    def languages(self) -> list[str]:
        return sorted({piece.language.value for piece in self.pieces})


LINE_NUMBER_WIDTH = 6
FILE_HEADER_PREFIX = "### "


def estimate_tokens(text: str) -> int:
    """Estimate tokens as ceil(utf-8 byte length / 4)."""
    return -(-len(text.encode("utf-8")) // BYTES_PER_TOKEN)


def file_header(path: str, language: Language) -> str:
    return f"{FILE_HEADER_PREFIX}{path} ({language.value})"


def render_line(line: ChangedLine, number: Optional[int]) -> str:
    """One body line as the analyzer sees it: new-side number, marker, text."""
    label = "" if number is None else str(number)
    return f"{label:>{LINE_NUMBER_WIDTH}} {line.kind.prefix} {line.text}"


def piece_text(hunk: Hunk, path: str, language: Language = Language.OTHER) -> str:
    """Rendered text of a hunk counted against the budget.

    Every piece is charged its own file header, so the sum over a chunk's
    pieces bounds the rendered chunk from above.
    """
    rendered = [file_header(path, language), hunk.header()]
    rendered += [render_line(line, n) for line, n in zip(hunk.lines, hunk.new_line_numbers())]
    return "".join(line + "\n" for line in rendered)


def _slice_hunk(hunk: Hunk, start: int, end: int) -> Hunk:
    """Sub-hunk covering ``hunk.lines[start:end]`` with consistent header counts."""
    before = hunk.lines[:start]
    inside = hunk.lines[start:end]
    old_before = sum(1 for line in before if line.kind is not LineKind.ADDED)
    new_before = sum(1 for line in before if line.kind is not LineKind.REMOVED)
    return Hunk(
        old_start=hunk.old_start + old_before,
        old_len=sum(1 for line in inside if line.kind is not LineKind.ADDED),
        new_start=hunk.new_start + new_before,
        new_len=sum(1 for line in inside if line.kind is not LineKind.REMOVED),
        lines=inside,
        section=hunk.section,
        no_newline_after=frozenset(i - start for i in hunk.no_newline_after if start <= i < end),
    )


def _line_number(hunk: Hunk, index: int) -> int:
    number = hunk.new_line_numbers()[index]
    if number is None:
        number = hunk.old_line_numbers()[index]
    return number


def split_hunk(hunk: Hunk, path: str, budget: int, language: Language = Language.OTHER) -> list[tuple[Hunk, int]]:
    """Split an oversized hunk at line boundaries.

    Args:
        hunk: Hunk whose estimate exceeds ``budget``.
        path: File path, used in the rendered file header and error messages.
        budget: Effective token budget.
        language: Language shown in the rendered file header.

    Returns:
        list[tuple[Hunk, int]]: Slices in order, each with its count of lines
        repeated from the previous slice.

    Raises:
        OversizeInputError: If one line cannot fit in a slice on its own.
    """
    budget_bytes = budget * BYTES_PER_TOKEN
    # Upper bound on any slice header: starts and lengths never exceed these.
    widest = Hunk(hunk.old_start + hunk.old_len, hunk.old_len,
                  hunk.new_start + hunk.new_len, hunk.new_len, section=hunk.section)
    header_cost = len(file_header(path, language).encode("utf-8")) + len(widest.header().encode("utf-8")) + 2
    # Slices keep the new-side numbers of the full hunk, so line costs carry over.
    costs = [len(render_line(line, n).encode("utf-8")) + 1
             for line, n in zip(hunk.lines, hunk.new_line_numbers())]

    def check_single(index: int) -> None:
        if header_cost + costs[index] > budget_bytes:
            raise OversizeInputError(
                path,
                _line_number(hunk, index),
                -(-(header_cost + costs[index]) // BYTES_PER_TOKEN),
                budget,
            )

    slices: list[tuple[Hunk, int]] = []
    start, overlap = 0, 0
    total = len(costs)
    while True:
        used = header_cost + sum(costs[start:start + overlap])
        end = start + overlap
        while end < total and used + costs[end] <= budget_bytes:
            used += costs[end]
            end += 1
        if end == start + overlap:
            check_single(end)
        slices.append((_slice_hunk(hunk, start, end), overlap))
        if end >= total:
            return slices
        overlap = min(SLICE_OVERLAP_LINES, end - start - 1)
        while overlap > 0 and header_cost + sum(costs[end - overlap:end]) + costs[end] > budget_bytes:
            overlap -= 1
        check_single(end)
        start = end - overlap


def partition(diffs: Iterable[FileDiff], budget: TokenBudget) -> list[Chunk]:
    """Greedy first-fit partition of diffs into budget-bounded chunks.

    File order and hunk order are preserved; binary files are skipped. A chunk
    is closed when the next hunk would push it over the effective budget.

    Args:
        diffs: Parsed file diffs.
        budget: Token budget of the analyzer model.

    Returns:
        list[Chunk]: Chunks indexed contiguously from 0 (empty for diffs with no
        hunks).

    Raises:
        OversizeInputError: If a single line exceeds the effective budget.
    """
    effective = budget.effective
    chunks: list[Chunk] = []
    pieces: list[ChunkPiece] = []
    tokens = 0
    overlap = 0

    def close() -> None:
        nonlocal pieces, tokens, overlap
        if pieces:
            chunks.append(Chunk(len(chunks), tuple(pieces), tokens, overlap))
        pieces, tokens, overlap = [], 0, 0

    for file_index, diff in enumerate(diffs):
        if diff.is_binary:
            continue
        for hunk_index, hunk in enumerate(diff.hunks):
            estimate = estimate_tokens(piece_text(hunk, diff.path, diff.language_hint))
            if estimate <= effective:
                if tokens + estimate > effective:
                    close()
                pieces.append(ChunkPiece(diff.path, hunk, file_index, hunk_index, diff.language_hint))
                tokens += estimate
                continue

            logger.debug("Splitting %s hunk %d (~%d tokens)", diff.path, hunk_index, estimate)
            close()
            slices = split_hunk(hunk, diff.path, effective, diff.language_hint)
            for slice_index, (part, part_overlap) in enumerate(slices):
                if slice_index:
                    close()
                    overlap = part_overlap
                piece = ChunkPiece(
                    diff.path, part, file_index, hunk_index, diff.language_hint,
                    overlap_lines=part_overlap, slice_index=slice_index,
                )
                pieces.append(piece)
                tokens += piece.estimated_tokens
    close()
    return chunks


def render_chunk(chunk: Chunk) -> str:
    """Render a chunk for the analyzer prompt.

    Each file starts with a ``### path (language)`` header; body lines carry
    their new-side line number (blank for removed lines), the diff marker and
    the text.
    """
    out: list[str] = []
    last_path = None
    for piece in chunk.pieces:
        if piece.path != last_path:
            out.append(file_header(piece.path, piece.language))
            last_path = piece.path
        out.append(piece.hunk.header())
        out.extend(render_line(line, n) for line, n in zip(piece.hunk.lines, piece.hunk.new_line_numbers()))
    return "\n".join(out)


def new_side_spans(chunk: Chunk) -> dict[str, tuple[int, int]]:
    """Lowest and highest new-side line number per file in the chunk."""
    spans: dict[str, tuple[int, int]] = {}
    for piece in chunk.pieces:
        numbers = [n for n in piece.hunk.new_line_numbers() if n is not None]
        if not numbers:
            continue
        low, high = min(numbers), max(numbers)
        if piece.path in spans:
            low, high = min(low, spans[piece.path][0]), max(high, spans[piece.path][1])
        spans[piece.path] = (low, high)
    return spans
