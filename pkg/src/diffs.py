"""Unified diff parsing and change statistics.

This module turns the unified diff text served by GitHub (or produced locally by
``git diff`` / ``diff -u``) into immutable FileDiff/Hunk/ChangedLine records and
renders them back.

Both git-extended diffs (``diff --git`` with mode, index, rename and binary
lines) and plain unified diffs are accepted. Mode and index lines are ignored.
Binary sections produce a FileDiff with ``is_binary=True`` and no hunks.

``\\ No newline at end of file`` markers are kept as hunk metadata so that
rendering reproduces hunk bodies byte-for-byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import PurePosixPath
from typing import Iterable, Optional

HUNK_HEADER_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$")
GIT_HEADER_RE = re.compile(r"^diff --git (?:a/)?(.+?) (?:b/)?(.+)$")
NO_NEWLINE_MARKER = "\\ No newline at end of file"
DEV_NULL = "/dev/null"
SHA_RE = re.compile(r"^[0-9a-f]{40}$")


class DiffParseError(Exception):
    """Raised when diff text violates the unified diff grammar."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class PullRequestRef:
    """Coordinates of one pull request revision."""

    repo_owner: str
    repo_name: str
    number: int
    head_sha: str
    base_sha: str

    def __post_init__(self):
        if not self.repo_owner or not self.repo_name:
            raise ValueError("repository owner and name are required")
        if isinstance(self.number, bool) or not isinstance(self.number, int) or self.number < 1:
            raise ValueError(f"pull request number must be >= 1, got {self.number!r}")
        for name in ("head_sha", "base_sha"):
            if not SHA_RE.match(getattr(self, name) or ""):
                raise ValueError(f"{name} must be 40 lowercase hex characters")

    @property
    def slug(self) -> str:
        return f"{self.repo_owner}/{self.repo_name}#{self.number}"


class Language(str, Enum):
    MOVE = "move"
    SOLIDITY = "solidity"
    RUST = "rust"
    TYPESCRIPT = "typescript"
    PYTHON = "python"
    GO = "go"
    OTHER = "other"


EXTENSION_LANGUAGES = {
    ".move": Language.MOVE,
    ".sol": Language.SOLIDITY,
    ".rs": Language.RUST,
    ".ts": Language.TYPESCRIPT,
    ".tsx": Language.TYPESCRIPT,
    ".py": Language.PYTHON,
    ".go": Language.GO,
}


def language_for_path(path: Optional[str]) -> Language:
    """Infer the language hint from a file extension only."""
    if not path:
        return Language.OTHER
    return EXTENSION_LANGUAGES.get(PurePosixPath(path).suffix.lower(), Language.OTHER)


class LineKind(str, Enum):
    ADDED = "added"
    REMOVED = "removed"
    CONTEXT = "context"

    @property
    def prefix(self) -> str:
        return _PREFIXES[self]


_PREFIXES = {LineKind.ADDED: "+", LineKind.REMOVED: "-", LineKind.CONTEXT: " "}
_KINDS_BY_PREFIX = {prefix: kind for kind, prefix in _PREFIXES.items()}


@dataclass(frozen=True)
class ChangedLine:
    kind: LineKind
    text: str

    def render(self) -> str:
        return self.kind.prefix + self.text


@dataclass(frozen=True)
class Hunk:
    """One contiguous region of change.

    Attributes:
        old_start, old_len, new_start, new_len: Values from the ``@@`` header.
        lines: Body lines in order.
        section: Trailing text of the header (often the enclosing function).
        no_newline_after: Indexes into ``lines`` that are followed by a
            ``\\ No newline at end of file`` marker.
    """

    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: tuple[ChangedLine, ...] = ()
    section: str = ""
    no_newline_after: frozenset[int] = field(default_factory=frozenset)

    def header(self) -> str:
        return f"@@ -{self.old_start},{self.old_len} +{self.new_start},{self.new_len} @@{self.section}"

    def body_lines(self) -> list[str]:
        """Render the body, including no-newline markers, one string per line."""
        rendered = []
        for index, line in enumerate(self.lines):
            rendered.append(line.render())
            if index in self.no_newline_after:
                rendered.append(NO_NEWLINE_MARKER)
        return rendered

    def new_line_numbers(self) -> list[Optional[int]]:
        """New-side line number of every body line (None for removed lines)."""
        numbers: list[Optional[int]] = []
        current = self.new_start
        for line in self.lines:
            if line.kind is LineKind.REMOVED:
                numbers.append(None)
            else:
                numbers.append(current)
                current += 1
        return numbers

    def old_line_numbers(self) -> list[Optional[int]]:
        numbers: list[Optional[int]] = []
        current = self.old_start
        for line in self.lines:
            if line.kind is LineKind.ADDED:
                numbers.append(None)
            else:
                numbers.append(current)
                current += 1
        return numbers


@dataclass(frozen=True)
class FileDiff:
    old_path: Optional[str]
    new_path: Optional[str]
    hunks: tuple[Hunk, ...] = ()
    is_binary: bool = False
    language_hint: Language = Language.OTHER

    def __post_init__(self):
        if self.old_path is None and self.new_path is None:
            raise ValueError("FileDiff needs at least one of old_path/new_path")
        if self.is_binary and self.hunks:
            raise ValueError("binary FileDiff cannot carry hunks")

    @property
    def path(self) -> str:
        """Display path: the new path, or the old one for deletions."""
        return self.new_path if self.new_path is not None else self.old_path


@dataclass(frozen=True)
class ChangeStats:
    lines_added: int = 0
    lines_removed: int = 0
    lines_changed: int = 0
    pr_count: int = 1

    def __add__(self, other: "ChangeStats") -> "ChangeStats":
        return ChangeStats(
            lines_added=self.lines_added + other.lines_added,
            lines_removed=self.lines_removed + other.lines_removed,
            lines_changed=self.lines_changed + other.lines_changed,
            pr_count=self.pr_count + other.pr_count,
        )

    def averages(self) -> tuple[float, float, float]:
        """Per-PR (added, removed, changed) averages rounded to two decimals."""
        count = max(self.pr_count, 1)
        return (
            round(self.lines_added / count, 2),
            round(self.lines_removed / count, 2),
            round(self.lines_changed / count, 2),
        )


def change_stats(diffs: Iterable[FileDiff], pr_count: int = 1) -> ChangeStats:
    """Count added and removed lines over every hunk.

    Args:
        diffs: Parsed file diffs.
        pr_count: Number of pull requests the diffs represent.

    Returns:
        ChangeStats: Totals with ``lines_changed = lines_added + lines_removed``.
    """
    added = removed = 0
    for diff in diffs:
        for hunk in diff.hunks:
            for line in hunk.lines:
                if line.kind is LineKind.ADDED:
                    added += 1
                elif line.kind is LineKind.REMOVED:
                    removed += 1
    return ChangeStats(added, removed, added + removed, pr_count)


def _strip_path(raw: str) -> Optional[str]:
    # "--- a/src/x.py\t2024-01-01 00:00:00" -> "src/x.py"
    path = raw.split("\t", 1)[0].rstrip()
    if path == DEV_NULL:
        return None
    if path.startswith(("a/", "b/")):
        path = path[2:]
    return path


class _FileBuilder:
    """Mutable accumulator for one file section while parsing."""

    def __init__(self, old_path: Optional[str] = None, new_path: Optional[str] = None):
        self.old_path = old_path
        self.new_path = new_path
        self.hunks: list[Hunk] = []
        self.is_binary = False
        self.new_file = False
        self.deleted_file = False

    def build(self, line_number: int) -> FileDiff:
        old_path = None if self.new_file else self.old_path
        new_path = None if self.deleted_file else self.new_path
        if old_path is None and new_path is None:
            raise DiffParseError("file section without any path", line_number)
        path = new_path if new_path is not None else old_path
        return FileDiff(
            old_path=old_path,
            new_path=new_path,
            hunks=() if self.is_binary else tuple(self.hunks),
            is_binary=self.is_binary,
            language_hint=language_for_path(path),
        )


def _parse_hunk(lines: list[str], start: int) -> tuple[Hunk, int]:
    """Parse one hunk starting at ``lines[start]`` (the ``@@`` header).

    Returns the hunk and the index of the first line after its body.
    """
    match = HUNK_HEADER_RE.match(lines[start].rstrip("\r"))
    if not match:
        raise DiffParseError(f"malformed hunk header {lines[start]!r}", start + 1)
    old_start = int(match.group(1))
    old_len = int(match.group(2)) if match.group(2) is not None else 1
    new_start = int(match.group(3))
    new_len = int(match.group(4)) if match.group(4) is not None else 1

    body: list[ChangedLine] = []
    markers: set[int] = set()
    old_seen = new_seen = 0
    index = start + 1
    while old_seen < old_len or new_seen < new_len:
        if index >= len(lines):
            raise DiffParseError(
                f"hunk declares -{old_len} +{new_len} lines but body ends after "
                f"-{old_seen} +{new_seen}",
                start + 1,
            )
        raw = lines[index]
        if raw.startswith("\\"):
            if body:
                markers.add(len(body) - 1)
            index += 1
            continue
        # A bare (CR)LF is a context line whose leading space was trimmed.
        if raw in ("", "\r"):
            kind, text = LineKind.CONTEXT, raw
        else:
            kind, text = _KINDS_BY_PREFIX.get(raw[:1]), raw[1:]
        if kind is None:
            raise DiffParseError(
                f"hunk declares -{old_len} +{new_len} lines but body has "
                f"-{old_seen} +{new_seen}",
                start + 1,
            )
        takes_old = kind in (LineKind.CONTEXT, LineKind.REMOVED)
        takes_new = kind in (LineKind.CONTEXT, LineKind.ADDED)
        if (takes_old and old_seen >= old_len) or (takes_new and new_seen >= new_len):
            raise DiffParseError(
                f"hunk body exceeds declared -{old_len} +{new_len} lines", index + 1
            )
        old_seen += takes_old
        new_seen += takes_new
        body.append(ChangedLine(kind, text))
        index += 1

    # A trailing marker belongs to the last body line.
    while index < len(lines) and lines[index].startswith("\\"):
        if body:
            markers.add(len(body) - 1)
        index += 1

    hunk = Hunk(
        old_start=old_start,
        old_len=old_len,
        new_start=new_start,
        new_len=new_len,
        lines=tuple(body),
        section=match.group(5),
        no_newline_after=frozenset(markers),
    )
    return hunk, index


def parse_unified_diff(text: str) -> list[FileDiff]:
    """Parse unified diff text into FileDiff records.

    Args:
        text: Diff text, git-extended or plain.

    Returns:
        list[FileDiff]: One entry per file section, in input order.

    Raises:
        DiffParseError: If a hunk header disagrees with its body; the error
            carries the 1-based line number of the offending hunk.
    """
    if not text:
        return []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    files: list[FileDiff] = []
    current: Optional[_FileBuilder] = None
    in_binary_patch = False
    index = 0

    def flush(line_number: int) -> None:
        nonlocal current
        if current is not None:
            files.append(current.build(line_number))
            current = None

    while index < len(lines):
        # Structural lines lose a trailing CR; hunk bodies keep theirs.
        line = lines[index].rstrip("\r")

        if line.startswith("diff --git "):
            flush(index + 1)
            in_binary_patch = False
            match = GIT_HEADER_RE.match(line)
            old_path, new_path = (match.group(1), match.group(2)) if match else (None, None)
            current = _FileBuilder(old_path, new_path)
            index += 1
            continue

        if in_binary_patch:
            index += 1
            continue

        if line.startswith("--- ") and index + 1 < len(lines) and lines[index + 1].startswith("+++ "):
            if current is None or current.hunks or current.is_binary:
                flush(index + 1)
                current = _FileBuilder()
            old_path = _strip_path(line[4:])
            new_path = _strip_path(lines[index + 1].rstrip("\r")[4:])
            current.old_path = old_path
            current.new_path = new_path
            current.new_file = current.new_file or old_path is None
            current.deleted_file = current.deleted_file or new_path is None
            index += 2
            continue

        if line.startswith("@@"):
            if current is None:
                raise DiffParseError("hunk outside of a file section", index + 1)
            hunk, index = _parse_hunk(lines, index)
            current.hunks.append(hunk)
            if index < len(lines) and lines[index][:1] in ("+", "-", " "):
                following = lines[index].rstrip("\r")
                is_file_header = following.startswith("--- ") and index + 1 < len(lines) \
                    and lines[index + 1].startswith("+++ ")
                if not is_file_header and following not in ("--", "-- "):
                    raise DiffParseError(
                        f"hunk body exceeds declared -{hunk.old_len} +{hunk.new_len} lines",
                        index + 1,
                    )
            continue

        if current is not None:
            if line.startswith("new file mode"):
                current.new_file = True
            elif line.startswith("deleted file mode"):
                current.deleted_file = True
            elif line.startswith("rename from "):
                current.old_path = line[len("rename from "):]
            elif line.startswith("rename to "):
                current.new_path = line[len("rename to "):]
            elif line.startswith("Binary files ") and line.endswith(" differ"):
                current.is_binary = True
            elif line.startswith("GIT binary patch"):
                current.is_binary = True
                in_binary_patch = True
        # Mode, index, similarity and any other preamble lines are ignored.
        index += 1

    flush(len(lines))
    return files


def render_unified_diff(diffs: Iterable[FileDiff]) -> str:
    """Render FileDiffs back to git-style unified diff text.

    Hunk bodies are reproduced byte-for-byte; headers are normalized (explicit
    counts, ``a/``/``b/`` prefixes).
    """
    out: list[str] = []
    for diff in diffs:
        left = diff.old_path if diff.old_path is not None else diff.new_path
        right = diff.new_path if diff.new_path is not None else diff.old_path
        out.append(f"diff --git a/{left} b/{right}")
        if diff.old_path is None:
            out.append("new file mode 100644")
        elif diff.new_path is None:
            out.append("deleted file mode 100644")
        if diff.is_binary:
            out.append(f"Binary files a/{left} and b/{right} differ")
            continue
        out.append(f"--- a/{diff.old_path}" if diff.old_path is not None else f"--- {DEV_NULL}")
        out.append(f"+++ b/{diff.new_path}" if diff.new_path is not None else f"+++ {DEV_NULL}")
        for hunk in diff.hunks:
            out.append(hunk.header())
            out.extend(hunk.body_lines())
    return "\n".join(out) + "\n" if out else ""


def wrap_as_added_diff(path: str, text: str) -> str:
    """Wrap a whole source file as a new-file diff with every line added."""
    body = text.split("\n")
    if body and body[-1] == "":
        body.pop()
    if not body:
        return ""
    lines = [
        f"diff --git a/{path} b/{path}",
        "new file mode 100644",
        f"--- {DEV_NULL}",
        f"+++ b/{path}",
        f"@@ -0,0 +1,{len(body)} @@",
    ]
    lines.extend("+" + line for line in body)
    if not text.endswith("\n"):
        lines.append(NO_NEWLINE_MARKER)
    return "\n".join(lines) + "\n"
