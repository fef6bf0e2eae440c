"""Shared fakes and builders for the test suite."""

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import requests

from src.diffs import PullRequestRef

HEAD_SHA = "a" * 40
BASE_SHA = "b" * 40


def make_pr(number: int = 7, owner: str = "acme", name: str = "vault") -> PullRequestRef:
    return PullRequestRef(owner, name, number, HEAD_SHA, BASE_SHA)


def make_response(status_code: int = 200, body: Union[bytes, str, dict, list, None] = b"") -> requests.Response:
    """A real ``requests.Response`` with a canned status and body."""
    response = requests.Response()
    response.status_code = status_code
    if isinstance(body, (dict, list)):
        response._content = json.dumps(body).encode("utf-8")
        response.headers["Content-Type"] = "application/json"
    elif isinstance(body, str):
        response._content = body.encode("utf-8")
    else:
        response._content = body or b""
    response.encoding = "utf-8"
    return response


@dataclass
class RecordedRequest:
    method: str
    url: str
    kwargs: dict

    @property
    def json(self):
        return self.kwargs.get("json")

    @property
    def headers(self) -> dict:
        return self.kwargs.get("headers") or {}


Responder = Callable[[RecordedRequest], Union[requests.Response, Exception]]


@dataclass
class FakeSession:
    """Stands in for ``requests.Session``.

    Replies come from ``responder`` when set, otherwise from ``queue`` in order
    (the last entry repeats). An exception in the queue is raised.
    """

    queue: list = field(default_factory=list)
    responder: Optional[Responder] = None
    calls: list[RecordedRequest] = field(default_factory=list)

    def request(self, method: str, url: str, **kwargs) -> requests.Response:
        recorded = RecordedRequest(method.upper(), url, kwargs)
        self.calls.append(recorded)
        if self.responder is not None:
            reply = self.responder(recorded)
        elif self.queue:
            reply = self.queue.pop(0) if len(self.queue) > 1 else self.queue[0]
        else:
            reply = make_response(200)
        if isinstance(reply, Exception):
            raise reply
        return reply

    def post(self, url: str, **kwargs) -> requests.Response:
        return self.request("POST", url, **kwargs)

    def get(self, url: str, **kwargs) -> requests.Response:
        return self.request("GET", url, **kwargs)


def hunk_text(new_start: int, added: list[str], context_before: list[str] = (), removed: list[str] = ()) -> str:
    """One hunk: context lines, then removed lines, then added lines."""
    old_len = len(context_before) + len(removed)
    new_len = len(context_before) + len(added)
    old_start = new_start if old_len else 0
    lines = [f"@@ -{old_start},{old_len} +{new_start},{new_len} @@"]
    lines += [" " + line for line in context_before]
    lines += ["-" + line for line in removed]
    lines += ["+" + line for line in added]
    return "\n".join(lines) + "\n"


def file_diff_text(path: str, hunks: list[str]) -> str:
    header = f"diff --git a/{path} b/{path}\nindex 1111111..2222222 100644\n--- a/{path}\n+++ b/{path}\n"
    return header + "".join(hunks)


def random_diff_text(rng: random.Random, max_files: int = 50, max_lines: int = 5000) -> str:
    """Generate a well-formed git diff with random files, hunks and line kinds."""
    file_count = rng.randint(1, max_files)
    pool = ["".join(rng.choice("abcdefghij ={}();.") for _ in range(rng.randint(0, 60))) for _ in range(64)]
    budget = rng.randint(file_count, max_lines)
    out = []
    for file_index in range(file_count):
        path = f"pkg{file_index % 7}/mod_{file_index}.{rng.choice(['py', 'sol', 'rs', 'ts', 'go', 'txt'])}"
        out.append(f"diff --git a/{path} b/{path}\n--- a/{path}\n+++ b/{path}\n")
        remaining = max(1, budget // file_count)
        old_line = new_line = 1
        while remaining > 0:
            size = min(remaining, rng.randint(1, 120))
            remaining -= size
            body = []
            old_len = new_len = 0
            for _ in range(size):
                kind = rng.choice("+- ")
                body.append(kind + rng.choice(pool))
                old_len += kind != "+"
                new_len += kind != "-"
            gap = rng.randint(0, 20)
            old_line += gap
            new_line += gap
            out.append(f"@@ -{old_line},{old_len} +{new_line},{new_len} @@\n")
            out.append("\n".join(body) + "\n")
            old_line += old_len
            new_line += new_len
    return "".join(out)


VAULT_SOL = """pragma solidity ^0.8.0;

contract Vault {
    mapping(address => uint) balances;

    function withdraw(uint amount) external {
        (bool ok, ) = msg.sender.call{value: amount}("");
        require(ok);
        balances[msg.sender] = 0;
    }
}
"""

CACHE_PY = """import pickle


def load(raw):
    return pickle.loads(raw)
"""

CLEAN_PY = """def add(a, b):
    return a + b
"""

POINTER_RS = """fn main() {
    let p = &5 as *const i32;
    unsafe { println!("{}", *p); }
}
"""


def write_sample(root, sample_id: str, filename: str, code: str, truth: list[dict], source: str = "manual_audit"):
    directory = root / sample_id
    directory.mkdir(parents=True)
    (directory / filename).write_text(code, encoding="utf-8")
    (directory / "truth.json").write_text(json.dumps({"source": source, "findings": truth}), encoding="utf-8")
    return directory


def write_eval_corpus(root, reentrancy_description: str, deserialization_description: str):
    """Ten samples: three reentrant contracts, three pickle loaders, two clean
    files and two Rust files whose unsafe blocks are not labeled as findings."""
    reentrancy = [{"class": "Reentrancy", "description": reentrancy_description}]
    pickle = [{"class": "insecure-deserialization", "description": deserialization_description}]
    for i in range(3):
        write_sample(root, f"sol-{i}", "input.sol", VAULT_SOL, reentrancy)
        write_sample(root, f"py-{i}", "input.py", CACHE_PY, pickle, source="bug_bounty")
    for i in range(2):
        write_sample(root, f"clean-{i}", "input.py", CLEAN_PY, [])
        write_sample(root, f"rs-{i}", "input.rs", POINTER_RS, [])
    return root
