"""High-level goal finding.

Builds the interleaved multimodal prompt, queries a pluggable model
client (remote HTTP, scripted transcript, or simulator oracle), and
parses the returned goal frame index. Also provides the direct-action
prompt ablation and a descriptor-similarity retrieval baseline.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import httpx
import numpy as np

from .errors import TransportError, UnsupportedInstructionError, ValidationError
from .geometry import euclidean
from .localization import QueryObservation
from .tour import Tour, subsample

# Prompt text segments. Line breaks inside segments are part of the
# canonical template and are golden-file tested.
PREAMBLE = (
    "You are a robot operating in a building and your task is to respond to the user\n"
    "command about going to a specific location by finding the closest frame in the\n"
    "tour video to navigate to.\n"
    "These frames are from the tour of the building last year."
)
OBSERVATION_SENTENCE = (
    "This image is what you see now. You may or may not see the user in this image."
)
CLOSING_GOAL = "How would you respond? Can you find the closest frame?"
CLOSING_ACTION = (
    "Could you select and answer the most appropriate action to take now among\n"
    "'left', 'forward' and 'right', which correspond to respectively? Answer: "
)

ACTION_VOCAB = ("left", "forward", "right")


@dataclass(frozen=True)
class Instruction:
    text: str
    image: Optional[QueryObservation] = None

    def __post_init__(self):
        if not self.text:
            raise ValidationError("instruction text must be non-empty")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class FrameImagePart:
    frame_index: int


@dataclass(frozen=True)
class InstructionImagePart:
    pass


PromptPart = Union[TextPart, FrameImagePart, InstructionImagePart]


@dataclass(frozen=True)
class Prompt:
    parts: Tuple[PromptPart, ...]

    def instruction_text(self) -> Optional[str]:
        for p in self.parts:
            if isinstance(p, TextPart) and p.text.startswith("The user says: "):
                return p.text[len("The user says: "):]
        return None

    def frame_indices(self) -> List[int]:
        return [p.frame_index for p in self.parts if isinstance(p, FrameImagePart)]


def prompt_to_text(prompt: Prompt) -> str:
    """Canonical serialization; image parts become bracketed placeholders."""
    lines = []
    for p in prompt.parts:
        if isinstance(p, TextPart):
            lines.append(p.text)
        elif isinstance(p, FrameImagePart):
            lines.append(f"[Frame {p.frame_index} Image]")
        else:
            lines.append("[Image Instruction]")
    return "\n".join(lines)


def _interleaved_parts(tour: Tour, instr: Instruction) -> List[PromptPart]:
    parts: List[PromptPart] = [TextPart(PREAMBLE)]
    for f in tour.frames:
        parts.append(FrameImagePart(f.index))
        text = f"Frame {f.index}."
        if f.narrative is not None:
            text += f" {f.narrative}"
        parts.append(TextPart(text))
    if instr.image is not None:
        parts.append(TextPart(OBSERVATION_SENTENCE))
        parts.append(InstructionImagePart())
    parts.append(TextPart(f"The user says: {instr.text}"))
    return parts


def build_goal_prompt(tour: Tour, instr: Instruction) -> Prompt:
    """The goal-finding prompt: preamble, interleaved frames and narratives,
    optional current observation, the user instruction, closing question."""
    if len(tour) == 0:
        raise ValidationError("cannot build a prompt from an empty tour")
    parts = _interleaved_parts(tour, instr)
    parts.append(TextPart(CLOSING_GOAL))
    return Prompt(parts=tuple(parts))


def build_action_prompt(tour: Tour, instr: Instruction) -> Prompt:
    """Same interleaving, closing with the discrete left/forward/right question."""
    if len(tour) == 0:
        raise ValidationError("cannot build a prompt from an empty tour")
    parts = _interleaved_parts(tour, instr)
    parts.append(TextPart(CLOSING_ACTION))
    return Prompt(parts=tuple(parts))


# ---------------------------------------------------------------------------
# Response parsing

PARSE_OK = "ok"
PARSE_REFUSAL = "refusal"
PARSE_AMBIGUOUS = "ambiguous"

_FRAME_RE = re.compile(r"[Ff]rame\s+(\d+)")


@dataclass(frozen=True)
class GoalDecision:
    goal_index: Optional[int]
    raw_response: str
    parse_status: str


@dataclass(frozen=True)
class ActionDecision:
    action: Optional[str]
    raw_response: str
    parse_status: str


def parse_goal(response: str, tour_len: int) -> GoalDecision:
    """Last 'Frame N' mention wins; bare integers accepted; out-of-range is
    ambiguous; nothing extractable is a refusal."""
    matches = _FRAME_RE.findall(response)
    if matches:
        n = int(matches[-1])
    elif re.fullmatch(r"\d+", response.strip()):
        n = int(response.strip())
    else:
        return GoalDecision(None, response, PARSE_REFUSAL)
    if not 1 <= n <= tour_len:
        return GoalDecision(None, response, PARSE_AMBIGUOUS)
    return GoalDecision(n, response, PARSE_OK)


def parse_action(response: str) -> ActionDecision:
    found = {w for w in ACTION_VOCAB if re.search(rf"\b{w}\b", response.lower())}
    if len(found) == 1:
        return ActionDecision(found.pop(), response, PARSE_OK)
    return ActionDecision(None, response, PARSE_AMBIGUOUS)


# ---------------------------------------------------------------------------
# Clients


class VlmClient(Protocol):
    def query(self, prompt: Prompt, tour: Tour) -> str:
        """Answer a prompt built from `tour`; raises TransportError on
        transport failure."""
        ...


class ScriptedClient:
    """Replays canned responses from a transcript.

    Each entry is {"match": substring, "response": text}; a query consumes
    the first unused entry whose match occurs in the serialized prompt.
    Once all matching entries are used the last one keeps answering.
    """

    def __init__(self, entries: Sequence[dict]):
        self._entries = [dict(e) for e in entries]
        self._used = [False] * len(self._entries)

    @classmethod
    def from_file(cls, path: str) -> "ScriptedClient":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return cls(entries)

    def query(self, prompt: Prompt, tour: Tour) -> str:
        text = prompt_to_text(prompt)
        last_match = None
        for i, entry in enumerate(self._entries):
            if entry["match"] in text:
                last_match = i
                if not self._used[i]:
                    self._used[i] = True
                    return entry["response"]
        if last_match is not None:
            return self._entries[last_match]["response"]
        raise ValidationError("no scripted response matches the prompt")


class OracleClient:
    """Ground-truth goal finder: looks up the instruction's tagged goal pose
    in the world and answers with the closest prompted frame."""

    def __init__(self, world):
        self._world = world

    def query(self, prompt: Prompt, tour: Tour) -> str:
        text = prompt.instruction_text()
        if text is None:
            return ""
        tag = self._world.tag_for(text)
        if tag is None:
            return ""
        best = None
        best_key = None
        for idx in prompt.frame_indices():
            pose = tour.frame(idx).pose
            if pose is None:
                continue
            key = (euclidean(pose, tag.goal_pose), idx)
            if best_key is None or key < best_key:
                best_key = key
                best = idx
        if best is None:
            return ""
        return f"Frame {best}"


def serialize_prompt_parts(prompt: Prompt) -> List[dict]:
    parts = []
    for p in prompt.parts:
        if isinstance(p, TextPart):
            parts.append({"type": "text", "text": p.text})
        elif isinstance(p, FrameImagePart):
            parts.append({"type": "frame_image", "frame_index": p.frame_index})
        else:
            parts.append({"type": "instruction_image"})
    return parts


class RemoteVlmClient:
    """Minimal JSON-over-HTTP client.

    POST {model, parts, max_tokens} -> {"text": ...}. Any transport or
    protocol failure becomes TransportError after the configured retries.
    """

    def __init__(
        self,
        url: str,
        model: str = "vlm",
        timeout: float = 60.0,
        retries: int = 2,
        max_tokens: int = 256,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.url = url
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.max_tokens = max_tokens
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def query(self, prompt: Prompt, tour: Tour) -> str:
        payload = {
            "model": self.model,
            "parts": serialize_prompt_parts(prompt),
            "max_tokens": self.max_tokens,
        }
        last_error: Optional[Exception] = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=payload)
                resp.raise_for_status()
                body = resp.json()
                return str(body["text"])
            except (httpx.HTTPError, KeyError, ValueError) as e:
                last_error = e
        raise TransportError(f"remote VLM at {self.url} failed: {last_error}")


# ---------------------------------------------------------------------------
# Top-level operations


@dataclass(frozen=True)
class GoalFinderConfig:
    retries: int = 2
    fps: Optional[float] = None  # subsample the tour before prompting


def find_goal(
    client: VlmClient,
    tour: Tour,
    instr: Instruction,
    cfg: GoalFinderConfig = GoalFinderConfig(),
) -> GoalDecision:
    """Build the prompt (optionally on a subsampled tour), query, parse.

    Refusals and ambiguous answers are retried with the identical prompt.
    A parsed index on a subsampled tour is mapped back to the full-rate
    frame index.
    """
    work = tour
    if cfg.fps is not None and cfg.fps < tour.fps:
        work = subsample(tour, cfg.fps)
    prompt = build_goal_prompt(work, instr)
    decision = GoalDecision(None, "", PARSE_REFUSAL)
    for _ in range(cfg.retries + 1):
        response = client.query(prompt, work)
        decision = parse_goal(response, len(work))
        if decision.parse_status == PARSE_OK:
            return GoalDecision(
                goal_index=work.source_index(decision.goal_index),
                raw_response=decision.raw_response,
                parse_status=PARSE_OK,
            )
    return decision


def find_action(
    client: VlmClient,
    tour: Tour,
    instr: Instruction,
    cfg: GoalFinderConfig = GoalFinderConfig(),
) -> ActionDecision:
    """Direct-action ablation: ask for left/forward/right instead of a frame."""
    work = tour
    if cfg.fps is not None and cfg.fps < tour.fps:
        work = subsample(tour, cfg.fps)
    prompt = build_action_prompt(work, instr)
    decision = ActionDecision(None, "", PARSE_AMBIGUOUS)
    for _ in range(cfg.retries + 1):
        response = client.query(prompt, work)
        decision = parse_action(response)
        if decision.parse_status == PARSE_OK:
            return decision
    return decision


def retrieve_goal_baseline(tour: Tour, instr: Instruction) -> int:
    """Goal frame by maximum descriptor cosine similarity with the
    instruction image; the stand-in for embedding-retrieval baselines."""
    if instr.image is None:
        raise UnsupportedInstructionError(
            "retrieval baseline requires an image instruction"
        )
    qv = np.asarray(instr.image.descriptor, dtype=np.float64)
    best = None
    best_key = None
    for f in tour.frames:
        sim = float(np.dot(qv, np.asarray(f.descriptor)))
        key = (-sim, f.index)
        if best_key is None or key < best_key:
            best_key = key
            best = f.index
    return best
