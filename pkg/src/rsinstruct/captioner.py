"""Client for external multimodal/text LLMs used during dataset construction.

One backend interface (``send(request) -> text``) with a live HTTP adapter
and a fixture-driven deterministic mock, wrapped by a client that adds disk
caching, token-bucket rate limiting, bounded concurrency, retries with
exponential backoff, and a transcript log. With the mock backend the whole
pipeline runs offline and bit-deterministically.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import string
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

PROTOCOLS = ("caption", "color", "conversation", "reasoning", "judge")

_TEMPLATE_PROTOCOLS = {
    "caption": "caption",
    "color_a": "color",
    "color_b": "color",
    "conversation": "conversation",
    "reasoning": "reasoning",
    "judge_color": "judge",
}

COLOR_LEXICON = (
    "red", "orange", "yellow", "green", "blue", "purple", "pink",
    "brown", "black", "white", "gray", "grey", "silver", "beige", "tan",
)
_COLOR_CANON = {"grey": "gray"}


class TemplateError(ValueError):
    """A template was rendered with unbound placeholders."""


class TransportError(RuntimeError):
    """The backend stayed unreachable after the configured retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class BackendUnavailable(RuntimeError):
    """Transient backend failure; the client may retry."""


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str
    protocol: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(sorted({f for _, f, _, _ in string.Formatter().parse(self.text) if f}))

    def render(self, **bindings: str) -> str:
        missing = [p for p in self.placeholders if p not in bindings]
        if missing:
            raise TemplateError(f"template {self.name}: unbound placeholders {missing}")
        return self.text.format(**{k: bindings[k] for k in self.placeholders})


def load_template(name: str) -> PromptTemplate:
    text = resources.files("rsinstruct.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name=name, text=text, protocol=_TEMPLATE_PROTOCOLS.get(name, "caption"))


@dataclass(frozen=True)
class LlmRequest:
    template: str
    prompt: str
    image_ref: str = ""
    image_bytes: Optional[bytes] = None

    def image_digest(self) -> str:
        if self.image_bytes is not None:
            return hashlib.sha256(self.image_bytes).hexdigest()
        return hashlib.sha256(self.image_ref.encode("utf-8")).hexdigest()


class MockBackend:
    """Offline backend producing deterministic responses from request digests.

    ``fixtures`` maps ``(template, image_ref)`` or plain ``image_ref`` keys to
    canned responses; anything not covered falls back to procedural text.
    ``disagree_refs`` makes the second color prompt return a different color,
    exercising the consistency filter.
    """

    backend_id = "mock"

    _SCENES = ("harbor area", "airfield", "residential district", "farmland", "industrial park")

    def __init__(self, fixtures: Optional[dict] = None, disagree_refs: Optional[set] = None):
        self.fixtures = fixtures or {}
        self.disagree_refs = disagree_refs or set()

    @staticmethod
    def _pick(seed: str, options: Sequence[str]) -> str:
        digest = hashlib.sha256(seed.encode("utf-8")).digest()
        return options[int.from_bytes(digest[:4], "big") % len(options)]

    def _color_for(self, ref: str, shifted: bool = False) -> str:
        palette = [c for c in COLOR_LEXICON if c not in ("grey", "silver", "beige", "tan")]
        color = self._pick("color:" + ref, palette)
        if shifted:
            color = palette[(palette.index(color) + 1) % len(palette)]
        return color

    def send(self, request: LlmRequest) -> str:
        for key in ((request.template, request.image_ref), request.image_ref):
            if key in self.fixtures:
                return self.fixtures[key]
        protocol = _TEMPLATE_PROTOCOLS.get(request.template, "caption")
        ref = request.image_ref or request.image_digest()
        if protocol == "color":
            bare = request.image_ref.split("#", 1)[0]
            shifted = request.template == "color_b" and (
                request.image_ref in self.disagree_refs or bare in self.disagree_refs
            )
            return self._color_for(ref, shifted) + "."
        if protocol in ("conversation", "reasoning"):
            scene = self._pick("scene:" + ref, self._SCENES)
            if protocol == "reasoning":
                return (
                    "User: Which side of the scene holds more objects, and why might that be?\n"
                    f"Assistant: Counting the annotated objects, more of them sit toward the {self._pick('side:' + ref, ('east', 'west'))}ern half. "
                    f"That is consistent with a {scene}, where activity clusters along its access routes."
                )
            color = self._color_for(ref)
            return (
                "User: What kind of area does this image show?\n"
                f"Assistant: It shows a {scene} seen from above.\n"
                "User: What stands out most?\n"
                f"Assistant: The most prominent object is {color} and sits near the middle of the frame.\n"
                "User: Is the image in color?\n"
                "Assistant: Yes, it is an optical image with natural colors."
            )
        if protocol == "judge":
            return "correct"
        scene = self._pick("scene:" + ref, self._SCENES)
        color = self._color_for(ref)
        return (
            f"This optical remote sensing image shows a {scene} at a resolution of 0.5 m per pixel. "
            f"A cluster of {color} structures occupies the center of the frame. "
            "The layout is regular, with open ground along the edges of the scene."
        )


class HttpBackend:
    """Minimal JSON-over-HTTP adapter: POST {model, prompt, image_b64} -> {text}."""

    def __init__(self, url: str, model: str = "default", api_key_env: str = "RSINSTRUCT_API_KEY", timeout: float = 60.0):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.backend_id = f"http:{url}:{model}"

    def send(self, request: LlmRequest) -> str:
        import base64

        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise BackendUnavailable(f"credential env var {self.api_key_env} is not set")
        payload = {"model": self.model, "prompt": request.prompt}
        if request.image_bytes is not None:
            payload["image_b64"] = base64.b64encode(request.image_bytes).decode("ascii")
        elif request.image_ref:
            payload["image_ref"] = request.image_ref
        try:
            resp = requests.post(
                self.url,
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(str(exc)) from exc
        if resp.status_code >= 500:
            raise BackendUnavailable(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise RuntimeError(f"backend rejected request: {resp.status_code} {resp.text[:200]}")
        try:
            return resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise RuntimeError(f"backend response missing 'text' field: {resp.text[:200]}") from exc


class RateLimiter:
    """Token bucket: at most ``rate`` acquisitions per ``interval`` seconds."""

    def __init__(self, rate: int, interval: float = 1.0, monotonic: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.rate = rate
        self.interval = interval
        self._monotonic = monotonic
        self._sleep = sleep
        self._stamps: list[float] = []
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._monotonic()
                self._stamps = [s for s in self._stamps if now - s < self.interval]
                if len(self._stamps) < self.rate:
                    self._stamps.append(now)
                    return
                wait = self.interval - (now - self._stamps[0])
            self._sleep(max(wait, 1e-4))


@dataclass
class ColorOutcome:
    color: Optional[str]
    consistent: bool
    responses: tuple[str, str]
    transcript_ids: tuple[str, str]


@dataclass
class Dialogue:
    turns: list[dict]
    mode: str
    transcript_ids: list[str] = field(default_factory=list)


@dataclass
class DialogueRejected:
    reason: str
    raw: str
    transcript_ids: list[str] = field(default_factory=list)


def normalize_color(text: str) -> Optional[str]:
    """First recognised color token: lowercase, punctuation stripped, canonical."""
    for token in re.split(r"[^a-zA-Z]+", text.lower()):
        if token in COLOR_LEXICON:
            return _COLOR_CANON.get(token, token)
    return None


def crop_image_bytes(image_bytes: bytes, box) -> bytes:
    """Crop PNG/JPEG bytes to a Box; returns PNG bytes."""
    import io

    from PIL import Image

    with Image.open(io.BytesIO(image_bytes)) as img:
        cropped = img.crop((int(box.x_min), int(box.y_min), int(box.x_max), int(box.y_max)))
        out = io.BytesIO()
        cropped.save(out, format="PNG")
        return out.getvalue()


class LlmClient:
    """Caching, rate-limited, retrying wrapper around one backend."""

    def __init__(
        self,
        backend,
        cache_dir: Optional[Path] = None,
        transcript_path: Optional[Path] = None,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        rate: int = 50,
        rate_interval: float = 1.0,
        max_in_flight: int = 8,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.limiter = RateLimiter(rate, rate_interval, sleep=sleep)
        self._inflight_sem = threading.BoundedSemaphore(max_in_flight)
        self.max_in_flight = max_in_flight
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        # Counters are part of the observable contract (tested directly).
        self.requests_sent = 0
        self.cache_hits = 0
        self.inflight = 0
        self.max_inflight_observed = 0
        self._next_id = 0

    # -- plumbing --

    def _cache_key(self, request: LlmRequest) -> str:
        backend_id = getattr(self.backend, "backend_id", self.backend.__class__.__name__)
        blob = "\x1f".join((backend_id, request.template, request.prompt, request.image_digest()))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _cache_get(self, key: str) -> Optional[str]:
        if not self.cache_dir:
            return None
        path = self.cache_dir / f"{key}.json"
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))["response"]
        except (ValueError, KeyError, OSError):
            return None

    def _cache_put(self, key: str, response: str) -> None:
        if not self.cache_dir:
            return
        path = self.cache_dir / f"{key}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"response": response}, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)

    def _log_transcript(self, request: LlmRequest, response: str, cached: bool) -> str:
        with self._lock:
            self._next_id += 1
            request_id = f"r{self._next_id:06d}"
        if self.transcript_path:
            rec = {
                "request_id": request_id,
                "template": request.template,
                "prompt": request.prompt,
                "image_ref": request.image_ref,
                "response": response,
                "timestamp": round(self._clock(), 6),
                "cached": cached,
            }
            with self._lock:
                with open(self.transcript_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return request_id

    def send(self, request: LlmRequest) -> tuple[str, str]:
        """Returns (response_text, transcript_id); cache hits skip the network."""
        key = self._cache_key(request)
        cached = self._cache_get(key)
        if cached is not None:
            with self._lock:
                self.cache_hits += 1
            return cached, self._log_transcript(request, cached, cached=True)
        with self._inflight_sem:
            with self._lock:
                self.inflight += 1
                self.max_inflight_observed = max(self.max_inflight_observed, self.inflight)
            try:
                response = self._send_with_retry(request)
            finally:
                with self._lock:
                    self.inflight -= 1
        self._cache_put(key, response)
        return response, self._log_transcript(request, response, cached=False)

    def _send_with_retry(self, request: LlmRequest) -> str:
        attempts = 0
        while True:
            self.limiter.acquire()
            attempts += 1
            with self._lock:
                self.requests_sent += 1
            try:
                return self.backend.send(request)
            except BackendUnavailable as exc:
                if attempts > self.max_retries:
                    raise TransportError(str(exc), attempts) from exc
                self._sleep(self.backoff_base * (2 ** (attempts - 1)))

    # -- protocol operations --

    def caption_image(self, image_ref: str, metadata: str = "", image_bytes: Optional[bytes] = None) -> tuple[str, str]:
        """Rich-content caption; returns (caption, transcript_id)."""
        template = load_template("caption")
        prompt = template.render(metadata=metadata or "none")
        text, tid = self.send(LlmRequest("caption", prompt, image_ref, image_bytes))
        if not text.strip():
            raise TransportError("backend returned an empty caption", 1)
        return text, tid

    def extract_color(self, image_ref: str, category: str, crop=None, image_bytes: Optional[bytes] = None) -> ColorOutcome:
        """Double-query color extraction; accepted only when both answers agree."""
        payload = image_bytes
        if image_bytes is not None and crop is not None:
            payload = crop_image_bytes(image_bytes, crop)
        crop_ref = image_ref
        if crop is not None:
            crop_ref = f"{image_ref}#crop={','.join(f'{v:g}' for v in crop.as_list())}"
        responses = []
        tids = []
        for name in ("color_a", "color_b"):
            template = load_template(name)
            prompt = template.render(category=category)
            text, tid = self.send(LlmRequest(name, prompt, crop_ref, payload))
            responses.append(text)
            tids.append(tid)
        first = normalize_color(responses[0])
        second = normalize_color(responses[1])
        ok = first is not None and first == second
        return ColorOutcome(first if ok else None, ok, (responses[0], responses[1]), (tids[0], tids[1]))

    def gen_dialogue(self, image_ref: str, caption: str, objects: str, mode: str = "conversation"):
        """Multi-turn dialogue from a caption; one reprompt, then rejection."""
        if mode not in ("conversation", "reasoning"):
            raise ValueError(f"unknown dialogue mode {mode!r}")
        if not caption.strip():
            raise ValueError("caption must be non-empty")
        template = load_template(mode)
        prompt = template.render(caption=caption, objects=objects or "none")
        text, tid = self.send(LlmRequest(mode, prompt, image_ref))
        turns = parse_dialogue(text)
        if turns is not None:
            return Dialogue(turns, mode, [tid])
        retry_prompt = (
            "Your previous reply did not follow the required format. "
            'Use one line per turn, each starting with "User: " or "Assistant: ", '
            "alternating and starting with the user.\n\n" + prompt
        )
        text2, tid2 = self.send(LlmRequest(mode, retry_prompt, image_ref))
        turns = parse_dialogue(text2)
        if turns is not None:
            return Dialogue(turns, mode, [tid, tid2])
        return DialogueRejected("unparseable dialogue after reprompt", text2, [tid, tid2])


def parse_dialogue(text: str) -> Optional[list[dict]]:
    """Parse 'User:'/'Assistant:' lines; None when the turn grammar is violated."""
    turns = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("User:"):
            turns.append({"role": "user", "text": line[len("User:"):].strip()})
        elif line.startswith("Assistant:"):
            turns.append({"role": "assistant", "text": line[len("Assistant:"):].strip()})
        else:
            return None
    if len(turns) < 2 or len(turns) % 2 != 0:
        return None
    for i, turn in enumerate(turns):
        expected = "user" if i % 2 == 0 else "assistant"
        if turn["role"] != expected or not turn["text"]:
            return None
    return turns
