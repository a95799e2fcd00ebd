"""Language-model backends for the reasoning and refinement agents.

Two implementations live behind one interface: a deterministic mock used
by tests and desk runs, and an HTTP adapter for real inference endpoints.
Backends enforce a capacity lease so concurrent pipelines cannot oversubscribe
a model that only supports a bounded number of in-flight generations.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace

import requests

from .errors import (
    LeaseError,
    LeaseTimeoutError,
    PartialGenerationError,
    ProtocolError,
    TransportError,
)

DEFAULT_LEASE_TIMEOUT = 60.0


@dataclass(frozen=True)
class GenerationParams:
    """Sampling knobs for one generation call."""

    max_tokens: int = 256
    temperature: float = 0.7
    seed: int = 1234
    sample_index: int = 0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")


@dataclass(frozen=True)
class GenerationOutput:
    """Generated text plus per-token log-probabilities."""

    text: str
    token_logprobs: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for token, logprob in self.token_logprobs:
            if logprob > 0:
                raise ValueError(f"logprob for {token!r} is positive: {logprob}")

    @property
    def logprobs(self) -> list[float]:
        return [lp for _, lp in self.token_logprobs]


@dataclass(frozen=True)
class BackendDescriptor:
    """Names one model endpoint and its concurrency budget."""

    name: str
    endpoint: str = "mock"
    capacity: int = 1

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    def resolved_endpoint(self) -> str:
        """Endpoint after applying the MEDORC_BACKEND_<NAME>_URL override."""
        env_key = f"MEDORC_BACKEND_{self.name.upper()}_URL"
        return os.environ.get(env_key, self.endpoint)


class Lease:
    """Handle for one unit of backend capacity. Release exactly once."""

    def __init__(self, backend: "Backend"):
        self._backend = backend
        self._released = False

    def release(self) -> None:
        if self._released:
            return
        self._released = True
        self._backend._release()


class Backend:
    """Base class: capacity leasing plus the generation interface."""

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self._cond = threading.Condition()
        self._outstanding = 0

    @property
    def outstanding_leases(self) -> int:
        with self._cond:
            return self._outstanding

    def acquire_lease(self, timeout: float = DEFAULT_LEASE_TIMEOUT) -> Lease:
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self._outstanding < self.descriptor.capacity, timeout
            )
            if not ok:
                raise LeaseTimeoutError(
                    f"no lease on backend {self.descriptor.name!r} "
                    f"within {timeout:.1f}s (capacity {self.descriptor.capacity})"
                )
            self._outstanding += 1
        return Lease(self)

    def release_lease(self, lease: Lease) -> None:
        lease.release()

    def _release(self) -> None:
        with self._cond:
            self._outstanding -= 1
            self._cond.notify()

    @contextmanager
    def lease(self, timeout: float = DEFAULT_LEASE_TIMEOUT):
        handle = self.acquire_lease(timeout)
        try:
            yield handle
        finally:
            handle.release()

    def _require_lease(self) -> None:
        # Guard, not proof of ownership: callers must wrap generation in lease().
        if self.outstanding_leases == 0:
            raise LeaseError(
                f"generate on {self.descriptor.name!r} requires a held lease"
            )

    def generate(self, prompt: str, params: GenerationParams) -> GenerationOutput:
        raise NotImplementedError

    def generate_samples(
        self, prompt: str, params: GenerationParams, n: int
    ) -> list[GenerationOutput]:
        """Draw n generations of one prompt, sample i using sample_index=i."""
        if n < 1:
            raise ValueError("n must be >= 1")
        samples: list[GenerationOutput] = []
        for i in range(n):
            try:
                samples.append(self.generate(prompt, replace(params, sample_index=i)))
            except (TransportError, ProtocolError) as exc:
                raise PartialGenerationError(
                    f"sample {i + 1}/{n} failed on {self.descriptor.name!r}: {exc}",
                    samples,
                ) from exc
        return samples


_MOCK_VOCAB = (
    "clinical evaluation suggests that patients with this condition may "
    "benefit from early assessment monitoring and management evidence "
    "indicates symptoms can include fatigue discomfort and gradual changes "
    "in function consult a qualified professional for individual guidance "
    "treatment options vary depending on severity history and response "
    "further studies support careful follow up care"
).split()


def _stable_u64(key: str) -> int:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _tokenize_preserving(text: str) -> tuple[str, ...]:
    """Split text into chunks whose concatenation reproduces it exactly."""
    return tuple(re.findall(r"\s*\S+", text))


@dataclass
class CannedResponse:
    """Scripted mock output; logprob may be a uniform value or per-token list."""

    text: str
    logprob: float | list[float] | None = None


class MockBackend(Backend):
    """Deterministic backend: output is a pure function of the call inputs.

    Without canned responses the text and log-probabilities derive from a
    stable hash of (prompt, seed, sample_index, temperature bucket), where the
    bucket collapses to 0 at temperature 0 so zero-temperature calls ignore
    sample_index. Canned responses are matched by prompt prefix (longest
    prefix wins) and selected by sample_index, clamping to the last entry.
    """

    def __init__(
        self,
        descriptor: BackendDescriptor,
        canned: dict[str, list[CannedResponse | str]] | None = None,
    ):
        super().__init__(descriptor)
        self._canned: dict[str, list[CannedResponse]] = {}
        for prefix, responses in (canned or {}).items():
            self._canned[prefix] = [
                r if isinstance(r, CannedResponse) else CannedResponse(r)
                for r in responses
            ]

    def add_canned(self, prefix: str, responses: list[CannedResponse | str]) -> None:
        self._canned[prefix] = [
            r if isinstance(r, CannedResponse) else CannedResponse(r)
            for r in responses
        ]

    def generate(self, prompt: str, params: GenerationParams) -> GenerationOutput:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        self._require_lease()
        effective_index = params.sample_index if params.temperature > 0 else 0
        rule = self._match_canned(prompt)
        if rule is not None:
            response = rule[min(effective_index, len(rule) - 1)]
            return self._render_canned(response, prompt, params, effective_index)
        return self._hashed_output(prompt, params, effective_index)

    def _match_canned(self, prompt: str) -> list[CannedResponse] | None:
        best: str | None = None
        for prefix in self._canned:
            if prompt.startswith(prefix):
                if best is None or len(prefix) > len(best):
                    best = prefix
        return self._canned[best] if best is not None else None

    def _render_canned(
        self,
        response: CannedResponse,
        prompt: str,
        params: GenerationParams,
        effective_index: int,
    ) -> GenerationOutput:
        tokens = _tokenize_preserving(response.text)
        if response.logprob is None:
            rng_base = _stable_u64(
                f"canned|{prompt}|{params.seed}|{effective_index}"
            )
            logprobs = [self._default_logprob(rng_base, i) for i in range(len(tokens))]
        elif isinstance(response.logprob, list):
            if len(response.logprob) != len(tokens):
                raise ValueError(
                    f"canned logprob list length {len(response.logprob)} "
                    f"!= token count {len(tokens)}"
                )
            logprobs = list(response.logprob)
        else:
            logprobs = [response.logprob] * len(tokens)
        return GenerationOutput(response.text, tuple(zip(tokens, logprobs)))

    @staticmethod
    def _default_logprob(rng_base: int, position: int) -> float:
        v = _stable_u64(f"{rng_base}|lp|{position}")
        # Uniform in [-1.6, -0.15]: keeps default mock perplexity well below 10.
        return -0.15 - 1.45 * ((v % 10_000) / 10_000.0)

    def _hashed_output(
        self, prompt: str, params: GenerationParams, effective_index: int
    ) -> GenerationOutput:
        bucket = 1 if params.temperature > 0 else 0
        base = _stable_u64(f"{prompt}|{params.seed}|{effective_index}|{bucket}")
        n_words = min(8 + base % 17, params.max_tokens)
        tokens: list[str] = []
        logprobs: list[float] = []
        for i in range(n_words):
            v = _stable_u64(f"{base}|w|{i}")
            word = _MOCK_VOCAB[v % len(_MOCK_VOCAB)]
            if i == 0:
                word = word.capitalize()
                tokens.append(word)
            else:
                tokens.append(" " + word)
            logprobs.append(self._default_logprob(base, i))
        tokens.append(".")
        logprobs.append(self._default_logprob(base, n_words))
        text = "".join(tokens)
        return GenerationOutput(text, tuple(zip(tokens, logprobs)))


class HTTPBackend(Backend):
    """Adapter for an OpenAI-compatible /generate endpoint."""

    def __init__(
        self,
        descriptor: BackendDescriptor,
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ):
        super().__init__(descriptor)
        self._url = descriptor.resolved_endpoint().rstrip("/") + "/generate"
        self._timeout = timeout
        self._session = session or requests.Session()

    def generate(self, prompt: str, params: GenerationParams) -> GenerationOutput:
        return self._request(prompt, params, n=1)[0]

    def generate_samples(
        self, prompt: str, params: GenerationParams, n: int
    ) -> list[GenerationOutput]:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self._request(prompt, params, n=n)

    def _request(
        self, prompt: str, params: GenerationParams, n: int
    ) -> list[GenerationOutput]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        self._require_lease()
        body = {
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "n": n,
            "logprobs": True,
        }
        try:
            resp = self._session.post(self._url, json=body, timeout=self._timeout)
        except requests.RequestException as exc:
            raise TransportError(f"POST {self._url} failed: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise TransportError(
                f"POST {self._url} returned HTTP {resp.status_code}"
            )
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON body from {self._url}") from exc
        outputs = self._parse_choices(payload)
        if len(outputs) < n:
            raise PartialGenerationError(
                f"{self._url} returned {len(outputs)}/{n} samples", outputs
            )
        return outputs[:n]

    def _parse_choices(self, payload: object) -> list[GenerationOutput]:
        if not isinstance(payload, dict) or not isinstance(
            payload.get("choices"), list
        ):
            raise ProtocolError("response missing 'choices' list")
        outputs = []
        for choice in payload["choices"]:
            try:
                text = choice["text"]
                lp = choice["logprobs"]
                tokens = lp["tokens"]
                token_logprobs = lp["token_logprobs"]
            except (TypeError, KeyError) as exc:
                raise ProtocolError(f"malformed choice: {exc}") from exc
            if not isinstance(text, str) or len(tokens) != len(token_logprobs):
                raise ProtocolError("choice tokens/logprobs mismatch")
            pairs = tuple(
                (str(tok), min(float(val), 0.0))
                for tok, val in zip(tokens, token_logprobs)
            )
            outputs.append(GenerationOutput(text, pairs))
        return outputs


def build_backend(
    descriptor: BackendDescriptor,
    canned: dict[str, list[CannedResponse | str]] | None = None,
    timeout: float = 120.0,
) -> Backend:
    """Construct a mock or HTTP backend as the descriptor's endpoint dictates."""
    if descriptor.resolved_endpoint() == "mock":
        return MockBackend(descriptor, canned=canned)
    return HTTPBackend(descriptor, timeout=timeout)
