"""Operation registry, working memory, Thought units and execution traces.

Every solver in the package is expressed as a set of small registered
operations that read and write a :class:`WorkingMemory`.  A
:class:`Session` binds a memory to a registry, executes operations one call
at a time and (optionally) records them into a :class:`Trace` that can be
serialized as JSON lines and replayed.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

import numpy as np

ARGMAX_TOL = 1e-9


class StrideError(Exception):
    """Base error.  ``code`` is a stable kebab-case identifier."""

    def __init__(self, message: str = "", *, code: str = "error", op: str | None = None):
        super().__init__(message)
        self.code = code
        self.op = op

    def __str__(self) -> str:
        msg = super().__str__()
        prefix = f"[{self.op}] " if self.op else ""
        return f"{prefix}{self.code}: {msg}" if msg else f"{prefix}{self.code}"


class UnknownOperation(StrideError):
    def __init__(self, name: str):
        super().__init__(f"no operation named {name!r}", code="unknown-op", op=name)


class SchemaMismatch(StrideError):
    def __init__(self, message: str, op: str | None = None):
        super().__init__(message, code="schema-mismatch", op=op)


class OperationFailed(StrideError):
    """Non-package exception raised inside an operation."""


# --------------------------------------------------------------------------
# Working memory


class MemoryKeyError(StrideError, KeyError):
    def __init__(self, key: str):
        StrideError.__init__(self, f"key {key!r} not in working memory", code="memory-key")
        self.key = key


class WorkingMemory:
    """Flat string-keyed store.

    Array entries are held as float64/int64/bool numpy arrays; their shape is
    fixed by the first write.  Reads of absent keys raise.
    """

    def __init__(self) -> None:
        self._data: dict[str, Any] = {}
        self._shapes: dict[str, tuple[int, ...]] = {}

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def keys(self) -> list[str]:
        return sorted(self._data)

    def read(self, key: str) -> Any:
        try:
            return self._data[key]
        except KeyError:
            raise MemoryKeyError(key) from None

    def write(self, key: str, value: Any) -> None:
        if isinstance(value, np.ndarray):
            shape = tuple(value.shape)
            if key in self._shapes and self._shapes[key] != shape:
                raise StrideError(
                    f"{key!r} has shape {self._shapes[key]}, refusing {shape}", code="shape-mismatch"
                )
            self._shapes[key] = shape
        elif key in self._shapes:
            raise StrideError(f"{key!r} holds an array; cannot overwrite with {type(value).__name__}",
                              code="shape-mismatch")
        self._data[key] = value

    def shape(self, key: str) -> tuple[int, ...] | None:
        self.read(key)
        return self._shapes.get(key)

    def snapshot(self) -> dict[str, Any]:
        """Deep copy of the contents (arrays copied, other values via JSON)."""
        out = {}
        for k in self.keys():
            v = self._data[k]
            out[k] = v.copy() if isinstance(v, np.ndarray) else json.loads(_canonical_json(v))
        return out

    def digest(self) -> str:
        """SHA-256 over the exact bytes of every entry, in key order."""
        h = hashlib.sha256()
        for k in self.keys():
            v = self._data[k]
            h.update(k.encode())
            if isinstance(v, np.ndarray):
                h.update(f"{v.dtype.str}{v.shape}".encode())
                h.update(np.ascontiguousarray(v).tobytes())
            else:
                h.update(_canonical_json(v).encode())
        return h.hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, "to_json"):
        return value.to_json()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _canonical_json(value: Any) -> str:
    return json.dumps(_jsonable(value), sort_keys=True, allow_nan=True)


# --------------------------------------------------------------------------
# Thought units


@dataclass(frozen=True)
class ThoughtUnit:
    text: str
    operations: tuple[str, ...] = ()
    exit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))

    def to_json(self) -> dict:
        return {"text": self.text, "operations": list(self.operations), "exit": self.exit}

    @classmethod
    def from_json(cls, d: dict) -> "ThoughtUnit":
        return cls(d["text"], tuple(d["operations"]), bool(d["exit"]))


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def message(self) -> str:
        return "; ".join(f"{v.code}: {v.detail}" for v in self.violations)


# --------------------------------------------------------------------------
# Operation descriptors and registry

# semantic type -> predicate on a JSON-level value
def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, (bool, np.bool_))


def _is_real(v):
    return (_is_int(v) or isinstance(v, (float, np.floating))) and not isinstance(v, bool)


def _is_real_list(v):
    return isinstance(v, (list, tuple, np.ndarray)) and all(_is_real(x) for x in v)


def _is_policy(v):
    return isinstance(v, (list, tuple, np.ndarray)) and all(
        isinstance(row, (list, tuple, np.ndarray)) and all(_is_int(x) for x in row) for row in v
    )


ARG_TYPES: dict[str, Callable[[Any], bool]] = {
    "step": _is_int,
    "state": _is_int,
    "action": _is_int,
    "count": _is_int,
    "agent": lambda v: v is None or _is_int(v),
    "real": _is_real,
    "price": lambda v: v is None or _is_real(v),
    "reals": _is_real_list,
    "role": lambda v: v in ("buyer", "seller"),
    "policy": _is_policy,
    "board": lambda v: isinstance(v, str),
}


@dataclass(frozen=True)
class ArgSpec:
    name: str
    type: str
    required: bool = True


@dataclass(frozen=True)
class OpDescriptor:
    name: str
    args: tuple[ArgSpec, ...]
    result: str
    description: str = ""

    def check(self, args: dict) -> None:
        names = {a.name for a in self.args}
        extra = set(args) - names
        if extra:
            raise SchemaMismatch(f"unexpected argument(s) {sorted(extra)}", op=self.name)
        for spec in self.args:
            if spec.name not in args:
                if spec.required:
                    raise SchemaMismatch(f"missing argument {spec.name!r}", op=self.name)
                continue
            if not ARG_TYPES[spec.type](args[spec.name]):
                raise SchemaMismatch(
                    f"argument {spec.name!r}={args[spec.name]!r} is not a {spec.type}", op=self.name
                )

    def json_schema(self) -> dict:
        """Function-calling schema (OpenAI-style ``parameters`` object)."""
        kinds = {
            "step": {"type": "integer"}, "state": {"type": "integer"}, "action": {"type": "integer"},
            "count": {"type": "integer"}, "agent": {"type": ["integer", "null"]},
            "real": {"type": "number"}, "price": {"type": ["number", "null"]},
            "reals": {"type": "array", "items": {"type": "number"}},
            "role": {"type": "string", "enum": ["buyer", "seller"]},
            "policy": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
            "board": {"type": "string"},
        }
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": {a.name: kinds[a.type] for a in self.args},
                "required": [a.name for a in self.args if a.required],
            },
        }


OpFunc = Callable[..., Any]


class Registry:
    def __init__(self) -> None:
        self._ops: dict[str, tuple[OpDescriptor, OpFunc]] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._ops

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._ops))

    def register(self, desc: OpDescriptor, func: OpFunc) -> None:
        if desc.name in self._ops:
            raise StrideError(f"operation {desc.name!r} already registered", code="duplicate-op")
        self._ops[desc.name] = (desc, func)

    def operation(self, name: str, args: Iterable[tuple], result: str = "ack", description: str = ""):
        """Decorator form of :meth:`register`.  ``args`` items are
        ``(name, type)`` or ``(name, type, required)``."""
        specs = tuple(ArgSpec(*a) for a in args)

        def deco(func):
            self.register(OpDescriptor(name, specs, result, description), func)
            return func

        return deco

    def descriptor(self, name: str) -> OpDescriptor:
        try:
            return self._ops[name][0]
        except KeyError:
            raise UnknownOperation(name) from None

    def function(self, name: str) -> OpFunc:
        self.descriptor(name)
        return self._ops[name][1]


_default_registry: Registry | None = None


def default_registry() -> Registry:
    """The registry holding every operation defined by the package modules."""
    global _default_registry
    if _default_registry is None:
        from . import _ops_loader  # noqa: F401  (populates REGISTRY via module imports)

        _default_registry = REGISTRY
    return _default_registry


REGISTRY = Registry()


def validate_thought(t: ThoughtUnit, registry: Registry | None = None) -> ValidationResult:
    registry = registry or default_registry()
    found = []
    if t.exit and t.operations:
        found.append(Violation("premature-exit", "exit=true with pending operations"))
    for name in t.operations:
        if name not in registry:
            found.append(Violation("unknown-op", name))
    return ValidationResult(tuple(found))


# --------------------------------------------------------------------------
# Traces


@dataclass
class CallRecord:
    op: str
    args: dict
    result: Any

    def to_json(self) -> dict:
        return {"op": self.op, "args": _jsonable(self.args), "result": _jsonable(self.result)}


@dataclass
class TraceRecord:
    question: str
    thought: ThoughtUnit
    calls: list[CallRecord] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "question": self.question,
            "thought": self.thought.to_json(),
            "calls": [c.to_json() for c in self.calls],
        }

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        calls = [CallRecord(c["op"], c["args"], c["result"]) for c in d["calls"]]
        return cls(d["question"], ThoughtUnit.from_json(d["thought"]), calls)


class Trace:
    def __init__(self, records: list[TraceRecord] | None = None) -> None:
        self.records: list[TraceRecord] = list(records or [])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def open(self, question: str, thought: ThoughtUnit) -> TraceRecord:
        rec = TraceRecord(question, thought)
        self.records.append(rec)
        return rec

    def calls(self) -> list[CallRecord]:
        return [c for r in self.records for c in r.calls]

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def loads(cls, text: str) -> "Trace":
        return cls([TraceRecord.from_json(json.loads(line)) for line in text.splitlines() if line.strip()])

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path) as f:
            return cls.loads(f.read())


# --------------------------------------------------------------------------
# Sessions


class Session:
    """A (WorkingMemory, Trace, Registry) triple.  Not thread-safe."""

    def __init__(self, memory: WorkingMemory | None = None, registry: Registry | None = None,
                 record: bool = False) -> None:
        self.memory = memory if memory is not None else WorkingMemory()
        self.registry = registry or default_registry()
        self.trace: Trace | None = Trace() if record else None
        self._current: TraceRecord | None = None

    def begin(self, question: str, thought: ThoughtUnit) -> None:
        if self.trace is not None:
            self._current = self.trace.open(question, thought)

    def invoke(self, name: str, args: dict | None = None) -> Any:
        args = dict(args or {})
        desc = self.registry.descriptor(name)
        desc.check(args)
        func = self.registry.function(name)
        try:
            result = func(self.memory, **args)
        except StrideError as e:
            e.op = e.op or name
            raise
        except Exception as e:  # pragma: no cover - defensive
            raise OperationFailed(repr(e), code="operation-failed", op=name) from e
        if self._current is not None:
            self._current.calls.append(CallRecord(name, _jsonable(args), _jsonable(result)))
        return result

    def replay(self, trace: Trace) -> None:
        """Re-issue every recorded call against this session's memory."""
        for call in trace.calls():
            self.invoke(call.op, call.args)


# --------------------------------------------------------------------------
# Generic numeric operations


def get_arg_max(values) -> list[int]:
    vals = [float(v) for v in values]
    if not vals:
        raise StrideError("argmax of an empty list", code="empty-list")
    top = max(vals)
    return [i for i, v in enumerate(vals) if v >= top - ARGMAX_TOL]


def get_max(values) -> float:
    vals = [float(v) for v in values]
    if not vals:
        raise StrideError("max of an empty list", code="empty-list")
    return max(vals)


@REGISTRY.operation("GetArgMax", [("values", "reals")], result="indices",
                    description="Return the indices of the maximal value in the given list.")
def _op_get_arg_max(mem, values):
    return get_arg_max(values)


@REGISTRY.operation("GetMax", [("values", "reals")], result="real",
                    description="Return the maximal value in the given list.")
def _op_get_max(mem, values):
    return get_max(values)


def check_index(value: int, upper: int, what: str) -> int:
    if not (0 <= value < upper):
        raise StrideError(f"{what} {value} not in [0, {upper})", code=f"{what}-out-of-range")
    return int(value)


def check_step(h: int, H: int) -> int:
    if not (1 <= h <= H):
        raise StrideError(f"time step {h} outside 1..{H}", code="out-of-horizon")
    return int(h)


def isclose(a: float, b: float, tol: float = 1e-9) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)
