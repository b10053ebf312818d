"""Shared contexts: versioned schemas of tasks, concepts and parameters.

A shared context is the unit of semantic agreement between agents.  It is
identified by a versioned URN, loaded from a document file, immutable after
load, and hashable to a stable 32-byte digest so it can be signed.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Optional

from .wire import canonicalize

URN_PATTERN = re.compile(r"^urn:contexts:([^:]+):v(\d+)\.(\d+)$")

FIELD_KINDS = ("string", "number", "integer", "boolean", "object", "list", "embedding")

DATE_FORMAT_TAG = "yyyy-mm-dd"


class ContextError(Exception):
    """Base class for schema-layer failures."""


class InvalidUrn(ContextError):
    pass


class InvalidContext(ContextError):
    """Context document violates a structural invariant."""


class UnknownTask(ContextError):
    pass


class UnknownParameter(ContextError):
    pass


# ---------------------------------------------------------------------------
# URNs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class ContextUrn:
    domain: str
    major: int
    minor: int

    def __post_init__(self):
        if not self.domain or ":" in self.domain:
            raise InvalidUrn(f"bad domain {self.domain!r}")
        if self.major < 0 or self.minor < 0:
            raise InvalidUrn("version numbers must be non-negative")

    @property
    def version(self) -> tuple:
        return (self.major, self.minor)

    def __str__(self) -> str:
        return format_urn(self)


def parse_urn(text: str) -> ContextUrn:
    """Parse `urn:contexts:<domain>:v<major>.<minor>`; format is the inverse."""
    if not isinstance(text, str):
        raise InvalidUrn("URN must be a string")
    m = URN_PATTERN.match(text)
    if not m:
        raise InvalidUrn(f"not a context URN: {text!r}")
    domain, major, minor = m.group(1), m.group(2), m.group(3)
    # Reject non-canonical numerics so parse/format round-trips exactly.
    if str(int(major)) != major or str(int(minor)) != minor:
        raise InvalidUrn(f"non-canonical version in {text!r}")
    return ContextUrn(domain=domain, major=int(major), minor=int(minor))


def format_urn(urn: ContextUrn) -> str:
    return f"urn:contexts:{urn.domain}:v{urn.major}.{urn.minor}"


# ---------------------------------------------------------------------------
# Field and schema definitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    """One parameter or property definition.

    Constraints are optional: `enum` (string kinds only), `pattern` (regex),
    `minimum`/`maximum` (numeric kinds), `date_format` ("yyyy-mm-dd", string
    kinds only).  The `embedding` kind is reserved; nothing validates it.
    """

    name: str
    kind: str
    required: bool = True
    enum: Optional[tuple] = None
    pattern: Optional[str] = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    date_format: Optional[str] = None

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise InvalidContext(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.enum is not None:
            if self.kind != "string":
                raise InvalidContext(
                    f"field {self.name!r}: enumeration allowed on string kind only"
                )
            object.__setattr__(self, "enum", tuple(self.enum))
            if not self.enum or not all(isinstance(v, str) for v in self.enum):
                raise InvalidContext(f"field {self.name!r}: bad enumeration")
        if self.date_format is not None:
            if self.kind != "string":
                raise InvalidContext(
                    f"field {self.name!r}: date format allowed on string kind only"
                )
            if self.date_format != DATE_FORMAT_TAG:
                raise InvalidContext(
                    f"field {self.name!r}: unsupported date format {self.date_format!r}"
                )

    def to_document(self) -> dict:
        doc: dict = {"kind": self.kind, "required": self.required}
        if self.enum is not None:
            doc["enum"] = list(self.enum)
        if self.pattern is not None:
            doc["pattern"] = self.pattern
        if self.minimum is not None:
            doc["minimum"] = self.minimum
        if self.maximum is not None:
            doc["maximum"] = self.maximum
        if self.date_format is not None:
            doc["date_format"] = self.date_format
        return doc

    @classmethod
    def from_document(cls, name: str, doc: Any) -> "FieldSpec":
        if not isinstance(doc, dict) or "kind" not in doc:
            raise InvalidContext(f"field {name!r}: bad definition")
        enum = doc.get("enum")
        return cls(
            name=name,
            kind=doc["kind"],
            required=doc.get("required", True),
            enum=tuple(enum) if enum is not None else None,
            pattern=doc.get("pattern"),
            minimum=doc.get("minimum"),
            maximum=doc.get("maximum"),
            date_format=doc.get("date_format"),
        )


@dataclass(frozen=True)
class TaskDef:
    name: str
    params: dict  # param name -> FieldSpec, in declaration order

    def to_document(self) -> dict:
        return {"params": {n: s.to_document() for n, s in self.params.items()}}


@dataclass(frozen=True)
class ConceptDef:
    name: str
    properties: dict  # property name -> FieldSpec, in declaration order

    def to_document(self) -> dict:
        return {"properties": {n: s.to_document() for n, s in self.properties.items()}}


@dataclass(frozen=True)
class SharedContext:
    """A complete schema: tasks, shareable concepts, and alias tables.

    Aliases map (field name, surface string) to candidate enumeration values
    and drive protocol-level disambiguation; every candidate list must be a
    nonempty subset of the field's enumeration.  Task and concept names live
    in one namespace and must not collide.
    """

    urn: ContextUrn
    tasks: dict = field(default_factory=dict)
    concepts: dict = field(default_factory=dict)
    aliases: dict = field(default_factory=dict)  # (field, surface) -> tuple of values

    def __post_init__(self):
        overlap = set(self.tasks) & set(self.concepts)
        if overlap:
            raise InvalidContext(f"task/concept name collision: {sorted(overlap)}")
        normalized = {}
        for (field_name, surface), candidates in self.aliases.items():
            candidates = tuple(candidates)
            if not candidates:
                raise InvalidContext(f"alias {(field_name, surface)!r} is empty")
            specs = self._specs_named(field_name)
            if not specs:
                raise InvalidContext(
                    f"alias {(field_name, surface)!r} targets unknown field"
                )
            for spec in specs:
                if spec.enum is None or not set(candidates) <= set(spec.enum):
                    raise InvalidContext(
                        f"alias {(field_name, surface)!r} is not a subset of the "
                        f"enumeration of {field_name!r}"
                    )
            normalized[(field_name, surface)] = candidates
        object.__setattr__(self, "aliases", normalized)

    def _specs_named(self, field_name: str) -> list:
        found = []
        for task in self.tasks.values():
            if field_name in task.params:
                found.append(task.params[field_name])
        for concept in self.concepts.values():
            if field_name in concept.properties:
                found.append(concept.properties[field_name])
        return found

    def find_field(self, field_name: str) -> Optional[FieldSpec]:
        specs = self._specs_named(field_name)
        return specs[0] if specs else None

    def alias_candidates(self, field_name: str, surface: str) -> Optional[tuple]:
        return self.aliases.get((field_name, surface))

    def to_document(self) -> dict:
        alias_doc: dict = {}
        for (field_name, surface), candidates in sorted(self.aliases.items()):
            alias_doc.setdefault(field_name, {})[surface] = list(candidates)
        return {
            "urn": format_urn(self.urn),
            "tasks": {n: t.to_document() for n, t in self.tasks.items()},
            "concepts": {n: c.to_document() for n, c in self.concepts.items()},
            "aliases": alias_doc,
        }

    @classmethod
    def from_document(cls, doc: Any) -> "SharedContext":
        if not isinstance(doc, dict) or "urn" not in doc:
            raise InvalidContext("context document must be a map with a urn")
        urn = parse_urn(doc["urn"])
        tasks = {}
        for name, tdoc in (doc.get("tasks") or {}).items():
            params = {
                pname: FieldSpec.from_document(pname, pdoc)
                for pname, pdoc in (tdoc.get("params") or {}).items()
            }
            tasks[name] = TaskDef(name=name, params=params)
        concepts = {}
        for name, cdoc in (doc.get("concepts") or {}).items():
            props = {
                pname: FieldSpec.from_document(pname, pdoc)
                for pname, pdoc in (cdoc.get("properties") or {}).items()
            }
            concepts[name] = ConceptDef(name=name, properties=props)
        aliases = {}
        for field_name, table in (doc.get("aliases") or {}).items():
            for surface, candidates in table.items():
                aliases[(field_name, surface)] = tuple(candidates)
        return cls(urn=urn, tasks=tasks, concepts=concepts, aliases=aliases)


def context_hash(ctx: SharedContext) -> bytes:
    """SHA-256 of the canonical context document; the signing target."""
    return hashlib.sha256(canonicalize(ctx.to_document())).digest()


# ---------------------------------------------------------------------------
# Content validation
# ---------------------------------------------------------------------------

UNKNOWN_CONCEPT = "UnknownConcept"
MISSING_CONCEPT_TYPE = "MissingConceptType"
MISSING_REQUIRED_FIELD = "MissingRequiredField"
KIND_MISMATCH = "KindMismatch"
CONSTRAINT_VIOLATION = "ConstraintViolation"


@dataclass(frozen=True)
class Violation:
    path: str
    reason: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.path}: {self.reason}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.valid:
            return "Valid"
        return "Invalid: " + "; ".join(str(v) for v in self.violations)


def _kind_matches(kind: str, value: Any) -> bool:
    if kind == "string":
        return isinstance(value, str)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "object":
        return isinstance(value, dict)
    if kind == "list":
        return isinstance(value, list)
    return True  # reserved kinds accept anything


def _check_field(spec: FieldSpec, value: Any, path: str) -> list:
    if not _kind_matches(spec.kind, value):
        return [Violation(path, KIND_MISMATCH,
                          f"expected {spec.kind}, got {type(value).__name__}")]
    violations = []
    if spec.enum is not None and value not in spec.enum:
        violations.append(Violation(path, CONSTRAINT_VIOLATION,
                                    f"{value!r} not in enumeration"))
    if spec.pattern is not None and isinstance(value, str):
        if not re.search(spec.pattern, value):
            violations.append(Violation(path, CONSTRAINT_VIOLATION,
                                        f"{value!r} does not match {spec.pattern!r}"))
    if spec.minimum is not None and isinstance(value, (int, float)):
        if value < spec.minimum:
            violations.append(Violation(path, CONSTRAINT_VIOLATION,
                                        f"{value} below minimum {spec.minimum}"))
    if spec.maximum is not None and isinstance(value, (int, float)):
        if value > spec.maximum:
            violations.append(Violation(path, CONSTRAINT_VIOLATION,
                                        f"{value} above maximum {spec.maximum}"))
    if spec.date_format is not None and isinstance(value, str):
        try:
            datetime.strptime(value, "%Y-%m-%d")
        except ValueError:
            violations.append(Violation(path, CONSTRAINT_VIOLATION,
                                        f"{value!r} is not a yyyy-mm-dd date"))
    return violations


def _check_against_fields(fields: dict, values: dict, path: str) -> list:
    violations = []
    for name, spec in fields.items():
        if name not in values:
            if spec.required:
                violations.append(Violation(f"{path}.{name}", MISSING_REQUIRED_FIELD))
            continue
        violations.extend(_check_field(spec, values[name], f"{path}.{name}"))
    for name in values:
        if name not in fields:
            violations.append(Violation(f"{path}.{name}", CONSTRAINT_VIOLATION,
                                        "field is not defined"))
    return violations


def validate_content(ctx: SharedContext, content: Any) -> ValidationReport:
    """Validate a coordinative payload against the context's concepts.

    Every top-level entry must be a map carrying a `concept_type` naming a
    defined concept, and its remaining fields must satisfy that concept's
    property definitions.  An empty map is vacuously valid.
    """
    violations: list = []
    if not isinstance(content, dict):
        return ValidationReport((Violation("$", KIND_MISMATCH, "content must be a map"),))
    for entry_name in content:
        entry = content[entry_name]
        path = entry_name
        if not isinstance(entry, dict) or "concept_type" not in entry \
                or not isinstance(entry.get("concept_type"), str):
            violations.append(Violation(path, MISSING_CONCEPT_TYPE))
            continue
        concept_type = entry["concept_type"]
        concept = ctx.concepts.get(concept_type)
        if concept is None:
            violations.append(Violation(path, UNKNOWN_CONCEPT, concept_type))
            continue
        fields_only = {k: v for k, v in entry.items() if k != "concept_type"}
        violations.extend(_check_against_fields(concept.properties, fields_only, path))
    return ValidationReport(tuple(violations))


def validate_task_params(ctx: SharedContext, task: str, params: Any) -> ValidationReport:
    """Validate a task invocation's parameter map against its TaskDef."""
    taskdef = ctx.tasks.get(task)
    if taskdef is None:
        raise UnknownTask(f"task {task!r} not defined in {format_urn(ctx.urn)}")
    if not isinstance(params, dict):
        return ValidationReport((Violation("params", KIND_MISMATCH,
                                           "params must be a map"),))
    return ValidationReport(tuple(_check_against_fields(taskdef.params, params, "params")))


# ---------------------------------------------------------------------------
# Task grounding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Complete:
    bindings: dict


@dataclass(frozen=True)
class Ambiguous:
    param: str
    surface: str
    candidates: tuple


@dataclass(frozen=True)
class Missing:
    params: tuple


GroundingResult = Any  # Complete | Ambiguous | Missing


def ground_task(ctx: SharedContext, task: str, bindings: dict) -> GroundingResult:
    """Bind agent values to a task definition.

    Walks parameters in declaration order.  A string that misses its
    enumeration but has an alias entry resolves automatically when the alias
    has a single candidate and reports Ambiguous (first such parameter) when
    it has two or more.  After ambiguity checks, any required parameter left
    unbound, and any parameter whose bound value is unusable, is reported as
    Missing.  Complete bindings always validate cleanly against the task.
    """
    taskdef = ctx.tasks.get(task)
    if taskdef is None:
        raise UnknownTask(f"task {task!r} not defined in {format_urn(ctx.urn)}")
    for name in bindings:
        if name not in taskdef.params:
            raise UnknownParameter(f"task {task!r} has no parameter {name!r}")

    resolved: dict = {}
    unusable: list = []
    for name, spec in taskdef.params.items():
        if name not in bindings:
            continue
        value = bindings[name]
        problems = _check_field(spec, value, name)
        if not problems:
            resolved[name] = value
            continue
        misses_enum = (
            spec.enum is not None and isinstance(value, str) and value not in spec.enum
        )
        if misses_enum:
            candidates = ctx.alias_candidates(name, value)
            if candidates is not None:
                if len(candidates) == 1:
                    resolved[name] = candidates[0]
                    continue
                return Ambiguous(param=name, surface=value, candidates=candidates)
        unusable.append(name)

    missing = [
        name
        for name, spec in taskdef.params.items()
        if spec.required and name not in bindings
    ]
    gaps = tuple(missing + unusable)
    if gaps:
        return Missing(params=gaps)
    return Complete(bindings=resolved)
