"""Schema authority toolchain: signing, verification, revocation, versioning.

Contexts are only trusted when their canonical bytes carry a valid Ed25519
signature from an authority present in the local trust store and the URN is
not on that authority's revocation list.  Key files hold raw 32-byte seeds,
hex encoded; Ed25519 keeps signatures deterministic, which keeps fixtures
stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .context import (
    ContextUrn,
    SharedContext,
    context_hash,
    format_urn,
    parse_urn,
)
from .wire import canonicalize

# Simulated milliseconds after which a revocation list is considered stale.
REVOCATION_MAX_AGE_MS = 24 * 60 * 60 * 1000


class VerificationError(Exception):
    """Base class for signature/trust failures."""


class UntrustedAuthority(VerificationError):
    pass


class BadSignature(VerificationError):
    pass


class Revoked(VerificationError):
    pass


class StaleRevocation(VerificationError):
    pass


class DomainMismatch(Exception):
    pass


# ---------------------------------------------------------------------------
# Keys and identities
# ---------------------------------------------------------------------------

def load_signing_key(seed: bytes) -> Ed25519PrivateKey:
    if len(seed) != 32:
        raise ValueError("signing seed must be exactly 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed)


def verification_key_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass(frozen=True)
class AuthorityIdentity:
    authority_id: str
    verification_key: bytes  # raw Ed25519 public key, 32 bytes

    def public_key(self) -> Ed25519PublicKey:
        return Ed25519PublicKey.from_public_bytes(self.verification_key)


@dataclass(frozen=True)
class SignedContext:
    context: SharedContext
    authority_id: str
    signature: bytes  # Ed25519 over context_hash(context)

    @property
    def urn(self) -> ContextUrn:
        return self.context.urn

    def to_document(self) -> dict:
        doc = self.context.to_document()
        doc["authority_id"] = self.authority_id
        doc["signature"] = self.signature.hex()
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> "SignedContext":
        body = {k: v for k, v in doc.items() if k not in ("authority_id", "signature")}
        return cls(
            context=SharedContext.from_document(body),
            authority_id=doc["authority_id"],
            signature=bytes.fromhex(doc["signature"]),
        )


@dataclass(frozen=True)
class RevocationList:
    authority_id: str
    issued_at: int  # simulated ms
    revoked: frozenset  # of ContextUrn
    signature: bytes

    def payload(self) -> dict:
        return revocation_payload(self.authority_id, self.issued_at, self.revoked)

    def to_document(self) -> dict:
        doc = self.payload()
        doc["signature"] = self.signature.hex()
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> "RevocationList":
        return cls(
            authority_id=doc["authority_id"],
            issued_at=doc["issued_at"],
            revoked=frozenset(parse_urn(u) for u in doc["revoked"]),
            signature=bytes.fromhex(doc["signature"]),
        )


def revocation_payload(authority_id: str, issued_at: int, revoked) -> dict:
    return {
        "authority_id": authority_id,
        "issued_at": issued_at,
        "revoked": sorted(format_urn(u) for u in revoked),
    }


@dataclass
class TrustStore:
    roots: dict = field(default_factory=dict)          # authority_id -> AuthorityIdentity
    revocations: dict = field(default_factory=dict)    # authority_id -> RevocationList

    def add_root(self, identity: AuthorityIdentity) -> None:
        self.roots[identity.authority_id] = identity

    def add_revocations(self, rl: RevocationList) -> None:
        """Install a revocation list after checking its own signature."""
        identity = self.roots.get(rl.authority_id)
        if identity is None:
            raise UntrustedAuthority(f"no root for {rl.authority_id!r}")
        try:
            identity.public_key().verify(rl.signature, canonicalize(rl.payload()))
        except InvalidSignature:
            raise BadSignature("revocation list signature invalid") from None
        self.revocations[rl.authority_id] = rl


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def sign_context(
    ctx: SharedContext, signing_key: Ed25519PrivateKey, authority_id: str
) -> SignedContext:
    signature = signing_key.sign(context_hash(ctx))
    return SignedContext(context=ctx, authority_id=authority_id, signature=signature)


def sign_revocations(
    signing_key: Ed25519PrivateKey, authority_id: str, issued_at: int, revoked
) -> RevocationList:
    revoked = frozenset(revoked)
    payload = revocation_payload(authority_id, issued_at, revoked)
    return RevocationList(
        authority_id=authority_id,
        issued_at=issued_at,
        revoked=revoked,
        signature=signing_key.sign(canonicalize(payload)),
    )


def verify_signed_context(
    store: TrustStore, sc: SignedContext, now_ms: Optional[int] = None
) -> None:
    """Raise unless the signed context is trustworthy.

    Checks, in order: the named authority is a trust root, the signature
    covers the context's canonical hash, the URN is not revoked.  When
    `now_ms` is given, a revocation list older than 24 simulated hours makes
    verification fail with StaleRevocation rather than silently passing.
    """
    identity = store.roots.get(sc.authority_id)
    if identity is None:
        raise UntrustedAuthority(f"authority {sc.authority_id!r} not in trust store")
    try:
        identity.public_key().verify(sc.signature, context_hash(sc.context))
    except InvalidSignature:
        raise BadSignature(
            f"signature on {format_urn(sc.urn)} does not match its content"
        ) from None
    rl = store.revocations.get(sc.authority_id)
    if rl is not None:
        if now_ms is not None and now_ms - rl.issued_at > REVOCATION_MAX_AGE_MS:
            raise StaleRevocation(
                f"revocation list for {sc.authority_id!r} is older than 24h"
            )
        if sc.urn in rl.revoked:
            raise Revoked(f"{format_urn(sc.urn)} has been revoked")


COMPATIBLE = "Compatible"
BREAKING = "Breaking"


def _fields_only_add_optional(old_fields: dict, new_fields: dict) -> bool:
    for name, spec in old_fields.items():
        if new_fields.get(name) != spec:
            return False
    for name, spec in new_fields.items():
        if name not in old_fields and spec.required:
            return False
    return True


def check_version_compat(old: SharedContext, new: SharedContext) -> str:
    """Structural diff: Compatible iff `new` only adds optional surface.

    Additions allowed: whole tasks or concepts, optional params/properties on
    existing ones, and new alias keys.  Any removal, any change to an
    existing field spec or alias entry, and any required addition is
    Breaking and requires a major version bump.
    """
    if old.urn.domain != new.urn.domain:
        raise DomainMismatch(f"{old.urn.domain!r} vs {new.urn.domain!r}")
    for name, task in old.tasks.items():
        new_task = new.tasks.get(name)
        if new_task is None or not _fields_only_add_optional(task.params, new_task.params):
            return BREAKING
    for name, concept in old.concepts.items():
        new_concept = new.concepts.get(name)
        if new_concept is None or not _fields_only_add_optional(
            concept.properties, new_concept.properties
        ):
            return BREAKING
    for key, candidates in old.aliases.items():
        if new.aliases.get(key) != candidates:
            return BREAKING
    return COMPATIBLE
