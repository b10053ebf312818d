"""Loaders for the context, key, policy and trust-store files shipped in data/."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .authority import (
    AuthorityIdentity,
    RevocationList,
    SignedContext,
    TrustStore,
    load_signing_key,
)
from .context import SharedContext, parse_urn

CONTEXT_FILES = {
    "urn:contexts:travel:v2.1": "contexts/travel_v2.1.json",
    "urn:contexts:supplyChain:v1.0": "contexts/supplychain_v1.0.json",
    "urn:contexts:payment:v1.0": "contexts/payment_v1.0.json",
    "urn:contexts:payment:v2.0": "contexts/payment_v2.0.json",
    "urn:contexts:snl-meta:v1.0": "contexts/snl-meta_v1.0.json",
}

POISONED_CONTEXT_FILE = "contexts/payment_v2.0_poisoned.json"

AUTHORITIES = (
    "agentwire-root",
    "travel-industry-alliance",
    "supply-chain-consortium",
    "payments-authority",
)


def data_path(relative: str) -> Path:
    return Path(str(resources.files("agentwire") / "data" / relative))


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_signed_context_file(path) -> SignedContext:
    return SignedContext.from_document(load_json(path))


def builtin_signed_context(urn_text: str) -> SignedContext:
    return load_signed_context_file(data_path(CONTEXT_FILES[urn_text]))


def builtin_context(urn_text: str) -> SharedContext:
    return builtin_signed_context(urn_text).context


def poisoned_signed_context() -> SignedContext:
    return load_signed_context_file(data_path(POISONED_CONTEXT_FILE))


def builtin_repo() -> dict:
    """All shipped signed contexts, keyed by ContextUrn."""
    repo = {}
    for urn_text in CONTEXT_FILES:
        sc = builtin_signed_context(urn_text)
        repo[parse_urn(urn_text)] = sc
    return repo


def builtin_seed(authority_id: str) -> bytes:
    text = data_path(f"keys/{authority_id}.key").read_text(encoding="utf-8").strip()
    return bytes.fromhex(text)


def builtin_signing_key(authority_id: str):
    return load_signing_key(builtin_seed(authority_id))


def load_trust_store_file(path) -> TrustStore:
    doc = load_json(path)
    store = TrustStore()
    for root in doc.get("roots", []):
        store.add_root(
            AuthorityIdentity(
                authority_id=root["authority_id"],
                verification_key=bytes.fromhex(root["verification_key"]),
            )
        )
    for rl_doc in doc.get("revocations", []):
        store.add_revocations(RevocationList.from_document(rl_doc))
    return store


def builtin_trust_store() -> TrustStore:
    return load_trust_store_file(data_path("truststore.json"))


def builtin_policy_path() -> Path:
    return data_path("policies/semantic_firewall.json")


def builtin_revocation_list() -> RevocationList:
    return RevocationList.from_document(load_json(data_path("revocations/payments_v1.json")))
