#!/usr/bin/env python3
"""Regenerate the shipped data files and conformance fixtures.

Run from the repository root:  python tools/gen_fixtures.py

Hashes and golden frames are produced by the independent oracle serializer
in tests/oracles.py, and signatures by a direct cryptography call, so none
of the generated expectations depend on the package's own codec.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from oracles import oracle_canonical_bytes, oracle_frame, oracle_sha256  # noqa: E402

DATA = ROOT / "src" / "agentwire" / "data"
FIXTURES = ROOT / "fixtures"

AIRPORTS = ["ATL", "BOS", "DEN", "DFW", "EWR", "JFK", "LAX", "LGA", "MIA", "ORD", "SEA", "SFO"]

CONTEXT_DOCS = {
    "travel_v2.1.json": {
        "urn": "urn:contexts:travel:v2.1",
        "tasks": {
            "bookFlight": {
                "params": {
                    "origin_code": {"kind": "string", "required": True, "enum": AIRPORTS},
                    "dest_code": {"kind": "string", "required": True, "enum": AIRPORTS},
                    "date": {"kind": "string", "required": True, "date_format": "yyyy-mm-dd"},
                    "cabin_class": {
                        "kind": "string",
                        "required": False,
                        "enum": ["economy", "premium", "business", "first"],
                    },
                }
            },
            "cancelBooking": {
                "params": {
                    "booking_ref": {
                        "kind": "string",
                        "required": True,
                        "pattern": "^BK-[0-9]{6}$",
                    },
                }
            },
        },
        "concepts": {},
        "aliases": {
            "dest_code": {
                "New York": ["JFK", "LGA", "EWR"],
                "Chicago": ["ORD"],
                "San Francisco": ["SFO"],
            },
            "origin_code": {
                "Los Angeles": ["LAX"],
                "New York": ["JFK", "LGA", "EWR"],
            },
        },
    },
    "supplychain_v1.0.json": {
        "urn": "urn:contexts:supplyChain:v1.0",
        "tasks": {},
        "concepts": {
            "current_decision": {
                "properties": {
                    "item_id": {"kind": "string", "required": True},
                    "quantity": {"kind": "integer", "required": True, "minimum": 0},
                }
            },
            "decision_contingency": {
                "properties": {
                    "if_condition_text": {"kind": "string", "required": True},
                    "then_change_text": {"kind": "string", "required": True},
                }
            },
            "local_observation": {
                "properties": {
                    "observed_fact_text": {"kind": "string", "required": True},
                    "confidence_score": {
                        "kind": "number",
                        "required": True,
                        "minimum": 0,
                        "maximum": 1,
                    },
                }
            },
        },
        "aliases": {},
    },
    "payment_v1.0.json": {
        "urn": "urn:contexts:payment:v1.0",
        "tasks": {
            "transferFunds": {
                "params": {
                    "sender_id": {
                        "kind": "string",
                        "required": True,
                        "pattern": "^payer:[a-z0-9-]+$",
                    },
                    "receiver_id": {
                        "kind": "string",
                        "required": True,
                        "pattern": "^payee:[a-z0-9-]+$",
                    },
                    "amount": {"kind": "number", "required": True, "minimum": 0},
                    "currency": {
                        "kind": "string",
                        "required": True,
                        "enum": ["USD", "EUR", "GBP"],
                    },
                    "memo": {"kind": "string", "required": False},
                }
            },
        },
        "concepts": {},
        "aliases": {},
    },
    "snl-meta_v1.0.json": {
        "urn": "urn:contexts:snl-meta:v1.0",
        "tasks": {},
        "concepts": {
            "ambiguous_parameter": {
                "properties": {
                    "parameter": {"kind": "string", "required": True},
                    "value": {"kind": "string", "required": True},
                }
            },
            "parameter_options": {
                "properties": {
                    "parameter": {"kind": "string", "required": True},
                    "options": {"kind": "list", "required": True},
                }
            },
        },
        "aliases": {},
    },
}

# v2.0 adds a required idempotency token; that is the breaking change that
# motivates refusing to fall back to v1.0.
payment_v2 = json.loads(json.dumps(CONTEXT_DOCS["payment_v1.0.json"]))
payment_v2["urn"] = "urn:contexts:payment:v2.0"
payment_v2["tasks"]["transferFunds"]["params"]["transfer_id"] = {
    "kind": "string",
    "required": True,
    "pattern": "^tx-[0-9a-f]{16}$",
}
CONTEXT_DOCS["payment_v2.0.json"] = payment_v2

AUTHORITY_FOR = {
    "travel_v2.1.json": "travel-industry-alliance",
    "supplychain_v1.0.json": "supply-chain-consortium",
    "payment_v1.0.json": "payments-authority",
    "payment_v2.0.json": "payments-authority",
    "snl-meta_v1.0.json": "agentwire-root",
}

POLICY_DOC = {
    "default_effect": "allow",
    "rules": [
        {
            "type": "concept_auth",
            "id": "retailer-contingency",
            "agent_pattern": "Retailer-*",
            "concept": "decision_contingency",
            "effect": "allow",
        },
        {
            "type": "concept_auth",
            "id": "webapp-contingency",
            "agent_pattern": "Public-WebApp-*",
            "concept": "decision_contingency",
            "effect": "deny",
        },
        {
            "type": "rate_limit",
            "id": "sdos-guard",
            "agent_pattern": "*",
            "concept": "ambiguous_parameter",
            "max_count": 10,
            "window_ms": 60000,
        },
        {
            "type": "value_constraint",
            "id": "high-value-transfer",
            "domain": "payment",
            "field_path": "params.amount",
            "comparator": ">",
            "threshold": 10000,
            "required_credential": "high-value-authorized",
        },
    ],
    "signatures": [
        {
            "id": "injection-001",
            "pattern": "ignore all previous instructions",
            "kind": "substring",
        }
    ],
}


def seed_for(authority_id: str) -> bytes:
    return hashlib.sha256(authority_id.encode("utf-8")).digest()


def key_for(authority_id: str) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed_for(authority_id))


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def main() -> None:
    authorities = sorted(set(AUTHORITY_FOR.values()))
    for authority_id in authorities:
        (DATA / "keys").mkdir(parents=True, exist_ok=True)
        (DATA / "keys" / f"{authority_id}.key").write_text(
            seed_for(authority_id).hex() + "\n", encoding="utf-8"
        )

    hash_lines = []
    for filename, doc in CONTEXT_DOCS.items():
        authority_id = AUTHORITY_FOR[filename]
        digest = oracle_sha256(doc)
        signature = key_for(authority_id).sign(digest)
        signed = dict(doc)
        signed["authority_id"] = authority_id
        signed["signature"] = signature.hex()
        write_json(DATA / "contexts" / filename, signed)
        hash_lines.append(f"{doc['urn']} {digest.hex()}")

    # Poisoned variant: payer/payee definitions swapped, original signature.
    poisoned = json.loads(json.dumps(CONTEXT_DOCS["payment_v2.0.json"]))
    params = poisoned["tasks"]["transferFunds"]["params"]
    params["sender_id"], params["receiver_id"] = params["receiver_id"], params["sender_id"]
    original = json.loads((DATA / "contexts" / "payment_v2.0.json").read_text("utf-8"))
    poisoned["authority_id"] = original["authority_id"]
    poisoned["signature"] = original["signature"]
    write_json(DATA / "contexts" / "payment_v2.0_poisoned.json", poisoned)

    store_doc = {
        "roots": [
            {
                "authority_id": authority_id,
                "verification_key": key_for(authority_id)
                .public_key()
                .public_bytes(Encoding.Raw, PublicFormat.Raw)
                .hex(),
            }
            for authority_id in authorities
        ],
        "revocations": [],
    }
    write_json(DATA / "truststore.json", store_doc)

    revocation_payload = {
        "authority_id": "payments-authority",
        "issued_at": 0,
        "revoked": ["urn:contexts:payment:v1.0"],
    }
    revocation_doc = dict(revocation_payload)
    revocation_doc["signature"] = (
        key_for("payments-authority")
        .sign(oracle_canonical_bytes(revocation_payload))
        .hex()
    )
    write_json(DATA / "revocations" / "payments_v1.json", revocation_doc)

    write_json(DATA / "policies" / "semantic_firewall.json", POLICY_DOC)

    (FIXTURES / "context").mkdir(parents=True, exist_ok=True)
    (FIXTURES / "context" / "hashes.txt").write_text(
        "\n".join(sorted(hash_lines)) + "\n", encoding="utf-8"
    )

    (FIXTURES / "wire").mkdir(parents=True, exist_ok=True)
    book_flight = {
        "protocol_version": "A2A/1.0",
        "message_id": "m-0001",
        "conversation_id": "agent-travel-7/m-0001",
        "sender_id": "agent-travel-7",
        "receiver_ids": ["agent-booking-4"],
        "performative": "REQUEST",
        "content": {
            "task": "book_flight",
            "prompt": "I need a flight to New York for next Tuesday.",
        },
        "timestamp": 0,
    }
    (FIXTURES / "wire" / "book_flight_request.bin").write_bytes(oracle_frame(book_flight))
    minimal_inform = {
        "protocol_version": "A2A/1.0",
        "message_id": "m-0001",
        "conversation_id": "agent-b/m-0001",
        "sender_id": "agent-b",
        "receiver_ids": ["agent-c"],
        "performative": "INFORM",
        "content": {},
        "timestamp": 0,
    }
    (FIXTURES / "wire" / "minimal_inform.bin").write_bytes(oracle_frame(minimal_inform))

    print(f"wrote {len(CONTEXT_DOCS)} contexts, trust store, policies, fixtures")


if __name__ == "__main__":
    main()
