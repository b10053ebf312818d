"""agentwire: agent communication and semantic negotiation protocol stack.

Layers, bottom up:

- wire        message envelopes, performatives, interaction patterns
- context     versioned shared-context schemas, validation, grounding
- authority   context signing, trust stores, revocation
- snl         semantic negotiation: handshake, grounding, validation
- firewall    concept authorization, rate limiting, injection scanning
- simnet      deterministic discrete-event network with attack adversaries
- scenarios   runnable demos and attack drills, also used as integration tests
"""

__version__ = "0.1.0"
