"""Signing keys for parties and clients.

Ed25519 is the real scheme. ``hmac`` is a keyed-MAC stand-in for fast
simulation: its "public" key is the secret itself, so it only makes sense
inside a single trusted test process.
"""
from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

KEYS_FORMAT = "arma-keys/1"
CLIENT = -1


class SigningKey:
    def __init__(self, scheme: str, secret: bytes):
        self.scheme = scheme
        self._secret = secret
        if scheme == "ed25519":
            self._sk = Ed25519PrivateKey.from_private_bytes(secret)
            self.public = self._sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        elif scheme == "hmac":
            self._sk = None
            self.public = secret
        else:
            raise ValueError(f"unknown signature scheme {scheme!r}")

    @property
    def secret(self) -> bytes:
        return self._secret

    def sign(self, message: bytes) -> bytes:
        if self._sk is not None:
            return self._sk.sign(message)
        return hmac.new(self._secret, message, hashlib.sha256).digest()


def sign(key: SigningKey, message: bytes) -> bytes:
    return key.sign(message)


def verify(scheme: str, public: bytes, message: bytes, signature: bytes) -> bool:
    """Never raises on malformed input; returns False instead."""
    try:
        if scheme == "ed25519":
            Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
            return True
        if scheme == "hmac":
            expected = hmac.new(public, message, hashlib.sha256).digest()
            return hmac.compare_digest(expected, signature)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return False


def derive_secret(seed: int, who: int) -> bytes:
    return hashlib.sha256(b"arma-test-key" + seed.to_bytes(8, "big") +
                          who.to_bytes(4, "big", signed=True)).digest()


@dataclass(frozen=True)
class KeyRing:
    """Public verification material for every party plus the client authority."""
    scheme: str
    parties: tuple[bytes, ...]
    client: bytes

    def verify_party(self, party: int, message: bytes, signature: bytes) -> bool:
        if not 0 <= party < len(self.parties):
            return False
        return verify(self.scheme, self.parties[party], message, signature)

    def verify_client(self, message: bytes, signature: bytes) -> bool:
        return verify(self.scheme, self.client, message, signature)

    def to_json(self, f: int | None = None) -> str:
        doc = {"format": KEYS_FORMAT, "scheme": self.scheme,
               "parties": [p.hex() for p in self.parties], "client": self.client.hex()}
        if f is not None:
            doc["f"] = f
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "KeyRing":
        doc = json.loads(text)
        if doc.get("format") != KEYS_FORMAT:
            raise ValueError(f"unsupported key file format {doc.get('format')!r}")
        return cls(doc["scheme"], tuple(bytes.fromhex(p) for p in doc["parties"]),
                   bytes.fromhex(doc["client"]))


def deterministic_keys(seed: int, n_parties: int, scheme: str) -> tuple[list[SigningKey], SigningKey, KeyRing]:
    """Deterministic, test-only key material derived from ``seed``."""
    party_keys = [SigningKey(scheme, derive_secret(seed, i)) for i in range(n_parties)]
    client_key = SigningKey(scheme, derive_secret(seed, CLIENT))
    ring = KeyRing(scheme, tuple(k.public for k in party_keys), client_key.public)
    return party_keys, client_key, ring


def write_keys(directory: Path, party_keys, ring: KeyRing, f: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "public.json").write_text(ring.to_json(f))
    for i, key in enumerate(party_keys):
        (directory / f"party-{i}.secret").write_text(key.secret.hex() + "\n")


def load_public(directory: Path) -> tuple[KeyRing, int | None]:
    text = (Path(directory) / "public.json").read_text()
    return KeyRing.from_json(text), json.loads(text).get("f")
