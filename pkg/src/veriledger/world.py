"""A complete in-process deployment: chain, TEE, operator and clients.

Everything random is drawn from one seeded stream, so two worlds built with
the same arguments behave identically.
"""

from __future__ import annotations

from typing import Optional

from .chain import Chain
from .client import Client
from .crypto import PB, digest, keygen, seeded_entropy
from .enclave import AttestationService, EnclaveConfig, TeePlatform
from .operator import LogicalClock, Operator, OperatorConfig
from .vm import account_id


def filler_ids(count: int) -> list[bytes]:
    """Deterministic ids for background accounts that only pad the state."""
    return [digest(b"filler" + i.to_bytes(4, "big")) for i in range(count)]


class World:
    def __init__(
        self,
        seed: int | str = 0,
        clients: int = 2,
        balance: int = 1_000,
        filler: int = 0,
        filler_balance: int = 1,
        config: OperatorConfig = OperatorConfig(),
        delay: int = 0,
        store_dir: Optional[str] = None,
    ):
        self.seed = seed
        self.entropy = seeded_entropy(f"world/{seed}")
        self.chain = Chain(delay)
        self.attestation = AttestationService()
        self.platforms = [self._platform()]
        keys = [keygen(PB, self.entropy) for _ in range(clients)]
        alloc = [(account_id(k.public), balance) for k in keys]
        alloc += [(f, filler_balance) for f in filler_ids(filler)]
        self.enclave_config = EnclaveConfig(tuple(sorted(alloc)))
        self.clock = LogicalClock()
        self.operator = Operator(
            self.chain,
            self.platforms[0],
            config,
            self.enclave_config,
            self.clock,
            self.entropy,
            store_dir=store_dir,
        )
        self.contract_id = self.operator.init()
        self.measurement = self.enclave_config.measurement()
        self.clients = [
            Client(self.chain, self.contract_id, self.operator, self.attestation, self.measurement, k, self.entropy)
            for k in keys
        ]

    def _platform(self) -> TeePlatform:
        p = TeePlatform(f"tee-{len(getattr(self, 'platforms', []))}", self.entropy)
        self.attestation.register(p)
        return p

    @property
    def contract(self):
        return self.chain.contract(self.contract_id)

    def kill_enclave(self) -> None:
        self.operator.enclave.platform.fail()

    def restore(self):
        p = self._platform()
        self.platforms.append(p)
        return self.operator.restore_failed_enc(p)

    def advance(self, seconds: float) -> None:
        self.clock.advance(seconds)
        self.operator.tick()
