from typing import Any

import msgpack
from eth_utils.crypto import keccak
from eth_utils.conversions import to_hex

from lie_transport.utils.miscs import canonicalize


def pack_config(config: dict[str, Any]) -> bytes:
    data: bytes = msgpack.packb(canonicalize(config))  # type: ignore
    return data


def config_hash(config: dict[str, Any]) -> str:
    return to_hex(keccak(pack_config(config)))
