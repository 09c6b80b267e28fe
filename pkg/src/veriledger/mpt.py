"""Merkle-Patricia trie over 32-byte keys.

Keys are walked as 64 hex nibbles.  There are three node kinds (leaf,
extension, branch); every child is referenced by the SHA-256 digest of its
canonical encoding, never inlined.  Nodes live in a content-addressed store
(``digest -> encoding``), so a trie is just a store plus a root digest and
updates never mutate existing nodes.

Node encodings::

    leaf       0x01 | u8 len | hex-prefix(path, leaf)      | u32 len | value
    extension  0x02 | u8 len | hex-prefix(path, extension) | child digest
    branch     0x03 | u16 child bitmap | child digests...   | u8 has_value [| u32 len | value]

Hex-prefix puts a flag nibble first: bit 1 marks a leaf, bit 0 an odd path
length; even-length paths get a zero padding nibble after the flag.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, MutableMapping, Optional, Sequence, Union

from .crypto import DIGEST_SIZE, digest

KEY_SIZE = 32
EMPTY_ROOT = digest(b"")

Nibbles = tuple[int, ...]


class MptError(Exception):
    pass


class MissingNodeError(MptError, KeyError):
    """A node needed by the operation is not in the store (partial state too small)."""


class IntegrityError(MptError):
    """A stored encoding does not hash to the digest it is filed under."""


def key_nibbles(key: bytes) -> Nibbles:
    if len(key) != KEY_SIZE:
        raise ValueError(f"trie keys are {KEY_SIZE} bytes, got {len(key)}")
    out = []
    for b in key:
        out.append(b >> 4)
        out.append(b & 0x0F)
    return tuple(out)


def _hex_prefix(path: Nibbles, leaf: bool) -> bytes:
    flag = (2 if leaf else 0) + (len(path) % 2)
    nibs = (flag,) + path if len(path) % 2 else (flag, 0) + path
    return bytes(16 * nibs[i] + nibs[i + 1] for i in range(0, len(nibs), 2))


def _unhex_prefix(data: bytes) -> tuple[Nibbles, bool]:
    if not data:
        raise MptError("empty hex-prefix")
    nibs = []
    for b in data:
        nibs.append(b >> 4)
        nibs.append(b & 0x0F)
    flag = nibs[0]
    if flag > 3:
        raise MptError("bad hex-prefix flag")
    if flag % 2:
        path = nibs[1:]
    else:
        if nibs[1] != 0:
            raise MptError("bad hex-prefix padding")
        path = nibs[2:]
    return tuple(path), bool(flag & 2)


@dataclass(frozen=True)
class Leaf:
    path: Nibbles
    value: bytes

    def encode(self) -> bytes:
        hp = _hex_prefix(self.path, True)
        return b"\x01" + bytes([len(hp)]) + hp + struct.pack(">I", len(self.value)) + self.value


@dataclass(frozen=True)
class Extension:
    path: Nibbles
    child: bytes

    def encode(self) -> bytes:
        hp = _hex_prefix(self.path, False)
        return b"\x02" + bytes([len(hp)]) + hp + self.child


@dataclass(frozen=True)
class Branch:
    children: tuple[Optional[bytes], ...]
    value: Optional[bytes] = None

    def encode(self) -> bytes:
        bitmap = 0
        parts = []
        for i, c in enumerate(self.children):
            if c is not None:
                bitmap |= 1 << i
                parts.append(c)
        tail = b"\x00" if self.value is None else b"\x01" + struct.pack(">I", len(self.value)) + self.value
        return b"\x03" + struct.pack(">H", bitmap) + b"".join(parts) + tail

    def count(self) -> int:
        return sum(c is not None for c in self.children)


Node = Union[Leaf, Extension, Branch]


def decode_node(data: bytes) -> Node:
    try:
        kind = data[0]
        if kind in (1, 2):
            n = data[1]
            path, is_leaf = _unhex_prefix(data[2 : 2 + n])
            rest = data[2 + n :]
            if kind == 1:
                if not is_leaf:
                    raise MptError("leaf flag mismatch")
                (vlen,) = struct.unpack_from(">I", rest)
                if len(rest) != 4 + vlen:
                    raise MptError("leaf length mismatch")
                return Leaf(path, rest[4:])
            if is_leaf or len(rest) != DIGEST_SIZE or not path:
                raise MptError("malformed extension")
            return Extension(path, rest)
        if kind == 3:
            (bitmap,) = struct.unpack_from(">H", data, 1)
            pos = 3
            children: list[Optional[bytes]] = []
            for i in range(16):
                if bitmap >> i & 1:
                    children.append(data[pos : pos + DIGEST_SIZE])
                    pos += DIGEST_SIZE
                else:
                    children.append(None)
            flag = data[pos]
            value = None
            if flag == 1:
                (vlen,) = struct.unpack_from(">I", data, pos + 1)
                value = data[pos + 5 : pos + 5 + vlen]
                pos += 5 + vlen
            elif flag != 0:
                raise MptError("bad branch value flag")
            else:
                pos += 1
            if pos != len(data) or any(c is not None and len(c) != DIGEST_SIZE for c in children):
                raise MptError("branch length mismatch")
            return Branch(tuple(children), value)
    except (IndexError, struct.error) as exc:
        raise MptError("truncated node") from exc
    raise MptError(f"unknown node kind {data[:1]!r}")


def _common_prefix(a: Nibbles, b: Nibbles) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


class NodeStore:
    """Content-addressed node storage over any ``digest -> encoding`` mapping."""

    def __init__(self, backing: Optional[MutableMapping[bytes, bytes]] = None):
        self.backing: MutableMapping[bytes, bytes] = {} if backing is None else backing
        self._cache: dict[bytes, Node] = {}

    def get(self, ref: bytes) -> Node:
        node = self._cache.get(ref)
        if node is None:
            try:
                raw = self.backing[ref]
            except KeyError:
                raise MissingNodeError(ref.hex()) from None
            node = decode_node(raw)
            self._cache[ref] = node
        return node

    def raw(self, ref: bytes) -> bytes:
        try:
            return self.backing[ref]
        except KeyError:
            raise MissingNodeError(ref.hex()) from None

    def put(self, node: Node) -> bytes:
        enc = node.encode()
        ref = digest(enc)
        if ref not in self.backing:
            self.backing[ref] = enc
        self._cache[ref] = node
        return ref

    def __contains__(self, ref: bytes) -> bool:
        return ref in self.backing


@dataclass(frozen=True)
class MptProof:
    nodes: tuple[bytes, ...]
    inclusion: bool

    def _walk(self, key: bytes, root: bytes) -> tuple[bool, Optional[bytes]]:
        """Follow ``key`` through the proof; return ``(ok, value_or_None)``."""
        path = key_nibbles(key)
        if root == EMPTY_ROOT:
            return (not self.nodes), None
        expected = root
        pos = 0
        for i, raw in enumerate(self.nodes):
            if digest(raw) != expected:
                return False, None
            node = decode_node(raw)
            last = i == len(self.nodes) - 1
            if isinstance(node, Leaf):
                if not last:
                    return False, None
                return True, node.value if node.path == path[pos:] else None
            if isinstance(node, Extension):
                n = len(node.path)
                if path[pos : pos + n] != node.path:
                    return last, None
                expected, pos = node.child, pos + n
            else:
                if pos == len(path):
                    return last, node.value
                child = node.children[path[pos]]
                if child is None:
                    return last, None
                expected, pos = child, pos + 1
            if last:
                return False, None
        return False, None

    def verify(self, key: bytes, root: bytes, value: Optional[bytes] = None) -> bool:
        """Inclusion check; when ``value`` is given it must match too."""
        if not self.inclusion:
            return False
        try:
            ok, found = self._walk(key, root)
        except (MptError, ValueError):
            return False
        if not ok or found is None:
            return False
        return value is None or found == value

    def verify_neg(self, key: bytes, root: bytes) -> bool:
        if self.inclusion:
            return False
        try:
            ok, found = self._walk(key, root)
        except (MptError, ValueError):
            return False
        return ok and found is None

    def value(self) -> Optional[bytes]:
        if not self.inclusion or not self.nodes:
            return None
        node = decode_node(self.nodes[-1])
        return node.value if isinstance(node, (Leaf, Branch)) else None


class Trie:
    def __init__(self, store: Optional[NodeStore] = None, root: bytes = EMPTY_ROOT):
        self.store = store if store is not None else NodeStore()
        self.root = root

    # -- reads -------------------------------------------------------------

    def get(self, key: bytes) -> Optional[bytes]:
        path = key_nibbles(key)
        if self.root == EMPTY_ROOT:
            return None
        ref, pos = self.root, 0
        while True:
            node = self.store.get(ref)
            if isinstance(node, Leaf):
                return node.value if node.path == path[pos:] else None
            if isinstance(node, Extension):
                n = len(node.path)
                if path[pos : pos + n] != node.path:
                    return None
                ref, pos = node.child, pos + n
            else:
                if pos == len(path):
                    return node.value
                child = node.children[path[pos]]
                if child is None:
                    return None
                ref, pos = child, pos + 1

    def prove(self, key: bytes) -> MptProof:
        path = key_nibbles(key)
        if self.root == EMPTY_ROOT:
            return MptProof((), False)
        nodes = []
        ref, pos = self.root, 0
        while True:
            nodes.append(self.store.raw(ref))
            node = self.store.get(ref)
            if isinstance(node, Leaf):
                return MptProof(tuple(nodes), node.path == path[pos:])
            if isinstance(node, Extension):
                n = len(node.path)
                if path[pos : pos + n] != node.path:
                    return MptProof(tuple(nodes), False)
                ref, pos = node.child, pos + n
            else:
                child = node.children[path[pos]]
                if child is None:
                    return MptProof(tuple(nodes), False)
                ref, pos = child, pos + 1

    def items(self) -> Iterator[tuple[bytes, bytes]]:
        """All ``(key, value)`` pairs in key order."""
        if self.root == EMPTY_ROOT:
            return

        def walk(ref: bytes, prefix: Nibbles) -> Iterator[tuple[Nibbles, bytes]]:
            node = self.store.get(ref)
            if isinstance(node, Leaf):
                yield prefix + node.path, node.value
            elif isinstance(node, Extension):
                yield from walk(node.child, prefix + node.path)
            else:
                if node.value is not None:
                    yield prefix, node.value
                for i, c in enumerate(node.children):
                    if c is not None:
                        yield from walk(c, prefix + (i,))

        for nibs, value in walk(self.root, ()):
            yield bytes(16 * nibs[i] + nibs[i + 1] for i in range(0, len(nibs), 2)), value

    def __len__(self) -> int:
        return sum(1 for _ in self.items())

    # -- writes ------------------------------------------------------------

    def put(self, key: bytes, value: bytes) -> bytes:
        path = key_nibbles(key)
        root = None if self.root == EMPTY_ROOT else self.root
        self.root = self._put(root, path, bytes(value))
        return self.root

    def _put(self, ref: Optional[bytes], path: Nibbles, value: bytes) -> bytes:
        st = self.store
        if ref is None:
            return st.put(Leaf(path, value))
        node = st.get(ref)
        if isinstance(node, Leaf):
            if node.path == path:
                return st.put(Leaf(path, value))
            n = _common_prefix(node.path, path)
            children: list[Optional[bytes]] = [None] * 16
            children[node.path[n]] = st.put(Leaf(node.path[n + 1 :], node.value))
            children[path[n]] = st.put(Leaf(path[n + 1 :], value))
            branch = st.put(Branch(tuple(children)))
            return st.put(Extension(path[:n], branch)) if n else branch
        if isinstance(node, Extension):
            n = _common_prefix(node.path, path)
            if n == len(node.path):
                return st.put(Extension(node.path, self._put(node.child, path[n:], value)))
            children = [None] * 16
            rest = node.path[n + 1 :]
            children[node.path[n]] = st.put(Extension(rest, node.child)) if rest else node.child
            children[path[n]] = st.put(Leaf(path[n + 1 :], value))
            branch = st.put(Branch(tuple(children)))
            return st.put(Extension(path[:n], branch)) if n else branch
        if not path:
            return st.put(Branch(node.children, value))
        children = list(node.children)
        children[path[0]] = self._put(children[path[0]], path[1:], value)
        return st.put(Branch(tuple(children), node.value))

    def delete(self, key: bytes) -> bool:
        path = key_nibbles(key)
        if self.root == EMPTY_ROOT:
            return False
        new, found = self._delete(self.root, path)
        if found:
            self.root = EMPTY_ROOT if new is None else new
        return found

    def _merge(self, prefix: Nibbles, ref: bytes) -> bytes:
        """Node equivalent to ``prefix`` followed by the node at ``ref``."""
        st = self.store
        node = st.get(ref)
        if isinstance(node, Leaf):
            return st.put(Leaf(prefix + node.path, node.value))
        if isinstance(node, Extension):
            return st.put(Extension(prefix + node.path, node.child))
        return st.put(Extension(prefix, ref)) if prefix else ref

    def _delete(self, ref: bytes, path: Nibbles) -> tuple[Optional[bytes], bool]:
        st = self.store
        node = st.get(ref)
        if isinstance(node, Leaf):
            return (None, True) if node.path == path else (ref, False)
        if isinstance(node, Extension):
            n = len(node.path)
            if path[:n] != node.path:
                return ref, False
            child, found = self._delete(node.child, path[n:])
            if not found:
                return ref, False
            if child is None:
                return None, True
            return self._merge(node.path, child), True
        if not path:
            if node.value is None:
                return ref, False
            children, value = list(node.children), None
        else:
            sub = node.children[path[0]]
            if sub is None:
                return ref, False
            new_sub, found = self._delete(sub, path[1:])
            if not found:
                return ref, False
            children = list(node.children)
            children[path[0]] = new_sub
            value = node.value
        remaining = [i for i, c in enumerate(children) if c is not None]
        if not remaining and value is None:
            return None, True
        if len(remaining) == 1 and value is None:
            i = remaining[0]
            return self._merge((i,), children[i]), True
        if not remaining:
            return st.put(Leaf((), value)), True
        return st.put(Branch(tuple(children), value)), True

    # -- partial state -----------------------------------------------------

    def extract(self, keys: Iterable[bytes]) -> "PartialState":
        return extract_partial_state(self, keys)

    def merge(self, ps: "PartialState") -> None:
        """Adopt the nodes and root of a partial state derived from this trie."""
        for ref, raw in ps.nodes.items():
            if ref not in self.store:
                self.store.backing[ref] = raw
        self.root = ps.root


@dataclass
class PartialState:
    """A subset of trie nodes sufficient to read and write ``keys``."""

    nodes: dict[bytes, bytes]
    root: bytes
    keys: tuple[bytes, ...] = ()

    def verify(self) -> bytes:
        """Check every node against its digest; return the root.

        Raises :class:`IntegrityError` on any mismatch or a missing root node.
        """
        for ref, raw in self.nodes.items():
            if digest(raw) != ref:
                raise IntegrityError(f"node {ref.hex()[:16]} does not match its digest")
        if self.root != EMPTY_ROOT and self.root not in self.nodes:
            raise IntegrityError("root node missing from partial state")
        return self.root

    def trie(self) -> Trie:
        """A working trie over a private copy of the node set."""
        return Trie(NodeStore(dict(self.nodes)), self.root)

    def size(self) -> int:
        return len(self.nodes)

    def byte_size(self) -> int:
        return sum(len(v) for v in self.nodes.values())


def extract_partial_state(trie: Trie, keys: Iterable[bytes]) -> PartialState:
    """Nodes on the path of every key, plus branch siblings deletions may need.

    For absent keys the path up to the point of divergence is included, which
    is enough to prove exclusion and to insert.  A branch on the path whose
    surviving children could drop to one if every requested key below it were
    deleted also contributes its other children, so collapsing it can be done
    without the rest of the trie.
    """
    key_list = sorted(set(keys))
    nodes: dict[bytes, bytes] = {}
    if trie.root == EMPTY_ROOT:
        return PartialState(nodes, EMPTY_ROOT, tuple(key_list))
    st = trie.store

    def collect(ref: bytes, paths: Sequence[Nibbles]) -> None:
        nodes[ref] = st.raw(ref)
        if not paths:
            return
        node = st.get(ref)
        if isinstance(node, Leaf):
            return
        if isinstance(node, Extension):
            n = len(node.path)
            below = [p[n:] for p in paths if p[:n] == node.path]
            if below:
                collect(node.child, below)
            return
        groups: dict[int, list[Nibbles]] = {}
        for p in paths:
            if p:
                groups.setdefault(p[0], []).append(p[1:])
        for i, sub in groups.items():
            if node.children[i] is not None:
                collect(node.children[i], sub)
        if node.count() - 1 <= len(paths):
            for c in node.children:
                if c is not None and c not in nodes:
                    nodes[c] = st.raw(c)

    collect(trie.root, [key_nibbles(k) for k in key_list])
    return PartialState(nodes, trie.root, tuple(key_list))


def partial_apply(ps: PartialState, writes: Iterable[tuple[bytes, Optional[bytes]]]) -> bytes:
    """Apply ``(key, value)`` writes (``None`` deletes) and return the new root."""
    ps.verify()
    t = ps.trie()
    for key, value in writes:
        if value is None:
            t.delete(key)
        else:
            t.put(key, value)
    return t.root


def build_trie(items: Iterable[tuple[bytes, bytes]], store: Optional[NodeStore] = None) -> Trie:
    t = Trie(store)
    for k, v in items:
        t.put(k, v)
    return t
