from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import DataError, DimensionError

AttributeSpec = Union[Mapping[str, Optional[str]], Iterable[Tuple[str, Optional[str]]]]


@dataclass(frozen=True)
class AttributeGroup:
    name: str
    attributes: Tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class AttributeSchema:
    """
    Ordered attribute groups. The binary layout of every person category is the
    concatenation of one one-hot slice per group, in declaration order.
    """
    groups: Tuple[AttributeGroup, ...]
    _offsets: Tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        problems = []
        if not self.groups:
            problems.append("schema declares no groups")
        seen_groups = set()
        for group in self.groups:
            if group.name in seen_groups:
                problems.append(f"duplicate group name '{group.name}'")
            seen_groups.add(group.name)
            if group.size < 2:
                problems.append(f"group '{group.name}' has {group.size} attribute(s), needs at least 2")
            if len(set(group.attributes)) != group.size:
                problems.append(f"group '{group.name}' repeats an attribute name")
        if problems:
            raise DataError("Invalid attribute schema", problems)

        offsets, start = [], 0
        for group in self.groups:
            offsets.append(start)
            start += group.size
        object.__setattr__(self, "_offsets", tuple(offsets))

    @classmethod
    def from_dict(cls, document: dict) -> "AttributeSchema":
        if not isinstance(document, dict) or not isinstance(document.get("groups"), list):
            raise DataError("Schema document needs a top-level 'groups' array")
        groups = []
        for i, entry in enumerate(document["groups"]):
            if not isinstance(entry, dict) or "name" not in entry or "attributes" not in entry:
                raise DataError(f"Schema group #{i} needs 'name' and 'attributes'")
            groups.append(AttributeGroup(str(entry["name"]), tuple(str(a) for a in entry["attributes"])))
        return cls(tuple(groups))

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], prefix: str = "g") -> "AttributeSchema":
        """Toy schema with generated names: group 'g0' holds 'g0_a0', 'g0_a1', ..."""
        return cls(tuple(
            AttributeGroup(f"{prefix}{i}", tuple(f"{prefix}{i}_a{j}" for j in range(size)))
            for i, size in enumerate(sizes)
        ))

    def to_dict(self) -> dict:
        return {"groups": [{"name": g.name, "attributes": list(g.attributes)} for g in self.groups]}

    @property
    def d_pc(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def group_sizes(self) -> Tuple[int, ...]:
        return tuple(g.size for g in self.groups)

    @property
    def group_names(self) -> Tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def group_slice(self, index: int) -> slice:
        start = self._offsets[index]
        return slice(start, start + self.groups[index].size)

    def group_index(self, name: str) -> int:
        for i, group in enumerate(self.groups):
            if group.name == name:
                return i
        raise DataError(f"Unknown attribute group '{name}'")

    def bit_labels(self) -> List[Tuple[str, str]]:
        """(group, attribute) for every bit position."""
        return [(g.name, a) for g in self.groups for a in g.attributes]

    def bit_groups(self) -> np.ndarray:
        """Group index of every bit position."""
        return np.repeat(np.arange(self.n_groups), self.group_sizes)

    def check_bits(self, bits: np.ndarray, allow_blanks: bool = False) -> List[str]:
        """Problems with a bit pattern; empty list when valid."""
        bits = np.asarray(bits)
        if bits.ndim != 1 or bits.shape[0] != self.d_pc:
            return [f"expected a vector of length {self.d_pc}, got shape {bits.shape}"]
        if not np.all((bits == 0) | (bits == 1)):
            return ["entries must be 0 or 1"]
        problems = []
        for i, group in enumerate(self.groups):
            active = int(bits[self.group_slice(i)].sum())
            if active == 0 and not allow_blanks:
                problems.append(f"group '{group.name}' slice is empty")
            elif active > 1:
                problems.append(f"group '{group.name}' slice has {active} bits set")
        return problems

    def labels(self, bits: np.ndarray) -> np.ndarray:
        """Per-group attribute index for each row of a (n, d_pc) category matrix."""
        bits = np.atleast_2d(bits)
        return np.stack([bits[:, self.group_slice(i)].argmax(axis=1) for i in range(self.n_groups)], axis=1)


class PersonCategory:
    """
    Binary person-category vector. Read-only; equality and hashing follow the bits.
    Query categories may leave a group slice blank (all zero).
    """
    __slots__ = ("bits", "category_id")

    def __init__(self, bits, category_id: Optional[str] = None):
        array = np.array(bits, dtype=np.int8).reshape(-1)
        array.setflags(write=False)
        self.bits = array
        self.category_id = category_id if category_id is not None else "".join(str(b) for b in array)

    @property
    def d_pc(self) -> int:
        return int(self.bits.shape[0])

    def __eq__(self, other):
        if not isinstance(other, PersonCategory):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        return f"<PersonCategory id={self.category_id}>"


def _pairs(attrs: AttributeSpec) -> List[Tuple[str, Optional[str]]]:
    if isinstance(attrs, Mapping):
        return list(attrs.items())
    return [tuple(pair) for pair in attrs]


def _encode(attrs: AttributeSpec, schema: AttributeSchema, allow_blanks: bool) -> np.ndarray:
    bits = np.zeros(schema.d_pc, dtype=np.int8)
    problems, seen = [], set()
    for group_name, attribute in _pairs(attrs):
        if group_name in seen:
            problems.append(f"group '{group_name}' given more than once")
            continue
        seen.add(group_name)
        try:
            index = schema.group_index(group_name)
        except DataError:
            problems.append(f"unknown group '{group_name}'")
            continue
        if attribute is None or attribute == "":
            if not allow_blanks:
                problems.append(f"group '{group_name}' has no attribute")
            continue
        group = schema.groups[index]
        if attribute not in group.attributes:
            problems.append(f"unknown attribute '{attribute}' in group '{group_name}'")
            continue
        bits[schema.group_slice(index).start + group.attributes.index(attribute)] = 1
    if not allow_blanks:
        for name in schema.group_names:
            if name not in seen:
                problems.append(f"missing group '{name}'")
    if problems:
        raise DataError("Cannot encode person category", problems)
    return bits


def encode_category(attrs: AttributeSpec, schema: AttributeSchema) -> PersonCategory:
    """Concatenated one-hot vector; every group must be given exactly once."""
    return PersonCategory(_encode(attrs, schema, allow_blanks=False))


def encode_query(attrs: AttributeSpec, schema: AttributeSchema) -> PersonCategory:
    """Like encode_category, but omitted or empty groups become all-zero slices."""
    bits = _encode(attrs, schema, allow_blanks=True)
    labels = []
    for i in range(schema.n_groups):
        chunk = bits[schema.group_slice(i)]
        labels.append("".join(str(b) for b in chunk) if chunk.any() else "*" * chunk.size)
    return PersonCategory(bits, category_id="".join(labels))


def decode_category(p: PersonCategory, schema: AttributeSchema, allow_blanks: bool = False) -> Dict[str, Optional[str]]:
    problems = schema.check_bits(p.bits, allow_blanks=allow_blanks)
    if problems:
        raise DataError(f"Malformed person category {p.category_id}", problems)
    decoded: Dict[str, Optional[str]] = {}
    for i, group in enumerate(schema.groups):
        chunk = p.bits[schema.group_slice(i)]
        decoded[group.name] = group.attributes[int(chunk.argmax())] if chunk.any() else None
    return decoded


def hamming_profile(p_i, p_j) -> np.ndarray:
    """Element-wise |p_i(k) - p_j(k)|."""
    a = p_i.bits if isinstance(p_i, PersonCategory) else np.asarray(p_i)
    b = p_j.bits if isinstance(p_j, PersonCategory) else np.asarray(p_j)
    if a.shape != b.shape:
        raise DimensionError(f"Category length mismatch: {a.shape} vs {b.shape}")
    return np.abs(a.astype(np.int8) - b.astype(np.int8))


def category_matrix(categories: Sequence[PersonCategory]) -> np.ndarray:
    if not categories:
        raise DataError("No categories given")
    lengths = {c.d_pc for c in categories}
    if len(lengths) != 1:
        raise DimensionError(f"Categories of different lengths: {sorted(lengths)}")
    return np.stack([c.bits for c in categories]).astype(np.float64)
