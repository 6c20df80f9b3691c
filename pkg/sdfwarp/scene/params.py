"""Flat parameter storage for differentiable scenes.

Every differentiable quantity of a scene (radii, centers, MLP weights) lives in a
single float64 vector. SDF nodes only hold indices into it (``Slot``) or plain
constants, so gradient plumbing is identical for analytic and neural scenes.
"""

import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from sdfwarp.errors import ConfigError, NumericalError

DTYPE = torch.float64


@dataclass(frozen=True)
class Slot:
    """Reference to one entry of the parameter vector."""

    index: int


Scalar = Union[Slot, float]


@dataclass(frozen=True)
class ParamBlock:
    """A named, contiguous range of the parameter vector

    Attributes:
        name (str): Parameter name (e.g. "radius", "center", "net")
        offset (int): Index of the first entry
        shape (Tuple[int, ...]): Logical shape; () for scalars
    """

    name: str
    offset: int
    shape: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    def slots(self) -> List[Slot]:
        return [Slot(self.offset + i) for i in range(self.size)]


class ParamLayout:
    """Allocates named blocks of the flat parameter vector and resolves selectors.

    Selectors accepted by ``resolve``: an integer index, a scalar block name
    ("radius"), or a component of a block ("center[2]").
    """

    _component = re.compile(r"^(?P<name>[^\[\]]+)\[(?P<idx>\d+)\]$")

    def __init__(self):
        self.blocks: Dict[str, ParamBlock] = {}
        self.size = 0

    def allocate(self, name: str, shape: Sequence[int] = ()) -> ParamBlock:
        if name in self.blocks:
            raise ConfigError(f"Parameter '{name}' is allocated twice")
        block = ParamBlock(name=name, offset=self.size, shape=tuple(int(s) for s in shape))
        self.blocks[name] = block
        self.size += block.size
        return block

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def __getitem__(self, name: str) -> ParamBlock:
        try:
            return self.blocks[name]
        except KeyError:
            raise ConfigError(f"Unknown parameter '{name}'") from None

    def resolve(self, selector: Union[int, str]) -> int:
        if isinstance(selector, int) or (isinstance(selector, str) and selector.isdigit()):
            index = int(selector)
            if not 0 <= index < self.size:
                raise ConfigError(f"Parameter index {index} out of range [0, {self.size})")
            return index
        match = self._component.match(selector)
        if match:
            block = self[match.group("name")]
            idx = int(match.group("idx"))
            if idx >= block.size:
                raise ConfigError(f"Component {idx} out of range for '{block.name}'")
            return block.offset + idx
        block = self[selector]
        if block.size != 1:
            raise ConfigError(
                f"'{selector}' has {block.size} entries; select one, e.g. '{selector}[0]'"
            )
        return block.offset

    def name_of(self, index: int) -> str:
        for block in self.blocks.values():
            if block.offset <= index < block.offset + block.size:
                if block.size == 1 and not block.shape:
                    return block.name
                return f"{block.name}[{index - block.offset}]"
        raise ConfigError(f"Parameter index {index} is not allocated")


@dataclass
class ParamVector:
    """The scene parameter vector θ together with its layout

    Attributes:
        values (torch.Tensor): 1-D float64 tensor of length ``layout.size``
        layout (ParamLayout): Names of the blocks stored in ``values``
    """

    values: torch.Tensor
    layout: ParamLayout = field(repr=False)

    def __post_init__(self):
        self.values = torch.as_tensor(self.values, dtype=DTYPE).reshape(-1)
        if self.values.numel() != self.layout.size:
            raise ConfigError(
                f"Parameter vector has {self.values.numel()} entries, layout expects {self.layout.size}"
            )
        if not torch.isfinite(self.values).all():
            raise NumericalError("Parameter vector contains non-finite entries")

    def __len__(self) -> int:
        return self.values.numel()

    def get(self, name: str) -> torch.Tensor:
        block = self.layout[name]
        flat = self.values[block.offset : block.offset + block.size]
        return flat.reshape(block.shape) if block.shape else flat[0]

    def with_values(self, values: torch.Tensor) -> "ParamVector":
        return ParamVector(values=values.detach().clone(), layout=self.layout)

    def perturbed(self, direction: torch.Tensor, h: float) -> "ParamVector":
        return self.with_values(self.values + h * direction)

    def unit(self, selector: Union[int, str]) -> torch.Tensor:
        """One-hot θ-direction for a selector."""
        direction = torch.zeros_like(self.values)
        direction[self.layout.resolve(selector)] = 1.0
        return direction


def as_tensor(theta: Union[ParamVector, torch.Tensor, Iterable[float]]) -> torch.Tensor:
    if isinstance(theta, ParamVector):
        return theta.values
    return torch.as_tensor(theta, dtype=DTYPE)


def read(theta: torch.Tensor, ref: Scalar) -> torch.Tensor:
    if isinstance(ref, Slot):
        return theta[ref.index]
    return torch.tensor(float(ref), dtype=DTYPE)


def read_vec3(theta: torch.Tensor, refs: Sequence[Scalar]) -> torch.Tensor:
    return torch.stack([read(theta, r) for r in refs])


def ref_slots(refs: Iterable[Scalar]) -> List[int]:
    return [r.index for r in refs if isinstance(r, Slot)]


def ref_to_json(layout: ParamLayout, ref: Scalar) -> Union[str, float]:
    return layout.name_of(ref.index) if isinstance(ref, Slot) else float(ref)


def vec3_to_json(layout: ParamLayout, refs: Sequence[Scalar]) -> Union[str, List]:
    if all(isinstance(r, Slot) for r in refs):
        first = layout.name_of(refs[0].index)
        name = first.split("[")[0]
        if name in layout and layout[name].shape == (3,):
            block = layout[name]
            if [r.index for r in refs] == [block.offset + i for i in range(3)]:
                return name
    return [ref_to_json(layout, r) for r in refs]


def parse_ref(layout: ParamLayout, value, where: str) -> Scalar:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        return Slot(layout.resolve(value))
    raise ConfigError(f"{where}: expected a number or a parameter name, got {value!r}")


def parse_vec3(layout: ParamLayout, value, where: str) -> Tuple[Scalar, Scalar, Scalar]:
    if isinstance(value, str):
        block = layout[value]
        if block.shape != (3,):
            raise ConfigError(f"{where}: parameter '{value}' is not a 3-vector")
        return tuple(block.slots())
    if isinstance(value, (list, tuple)) and len(value) == 3:
        return tuple(parse_ref(layout, v, f"{where}[{i}]") for i, v in enumerate(value))
    raise ConfigError(f"{where}: expected a 3-vector or a parameter name, got {value!r}")


def blob_bytes(values: torch.Tensor) -> bytes:
    """Little-endian float64 blob with a uint64 length header."""
    array = values.detach().cpu().numpy().astype("<f8")
    return np.array([array.size], dtype="<u8").tobytes() + array.tobytes()


def blob_values(data: bytes, expected: Optional[int] = None) -> torch.Tensor:
    if len(data) < 8:
        raise ConfigError("Parameter blob is truncated")
    (length,) = np.frombuffer(data[:8], dtype="<u8")
    if len(data) != 8 + 8 * int(length):
        raise ConfigError(f"Parameter blob declares {int(length)} values but holds {(len(data) - 8) // 8}")
    if expected is not None and int(length) != expected:
        raise ConfigError(f"Parameter blob holds {int(length)} values, scene expects {expected}")
    return torch.from_numpy(np.frombuffer(data[8:], dtype="<f8").copy()).to(DTYPE)
