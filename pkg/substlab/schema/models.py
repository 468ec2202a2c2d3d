from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.validators import (
    alphabet_validator,
    image_validator,
    permutation_validator,
    probability_vector_validator,
)
from ..errors import ModelError

Word = Tuple[int, ...]  ## symbol indices; () only as an internal sentinel

LawKind = Literal["bernoulli", "periodic", "prefix-with-default"]


class Alphabet(BaseModel):  ## display names live only at the I/O boundary
    model_config = ConfigDict(frozen=True)

    symbols: Tuple[str, ...]

    @field_validator("symbols")
    @classmethod
    def _check_symbols(cls, v):
        check = alphabet_validator(v)
        if not check["valid"]:
            raise ValueError(check["error"])
        return v

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, name: str) -> int:
        try:
            return self.symbols.index(name)
        except ValueError:
            raise ModelError(f"unknown symbol {name!r}", field="alphabet") from None

    def encode(self, text: Union[str, list]) -> Word:
        """A string of single-character names, or a list of names."""
        if isinstance(text, str):
            if any(len(s) != 1 for s in self.symbols):
                raise ModelError(
                    "images must be lists of names when symbol names are longer than one character",
                    field="alphabet",
                )
            return tuple(self.index(ch) for ch in text)
        return tuple(self.index(name) for name in text)

    def decode(self, word) -> str:
        names = [self.symbols[int(s)] for s in word]
        if all(len(s) == 1 for s in self.symbols):
            return "".join(names)
        return " ".join(names)


class SubstitutionRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    images: Tuple[Word, ...]  ## images[a] = σ(a)

    @field_validator("images")
    @classmethod
    def _check_images(cls, v):
        for a, image in enumerate(v):
            if len(image) == 0:
                raise ValueError(f"image of symbol {a} is empty")
        return v

    def image(self, a: int) -> Word:
        return self.images[a]


class SubstitutionSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    alphabet: Alphabet
    rules: Tuple[SubstitutionRule, ...]

    @model_validator(mode="after")
    def _check_rules(self):
        if not self.rules:
            raise ValueError("substitution set has no rules")
        size = self.alphabet.size
        for r, rule in enumerate(self.rules):
            if len(rule.images) != size:
                raise ValueError(f"rule {r} defines {len(rule.images)} images for {size} symbols")
            for image in rule.images:
                check = image_validator(image, size)
                if not check["valid"]:
                    raise ValueError(f"rule {r}: {check['error']}")
        return self

    @property
    def size(self) -> int:
        return len(self.rules)

    @property
    def min_length(self) -> int:
        return min(len(img) for rule in self.rules for img in rule.images)

    @property
    def max_length(self) -> int:
        return max(len(img) for rule in self.rules for img in rule.images)

    @property
    def constant_length(self) -> bool:
        return self.min_length == self.max_length

    def images_of(self, a: int) -> Tuple[Word, ...]:
        return tuple(rule.images[a] for rule in self.rules)


class SubstitutionLaw(BaseModel):
    """
    Product law ν over rule sequences, restricted to three declarable families.
    Positions are 1-based throughout.
    """
    model_config = ConfigDict(frozen=True)

    kind: LawKind
    ## bernoulli: one vector; periodic: one per residue class; prefix-with-default: positions 1..k
    weights: Tuple[Tuple[float, ...], ...]
    default: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def _check_weights(self):
        if not self.weights:
            raise ValueError("law has no weight vectors")
        if self.kind == "bernoulli" and len(self.weights) != 1:
            raise ValueError("bernoulli law takes exactly one weight vector")
        if self.kind == "prefix-with-default" and self.default is None:
            raise ValueError("prefix-with-default law needs a default vector")
        if self.kind != "prefix-with-default" and self.default is not None:
            raise ValueError(f"{self.kind} law takes no default vector")
        vectors = list(self.weights) + ([self.default] if self.default is not None else [])
        width = len(vectors[0])
        for i, vec in enumerate(vectors):
            if len(vec) != width:
                raise ValueError(f"weight vector {i} has {len(vec)} entries, expected {width}")
            check = probability_vector_validator(vec, "law")
            if not check["valid"]:
                raise ValueError(f"weight vector {i}: {check['error']}")
        return self

    @property
    def n_rules(self) -> int:
        return len(self.weights[0])

    def at(self, position: int) -> Tuple[float, ...]:
        if position < 1:
            raise ModelError(f"law positions start at 1 (got {position})", field="law")
        if self.kind == "bernoulli":
            return self.weights[0]
        if self.kind == "periodic":
            return self.weights[(position - 1) % len(self.weights)]
        if position <= len(self.weights):
            return self.weights[position - 1]
        return self.default

    def distinct_laws(self) -> Tuple[Tuple[float, ...], ...]:
        """Every position law that occurs, first position first."""
        vectors = list(self.weights)
        if self.default is not None:
            vectors.append(self.default)
        return tuple(dict.fromkeys(vectors))

    def is_position_independent(self) -> bool:
        return len(self.distinct_laws()) == 1

    def matrix(self, start: int, count: int) -> np.ndarray:
        """Rows are the position laws at start, start+1, ..., start+count-1."""
        return np.array([self.at(start + i) for i in range(count)], dtype=float).reshape(count, self.n_rules)


class SubstitutionSystem(BaseModel):
    model_config = ConfigDict(frozen=True)

    substitutions: SubstitutionSet
    law: SubstitutionLaw

    @model_validator(mode="after")
    def _check_law_width(self):
        if self.law.n_rules != self.substitutions.size:
            raise ValueError(
                f"law weighs {self.law.n_rules} rules, substitution set has {self.substitutions.size}"
            )
        return self

    @property
    def alphabet(self) -> Alphabet:
        return self.substitutions.alphabet

    @property
    def alphabet_size(self) -> int:
        return self.substitutions.alphabet.size

    @property
    def rules(self) -> Tuple[SubstitutionRule, ...]:
        return self.substitutions.rules

    @property
    def image_table(self) -> Optional[np.ndarray]:
        """(|S|, |A|, L) array of images for constant-length sets, else None."""
        if not self.substitutions.constant_length:
            return None
        return np.array([list(rule.images) for rule in self.rules], dtype=np.int64)


class TwoBodyModel(BaseModel):
    """
    Permutation family {π_a} and weights p_ν, with σ_b(a) = (π_a(b), a).
    permutations[a][b] = π_a(b).
    """
    model_config = ConfigDict(frozen=True)

    alphabet: Alphabet
    permutations: Tuple[Tuple[int, ...], ...]
    weights: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_model(self):
        size = self.alphabet.size
        if len(self.permutations) != size:
            raise ValueError(f"{len(self.permutations)} permutations for {size} symbols")
        for a, table in enumerate(self.permutations):
            check = permutation_validator(table, size)
            if not check["valid"]:
                raise ValueError(f"permutation of symbol {a}: {check['error']}")
        if len(self.weights) != size:
            raise ValueError(f"{len(self.weights)} weights for {size} symbols")
        check = probability_vector_validator(self.weights, "twobody")
        if not check["valid"]:
            raise ValueError(f"weights: {check['error']}")
        return self

    @property
    def p_min(self) -> float:
        return min(self.weights)

    @property
    def p_max(self) -> float:
        return max(self.weights)

    @property
    def delta_p(self) -> float:
        return self.p_max - self.p_min


class SimulationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = Field(ge=0, lt=2**64)
    window: int = Field(ge=1)
    samples: int = Field(default=1, ge=1)
    iterations: Optional[int] = Field(default=None, ge=0)  ## None: log_{ℓ_S}(window) + mixing rounds
    initial: Union[Word, Literal["stationary-one-site"]] = "stationary-one-site"

    @field_validator("initial")
    @classmethod
    def _check_initial(cls, v):
        if v != "stationary-one-site" and len(v) == 0:
            raise ValueError("initial word is empty")
        return v
