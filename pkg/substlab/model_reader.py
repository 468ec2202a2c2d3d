import hashlib
from pathlib import Path
from typing import Any, Dict, Literal, NamedTuple, Optional, Union

import simplejson as json
from pydantic import ValidationError

from .errors import ModelError, from_validation_error
from .schema.models import (
    Alphabet,
    SubstitutionLaw,
    SubstitutionRule,
    SubstitutionSet,
    SubstitutionSystem,
    TwoBodyModel,
)
from .core.twobody import build_substitutions

TOP_LEVEL_KEYS = {"name", "description", "alphabet", "rules", "law", "twobody"}


class ModelReadResult(NamedTuple):
    """
    Output contract of the model reader.
    """
    system: SubstitutionSystem

    twobody: Optional[TwoBodyModel]  ## set when the file uses the twobody shortcut

    sha256: str

    size_bytes: int

    kind: Literal["substitution", "twobody"]


def model_path_to_system(path: Union[str, Path]) -> ModelReadResult:
    """
    Reads a model file from disk and returns the validated system and its hash.
    """
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}", field="model")
    return model_bytes_to_system(path.read_bytes())


def model_bytes_to_system(raw: bytes) -> ModelReadResult:
    try:
        data = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ModelError(f"model file is not UTF-8: {exc}", field="model") from None
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", field="model") from None
    result = model_dict_to_system(data)
    return result._replace(sha256=hashlib.sha256(raw).hexdigest(), size_bytes=len(raw))


def model_dict_to_system(data: Any) -> ModelReadResult:
    if not isinstance(data, dict):
        raise ModelError("model must be a JSON object", field="model")
    unknown = sorted(set(data) - TOP_LEVEL_KEYS)
    if unknown:
        raise ModelError(f"unknown model key {unknown[0]!r}", field=unknown[0])

    # canonical form of the parsed dict, used when the model did not come from bytes
    digest = hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()

    if "twobody" in data:
        if "rules" in data or "law" in data:
            raise ModelError("twobody shortcut excludes rules and law", field="twobody")
        model = parse_twobody(data["twobody"])
        return ModelReadResult(build_substitutions(model), model, digest, 0, "twobody")

    for key in ("alphabet", "rules", "law"):
        if key not in data:
            raise ModelError(f"missing required key {key!r}", field=key)
    alphabet = _parse_alphabet(data["alphabet"], "alphabet")
    rules = _parse_rules(data["rules"], alphabet)
    law = _parse_law(data["law"])
    try:
        system = SubstitutionSystem(
            substitutions=SubstitutionSet(alphabet=alphabet, rules=rules),
            law=law,
        )
    except ValidationError as exc:
        raise from_validation_error(exc) from None
    return ModelReadResult(system, None, digest, 0, "substitution")


def parse_twobody(block: Any) -> TwoBodyModel:
    """
    {"alphabet": [...], "permutations": {a: images of the alphabet under π_a}, "weights": [...]}
    permutations may also be a list ordered like the alphabet.
    """
    if not isinstance(block, dict):
        raise ModelError("twobody must be an object", field="twobody")
    for key in ("alphabet", "permutations", "weights"):
        if key not in block:
            raise ModelError(f"missing required key {key!r}", field=f"twobody.{key}")
    alphabet = _parse_alphabet(block["alphabet"], "twobody.alphabet")
    perms = block["permutations"]
    if isinstance(perms, dict):
        missing = [s for s in alphabet.symbols if s not in perms]
        if missing:
            raise ModelError(f"no permutation for symbol {missing[0]!r}", field="twobody.permutations")
        perms = [perms[s] for s in alphabet.symbols]
    if not isinstance(perms, list):
        raise ModelError("permutations must be an object or a list", field="twobody.permutations")
    tables = tuple(_encode(alphabet, p, f"twobody.permutations[{a}]") for a, p in enumerate(perms))
    try:
        return TwoBodyModel(alphabet=alphabet, permutations=tables, weights=tuple(block["weights"]))
    except (ValidationError, TypeError) as exc:
        if isinstance(exc, TypeError):
            raise ModelError("weights must be a list of numbers", field="twobody.weights") from None
        raise from_validation_error(exc, "twobody") from None


def _parse_alphabet(value: Any, field: str) -> Alphabet:
    if isinstance(value, str):
        value = list(value)
    if not isinstance(value, list) or not all(isinstance(s, str) for s in value):
        raise ModelError("alphabet must be a list of symbol names", field=field)
    try:
        return Alphabet(symbols=tuple(value))
    except ValidationError as exc:
        raise from_validation_error(exc, field) from None


def _encode(alphabet: Alphabet, image: Any, field: str):
    if not isinstance(image, (str, list)):
        raise ModelError("image must be a string or a list of symbol names", field=field)
    try:
        return alphabet.encode(image)
    except ModelError as exc:
        raise ModelError(str(exc), field=field) from None


def _parse_rules(value: Any, alphabet: Alphabet):
    if not isinstance(value, list) or not value:
        raise ModelError("rules must be a non-empty list", field="rules")
    rules = []
    for r, rule in enumerate(value):
        if not isinstance(rule, dict):
            raise ModelError("rule must map every symbol to its image", field=f"rules[{r}]")
        for s in alphabet.symbols:
            if s not in rule:
                raise ModelError(f"rule has no image for symbol {s!r}", field=f"rules[{r}].{s}")
        extra = sorted(set(rule) - set(alphabet.symbols))
        if extra:
            raise ModelError(f"unknown symbol {extra[0]!r}", field=f"rules[{r}]")
        images = tuple(_encode(alphabet, rule[s], f"rules[{r}].{s}") for s in alphabet.symbols)
        try:
            rules.append(SubstitutionRule(images=images))
        except ValidationError as exc:
            raise from_validation_error(exc, f"rules[{r}]") from None
    return tuple(rules)


def _parse_law(value: Any) -> SubstitutionLaw:
    if not isinstance(value, dict):
        raise ModelError("law must be an object", field="law")
    payload: Dict[str, Any] = dict(value)
    weights = payload.get("weights")
    # a bernoulli law may give its single vector unwrapped
    if isinstance(weights, list) and weights and not isinstance(weights[0], list):
        payload["weights"] = [weights]
    try:
        return SubstitutionLaw(**payload)
    except ValidationError as exc:
        raise from_validation_error(exc, "law") from None
    except TypeError:
        raise ModelError("law has malformed fields", field="law") from None
