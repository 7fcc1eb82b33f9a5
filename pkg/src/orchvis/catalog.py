"""Packaged fixture catalog: ontology, scenarios, intent exemplars, rules.

Loaders accept either a packaged name ("travel_clean") or a filesystem path,
so scripts can point at ad-hoc fixture files without special casing.
"""

from __future__ import annotations

import json
import pathlib
from importlib import resources

from .agent_registry import ScenarioBundle
from .errors import UnknownScenario
from .goal_model import Ontology

_PKG = "orchvis.fixtures"


def _read(name: str) -> str:
    return resources.files(_PKG).joinpath(name).read_text("utf-8")


def load_ontology() -> Ontology:
    return Ontology.from_obj(json.loads(_read("ontology.json")))


def scenario_names() -> list[str]:
    root = resources.files(_PKG).joinpath("scenarios")
    return sorted(p.name[: -len(".json")] for p in root.iterdir()
                  if p.name.endswith(".json"))


def load_scenario(name: str) -> ScenarioBundle:
    path = pathlib.Path(name)
    if path.suffix == ".json" and path.exists():
        return ScenarioBundle.from_obj(json.loads(path.read_text("utf-8")))
    try:
        text = _read(f"scenarios/{name}.json")
    except FileNotFoundError:
        raise UnknownScenario(
            f"no scenario {name!r}; packaged: {', '.join(scenario_names())}",
            scenario=name,
        ) from None
    return ScenarioBundle.from_obj(json.loads(text))


def load_intent_exemplars() -> list[dict]:
    """Exemplar (task_text, document) pairs, in fixture order."""
    return json.loads(_read("intents.json"))["exemplars"]


def extractor_rules_path() -> pathlib.Path:
    return pathlib.Path(str(resources.files(_PKG).joinpath("extractor_rules.json")))
