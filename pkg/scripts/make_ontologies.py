"""Regenerate the bundled toy and caminfo-like ontologies.

    python scripts/make_ontologies.py

Output is deterministic; the JSON files are committed under
src/acer_lab/dialenv/data/.
"""

import itertools
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "acer_lab" / "dialenv" / "data"
INFORMABLE = ["area", "food", "description", "phone", "pricerange", "address", "postcode", "signature"]
USER_REQUESTS = ["phone", "address", "postcode"]

STREETS = ["regent street", "hills road", "mill road", "king street", "bridge street", "trumpington street", "newmarket road"]
DISHES = ["lamb stew", "green curry", "risotto", "dim sum", "fish pie", "kebab platter", "dal makhani", "paella"]


def _entity(rng, name, **fixed):
    ent = {"name": name}
    ent["description"] = f"{name} is a {fixed.get('pricerange', 'moderate')} place in the {fixed.get('area', 'centre')}"
    ent["phone"] = f"01223 {rng.integers(100000, 999999)}"
    ent["address"] = f"{rng.integers(1, 120)} {STREETS[rng.integers(len(STREETS))]}"
    ent["postcode"] = f"cb{rng.integers(1, 5)} {rng.integers(1, 9)}{chr(97 + rng.integers(26))}{chr(97 + rng.integers(26))}"
    ent["signature"] = DISHES[rng.integers(len(DISHES))]
    ent.update(fixed)
    return ent


def toy():
    rng = np.random.default_rng(1)
    areas = ["north", "centre", "south"]
    foods = ["thai", "italian", "indian"]
    prices = ["cheap", "moderate", "expensive"]
    combos = list(itertools.product(areas, foods))
    combos += [("centre", "thai"), ("north", "indian"), ("south", "italian")]
    entities = []
    for i, (area, food) in enumerate(combos):
        entities.append(_entity(rng, f"toy bistro {i + 1:02d}", area=area, food=food, pricerange=prices[i % 3]))
    return {
        "name": "toy",
        "informable": INFORMABLE,
        "constraints": ["area", "food"],
        "user_requests": USER_REQUESTS,
        "values": {"area": areas, "food": foods},
        "entities": entities,
    }


def caminfo():
    rng = np.random.default_rng(2)
    areas = ["centre", "north", "south", "east", "west"]
    foods = ["british", "chinese", "indian", "italian", "turkish", "thai", "european"]
    prices = ["cheap", "moderate", "expensive"]
    # the two restaurants of the worked example come first so that the first
    # moderate match is efes and the next alternative is anatolia
    entities = [
        _entity(rng, "efes restaurant", area="centre", food="turkish", pricerange="moderate"),
        _entity(rng, "anatolia", area="centre", food="turkish", pricerange="moderate"),
    ]
    entities[1]["phone"] = "01223 362372"
    for i, (area, food, price) in enumerate(itertools.product(areas, foods, prices)):
        if (area, food, price) == ("centre", "turkish", "moderate"):
            continue
        entities.append(_entity(rng, f"{food} house {area} {i:03d}", area=area, food=food, pricerange=price))
    return {
        "name": "caminfo",
        "informable": INFORMABLE,
        "constraints": ["area", "food", "pricerange"],
        "user_requests": USER_REQUESTS,
        "values": {"area": areas, "food": foods, "pricerange": prices},
        "entities": entities,
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (toy, caminfo):
        data = build()
        (OUT / f"{data['name']}.json").write_text(json.dumps(data, indent=1) + "\n")
        print(data["name"], len(data["entities"]), "entities")
