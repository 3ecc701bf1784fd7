"""Template grammar for small synthetic article/headline corpora.

Each article describes a product launch plus a distractor. The headline
template is drawn independently of the article, so a model that does not
see the phrase cannot know which facts the headline mentions or in what
order. The given phrase is one of the headline's slot fillers, which puts
it at varied positions.
"""

from __future__ import annotations

import numpy as np

from .corpus import RawExample

COMPANIES = ["Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Stark", "Wayne", "Tyrell", "Cyberdyne",
             "Soylent", "Wonka"]
PRODUCTS = ["parfait", "robot", "phone", "tablet", "drone", "camera", "sneaker", "coffee", "lamp", "scooter",
            "kettle", "guitar"]
ADJECTIVES = ["special", "new", "limited", "smart", "classic", "tiny", "solar", "premium"]
CITIES = ["Kyoto", "Osaka", "Tokyo", "Nagoya", "Sapporo", "Kobe", "Fukuoka", "Sendai", "Nara", "Yokohama"]
MONTHS = ["January", "February", "March", "April", "May", "June", "July", "August", "September", "October"]
VERBS = [("launches", "launched"), ("unveils", "unveiled"), ("sells", "sold"), ("ships", "shipped"),
         ("debuts", "debuted")]

ARTICLE = ("{company} said on Monday it {verb_past} a {adj} {product} in {city} . "
           "The {product} will be on sale until the end of {month} . "
           "Shops in {city} expect long lines . "
           "Meanwhile {company2} sells a {adj2} {product2} in {city2} .")

# (template, slots eligible to become the given phrase)
HEADLINES = [
    ("{company} {verb} {adj} {product} in {city}", ["company", "adj product", "city"]),
    ("{adj} {product} from {company} arrives in {city}", ["adj product", "company", "city"]),
    ("{city} gets {adj} {product} until {month}", ["city", "adj product", "month"]),
    ("{product} sale in {city} until end of {month}", ["product", "city", "month"]),
    ("{company} : {adj} {product} on sale until {month}", ["company", "adj product", "month"]),
    ("until {month} , {company} {product} in {city}", ["month", "company", "city"]),
]


def _pick(rng, seq, exclude=None):
    while True:
        x = seq[int(rng.integers(len(seq)))]
        if x != exclude:
            return x


def synth_example(rng: np.random.Generator) -> RawExample:
    verb, verb_past = VERBS[int(rng.integers(len(VERBS)))]
    fill = {
        "company": _pick(rng, COMPANIES),
        "product": _pick(rng, PRODUCTS),
        "adj": _pick(rng, ADJECTIVES),
        "city": _pick(rng, CITIES),
        "month": _pick(rng, MONTHS),
        "verb": verb,
        "verb_past": verb_past,
    }
    fill["company2"] = _pick(rng, COMPANIES, fill["company"])
    fill["product2"] = _pick(rng, PRODUCTS, fill["product"])
    fill["adj2"] = _pick(rng, ADJECTIVES)
    fill["city2"] = _pick(rng, CITIES, fill["city"])
    template, slots = HEADLINES[int(rng.integers(len(HEADLINES)))]
    slot = slots[int(rng.integers(len(slots)))]
    phrase = " ".join(fill[s] for s in slot.split())
    return RawExample(ARTICLE.format(**fill), template.format(**fill), phrase)


def synthesize(n: int, seed: int = 0) -> list[RawExample]:
    rng = np.random.default_rng(seed)
    return [synth_example(rng) for _ in range(n)]
