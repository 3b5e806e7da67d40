"""Regenerates the golden fixtures for the store and prompt-key tests.

Canonical text and keys are computed here without the Rust code:
template slots filled by hand, keys via hashlib.
"""
import hashlib
import json
import re

M = 3
D = 4
SUPPORT = "About {x} Category {MASK} are : {L}."
QUERY = "About {x} Category {MASK}."

SENTENCES = [
    ("t01", "The bread was  warm and crusty.", ["food_food_bread"]),
    ("t02", "Portions are tiny for the price!", ["food_portion", "food_prices"]),
    ("t03", "Our waiter forgot the order twice.", ["service_general"]),
    ("t04", "Loud music, dim lights.", ["ambience_general"]),
    ("t05", "  Great sourdough, fresh every morning ", ["food_food_bread"]),
    ("t06", "A huge plate, we could not finish it.", ["food_portion"]),
    ("t07", "Staff were friendly and quick.", ["service_general"]),
    ("t08", "Cozy corner tables by the window.", ["ambience_general"]),
    ("t09", "Too expensive for what you get.", ["food_prices"]),
    ("t10", "The baguette was stale; the server shrugged.", ["food_food_bread", "service_general"]),
]


def norm(s):
    return " ".join(s.split())


def label_text(label):
    return norm(label.replace("_", " "))


def masks():
    return " ".join(f"[MASK_{j}]" for j in range(1, M + 1))


def support(x, label):
    return SUPPORT.replace("{x}", norm(x)).replace("{MASK}", masks()).replace("{L}", label_text(label))


def query(x):
    return QUERY.replace("{x}", norm(x)).replace("{MASK}", masks())


def tokens(s):
    return re.findall(r"[0-9a-z]+|[^\s0-9a-z]", s.lower())


def offline_description(label):
    spaced = label_text(label)
    return f"Category {spaced}: opinions concerning {' '.join(tokens(spaced))}."


def key(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def h_for(k):
    digest = hashlib.sha256(("h:" + k).encode()).digest()
    vals = [(b - 128) / 64.0 for b in digest[: M * D]]
    return [vals[j * D:(j + 1) * D] for j in range(M)]


def main():
    with open("toy_corpus.jsonl", "w") as f:
        for sid, text, labels in SENTENCES:
            f.write(json.dumps({"id": sid, "text": text, "labels": labels}) + "\n")

    labels = sorted({l for _, _, ls in SENTENCES for l in ls})
    prompts = {}
    for label in labels:
        desc = offline_description(label)
        c = support(desc, label)
        prompts[c] = {"kind": "description", "text": desc, "label": label}
        for _, text, ls in SENTENCES:
            if label in ls:
                c = support(text, label)
                prompts[c] = {"kind": "support", "text": text, "label": label}
                prompts[query(text)] = {"kind": "query", "text": text, "label": None}

    with open("prompt_keys.jsonl", "w") as f:
        for c in sorted(prompts):
            row = dict(prompts[c], canonical=c, key=key(c))
            f.write(json.dumps(row) + "\n")

    with open("toy_store.jsonl", "w") as f:
        f.write(json.dumps({"format": "lgp-embed", "version": 1, "d": D, "m": M, "encoder": "toy-hash"}) + "\n")
        for k in sorted(key(c) for c in prompts):
            f.write(json.dumps({"key": k, "h": h_for(k)}) + "\n")

    with open("descriptions.jsonl", "w") as f:
        for label in labels:
            text = f"Reviews that discuss {label_text(label)} at the restaurant."
            f.write(json.dumps({"label": label, "description": text}) + "\n")


if __name__ == "__main__":
    main()
