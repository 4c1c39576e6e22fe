"""Writes the 20-document curation fixture (tests/fixtures/corpus/curate20.jsonl).

Audit against the default policy (min_images=1, tokens > 300, garbled run >= 10,
garbled fraction <= 0.5, math stripped for arxiv only), whitespace tokens:

  wiki-05   0 images                                   -> reject "images"
  wiki-09   250 tokens                                 -> reject "tokens"
  slide-13  3 paragraphs, 2 garbled (66.7% > 50%)      -> reject "garbled"
  arxiv-17  320 tokens before math stripping, 280 after -> reject "tokens"

Everything else is accepted (16 documents). Notable near-misses that pass:
  wiki-02   exactly 301 tokens
  slide-07  3 paragraphs, 1 garbled (33%)
  slide-11  2 paragraphs, 1 garbled (50%, not > 50%)
  arxiv-03  inline and block math removed, still > 300 tokens
"""
import json
import sys

WORDS = ("retrieval document figure slide query image text corpus index rank "
         "signal model layer table result method domain section").split()


def words(n, offset=0):
    return " ".join(WORDS[(offset + i) % len(WORDS)] for i in range(n))


def doc(i, domain, texts, images, queries=None):
    return {
        "id": f"{domain}-{i:02d}",
        "domain": domain,
        "texts": texts,
        "images": images,
        "queries": queries or [f"what does {domain} document {i} describe?"],
    }


GARBLED = "%%$#@!&*^%$#@!!~~"  # 17 special characters in a row
MATH_40 = "$" + " ".join(["x"] * 40) + "$"  # 40 whitespace tokens inside one span


def build():
    docs = []
    domains = ["wiki", "arxiv", "slide"]
    for i in range(1, 21):
        domain = domains[i % 3]
        if i == 5:
            d = doc(i, "wiki", [words(200, i), words(150, i + 1)], [])
        elif i == 9:
            d = doc(i, "wiki", [words(150, i), words(100, i + 1)], ["wiki-09/0.jpg"])
        elif i == 13:
            d = doc(i, "slide", [words(320, i), "noise " + GARBLED, GARBLED + " more " + GARBLED],
                    ["slide-13/0.png", "slide-13/1.png"])
        elif i == 17:
            d = doc(i, "arxiv", [words(140, i), MATH_40 + " " + words(140, i + 2)],
                    ["arxiv-17/fig1.png"])
        elif i == 2:
            d = doc(i, "wiki", [words(301, i)], ["wiki-02/0.jpg"])
        elif i == 3:
            d = doc(i, "arxiv",
                    [words(200, i) + " energy $E=mc^2$ is conserved",
                     "\\begin{equation}a+b=c\\end{equation}" + words(150, i)],
                    ["arxiv-03/fig1.png", "arxiv-03/fig2.png"],
                    ["how is energy conserved?", "why does the figure matter?"])
        elif i == 7:
            d = doc(i, "slide", [words(150, i), words(160, i + 3), "chart " + GARBLED],
                    [f"slide-07/{k}.png" for k in range(4)])
        elif i == 11:
            d = doc(i, "slide", [words(320, i), GARBLED], ["slide-11/0.png"])
        else:
            d = doc(i, domain, [words(180, i), words(160, i + 5)],
                    [f"{domain}-{i:02d}/{k}.png" for k in range(1 + i % 3)])
            d["id"] = f"{domain}-{i:02d}"
        docs.append(d)
    return docs


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/corpus/curate20.jsonl"
    with open(out, "w", encoding="utf-8") as f:
        for d in build():
            f.write(json.dumps(d, ensure_ascii=False, separators=(",", ":")) + "\n")
